#include "twigs/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace twigs {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream os;
  os << "{\n\"config\": " << ckpt.config.dump() << ",\n\"meta\": " << ckpt.meta.dump()
     << ",\n\"tensors\": {";
  bool first = true;
  for (const auto& [name, m] : ckpt.tensors) {
    os << (first ? "\n" : ",\n") << nlohmann::json(name).dump() << ": {\"shape\": [" << m.rows() << ", "
       << m.cols() << "], \"data\": [";
    for (Index i = 0; i < m.size(); ++i) {
      if (i) os << ", ";
      os << format_double(m.data()[i]);
    }
    os << "]}";
    first = false;
  }
  os << "\n}\n}\n";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << os.str();
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
  Checkpoint ckpt;
  ckpt.config = doc.value("config", nlohmann::json::object());
  ckpt.meta = doc.value("meta", nlohmann::json::object());
  for (const auto& [name, entry] : doc.at("tensors").items()) {
    const auto& shape = entry.at("shape");
    const auto& data = entry.at("data");
    if (shape.size() != 2) throw ParseError("checkpoint tensor '" + name + "' is not rank 2");
    const Index r = shape[0].get<Index>(), c = shape[1].get<Index>();
    if (static_cast<Index>(data.size()) != r * c) {
      throw ParseError("checkpoint tensor '" + name + "': shape/data length mismatch");
    }
    Mat m(r, c);
    for (Index i = 0; i < r * c; ++i) m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
    ckpt.tensors.emplace(name, std::move(m));
  }
  return ckpt;
}

}  // namespace twigs
