#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "twigs/tensor.hpp"

namespace twigs {

// One JSON document: every tensor under "tensors" as {shape, data} with 17 significant
// digits, model hyperparameters under "config", anything else under "meta".
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Mat> tensors;
};

std::string format_double(double v);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace twigs
