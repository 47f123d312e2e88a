#include "twigs/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace twigs {

namespace {

thread_local bool tl_grad_enabled = true;

using BackwardFn = std::function<void(TensorNode&)>;

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Mat value, std::initializer_list<const Tensor*> inputs, BackwardFn fn,
                   const char* op) {
  if (!value.allFinite()) {
    throw NumericError(std::string("non-finite result in ") + op);
  }
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(value);
  if (tl_grad_enabled && any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->backward_fn = std::move(fn);
  }
  return Tensor::from_node(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

std::string shapes_message(const char* op, const Mat& a, const Mat& b) {
  return std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b);
}

bool is_scalar(const Mat& m) { return m.rows() == 1 && m.cols() == 1; }

enum class Broadcast { None, Left, Right };

Broadcast check_elementwise(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(a, op);
  require_defined(b, op);
  const Mat& va = a.value();
  const Mat& vb = b.value();
  if (va.rows() == vb.rows() && va.cols() == vb.cols()) return Broadcast::None;
  if (is_scalar(va)) return Broadcast::Left;
  if (is_scalar(vb)) return Broadcast::Right;
  throw DimensionError(shapes_message(op, va, vb));
}

// Reduces a gradient shaped like the output to the shape of a broadcast operand.
Mat reduce_to(const Mat& g, const Mat& like) {
  if (g.rows() == like.rows() && g.cols() == like.cols()) return g;
  return Mat::Constant(1, 1, g.sum());
}

template <typename F>
Mat map_binary(const Mat& a, const Mat& b, Broadcast bc, F f) {
  switch (bc) {
    case Broadcast::Left:
      return b.unaryExpr([&](double y) { return f(a(0, 0), y); });
    case Broadcast::Right:
      return a.unaryExpr([&](double x) { return f(x, b(0, 0)); });
    default:
      return a.binaryExpr(b, f);
  }
}

Mat expand(const Mat& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return Mat::Constant(rows, cols, m(0, 0));
}

}  // namespace

void TensorNode::accumulate(const Mat& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor::Tensor(Mat value, bool requires_grad, std::string name) {
  node_ = std::make_shared<TensorNode>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->name = std::move(name);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Mat::Constant(1, 1, v), requires_grad);
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Mat::Zero(rows, cols), requires_grad);
}

double Tensor::item() const {
  if (!is_scalar(value())) throw ContractError("item(): tensor is " + shape_string(value()));
  return value()(0, 0);
}

std::string shape_string(const Mat& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

bool grad_enabled() { return tl_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

Tape::Tape(const Tensor& root) {
  // Iterative post-order DFS; parents land before children.
  std::unordered_set<const TensorNode*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  if (!root.requires_grad()) return;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Tape::run_backward() {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorNode& node = **it;
    if (node.backward_fn && node.grad.size() > 0) node.backward_fn(node);
  }
  for (const NodePtr& node : order_) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      node->parents.clear();
    }
  }
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (!is_scalar(loss.value())) {
    throw ContractError("backward(): loss must be scalar, got " + shape_string(loss.value()));
  }
  if (!loss.requires_grad()) return;
  loss.node()->accumulate(Mat::Ones(1, 1));
  Tape tape(loss);
  tape.run_backward();
}

// --- operations --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) throw DimensionError(shapes_message("matmul", a.value(), b.value()));
  NodePtr pa = a.node(), pb = b.node();
  return make_result(
      a.value() * b.value(), {&a, &b},
      [pa, pb](TensorNode& out) {
        if (pa->requires_grad) pa->accumulate(out.grad * pb->value.transpose());
        if (pb->requires_grad) pb->accumulate(pa->value.transpose() * out.grad);
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  NodePtr pa = a.node();
  return make_result(
      a.value().transpose(), {&a},
      [pa](TensorNode& out) { pa->accumulate(out.grad.transpose()); }, "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  Broadcast bc = check_elementwise("add", a, b);
  NodePtr pa = a.node(), pb = b.node();
  return make_result(
      map_binary(a.value(), b.value(), bc, [](double x, double y) { return x + y; }), {&a, &b},
      [pa, pb](TensorNode& out) {
        if (pa->requires_grad) pa->accumulate(reduce_to(out.grad, pa->value));
        if (pb->requires_grad) pb->accumulate(reduce_to(out.grad, pb->value));
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Broadcast bc = check_elementwise("sub", a, b);
  NodePtr pa = a.node(), pb = b.node();
  return make_result(
      map_binary(a.value(), b.value(), bc, [](double x, double y) { return x - y; }), {&a, &b},
      [pa, pb](TensorNode& out) {
        if (pa->requires_grad) pa->accumulate(reduce_to(out.grad, pa->value));
        if (pb->requires_grad) pb->accumulate(reduce_to(-out.grad, pb->value));
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Broadcast bc = check_elementwise("mul", a, b);
  NodePtr pa = a.node(), pb = b.node();
  return make_result(
      map_binary(a.value(), b.value(), bc, [](double x, double y) { return x * y; }), {&a, &b},
      [pa, pb](TensorNode& out) {
        const Index r = out.grad.rows(), c = out.grad.cols();
        if (pa->requires_grad) {
          Mat g = out.grad.cwiseProduct(expand(pb->value, r, c));
          pa->accumulate(reduce_to(g, pa->value));
        }
        if (pb->requires_grad) {
          Mat g = out.grad.cwiseProduct(expand(pa->value, r, c));
          pb->accumulate(reduce_to(g, pb->value));
        }
      },
      "mul");
}

Tensor scale(const Tensor& a, double s) {
  require_defined(a, "scale");
  NodePtr pa = a.node();
  return make_result(
      a.value() * s, {&a}, [pa, s](TensorNode& out) { pa->accumulate(out.grad * s); }, "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  require_defined(a, "add_scalar");
  NodePtr pa = a.node();
  return make_result(
      a.value().array() + s, {&a}, [pa](TensorNode& out) { pa->accumulate(out.grad); },
      "add_scalar");
}

Tensor tanh(const Tensor& a) {
  require_defined(a, "tanh");
  NodePtr pa = a.node();
  Mat y = a.value().array().tanh();
  return make_result(
      y, {&a},
      [pa](TensorNode& out) {
        pa->accumulate(out.grad.array() * (1.0 - out.value.array().square()));
      },
      "tanh");
}

Tensor sigmoid(const Tensor& a) {
  require_defined(a, "sigmoid");
  NodePtr pa = a.node();
  // 1/(1+e^-x) for x >= 0 and e^x/(1+e^x) otherwise, so exp never overflows
  Mat y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_result(
      y, {&a},
      [pa](TensorNode& out) {
        pa->accumulate(out.grad.array() * out.value.array() * (1.0 - out.value.array()));
      },
      "sigmoid");
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  NodePtr pa = a.node();
  return make_result(
      a.value().cwiseMax(0.0), {&a},
      [pa](TensorNode& out) {
        pa->accumulate((pa->value.array() > 0.0).select(out.grad, 0.0));
      },
      "relu");
}

Tensor exp(const Tensor& a) {
  require_defined(a, "exp");
  NodePtr pa = a.node();
  return make_result(
      a.value().array().exp(), {&a},
      [pa](TensorNode& out) { pa->accumulate(out.grad.cwiseProduct(out.value)); }, "exp");
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  if ((a.value().array() <= 0.0).any()) throw DomainError("log: nonpositive entry");
  NodePtr pa = a.node();
  return make_result(
      a.value().array().log(), {&a},
      [pa](TensorNode& out) { pa->accumulate(out.grad.cwiseQuotient(pa->value)); }, "log");
}

Tensor square(const Tensor& a) {
  require_defined(a, "square");
  NodePtr pa = a.node();
  return make_result(
      a.value().array().square(), {&a},
      [pa](TensorNode& out) { pa->accumulate(2.0 * out.grad.cwiseProduct(pa->value)); },
      "square");
}

Tensor mask(const Tensor& a, const Mat& m) {
  require_defined(a, "mask");
  if (a.rows() != m.rows() || a.cols() != m.cols()) {
    throw DimensionError(shapes_message("mask", a.value(), m));
  }
  NodePtr pa = a.node();
  return make_result(
      a.value().cwiseProduct(m), {&a},
      [pa, m](TensorNode& out) { pa->accumulate(out.grad.cwiseProduct(m)); }, "mask");
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_cols");
  require_defined(b, "concat_cols");
  if (a.rows() != b.rows()) throw DimensionError(shapes_message("concat_cols", a.value(), b.value()));
  Mat v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  NodePtr pa = a.node(), pb = b.node();
  const Index ca = a.cols(), cb = b.cols();
  return make_result(
      std::move(v), {&a, &b},
      [pa, pb, ca, cb](TensorNode& out) {
        if (pa->requires_grad) pa->accumulate(out.grad.leftCols(ca));
        if (pb->requires_grad) pb->accumulate(out.grad.rightCols(cb));
      },
      "concat_cols");
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tensor acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = concat_cols(acc, parts[i]);
  return acc;
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  require_defined(a, "slice_cols");
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_string(a.value()));
  }
  NodePtr pa = a.node();
  return make_result(
      a.value().middleCols(start, count), {&a},
      [pa, start, count](TensorNode& out) {
        Mat g = Mat::Zero(pa->value.rows(), pa->value.cols());
        g.middleCols(start, count) = out.grad;
        pa->accumulate(g);
      },
      "slice_cols");
}

Tensor mean_pool_rows(const Tensor& a) {
  require_defined(a, "mean_pool_rows");
  if (a.rows() == 0) throw ContractError("mean_pool_rows: empty input");
  NodePtr pa = a.node();
  const Index n = a.rows();
  return make_result(
      a.value().colwise().mean(), {&a},
      [pa, n](TensorNode& out) {
        pa->accumulate(out.grad.replicate(n, 1) / static_cast<double>(n));
      },
      "mean_pool_rows");
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  NodePtr pa = a.node();
  return make_result(
      Mat::Constant(1, 1, a.value().sum()), {&a},
      [pa](TensorNode& out) {
        pa->accumulate(Mat::Constant(pa->value.rows(), pa->value.cols(), out.grad(0, 0)));
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor broadcast_rows(const Tensor& row, Index n) {
  require_defined(row, "broadcast_rows");
  if (row.rows() != 1) throw DimensionError("broadcast_rows: expected a row, got " + shape_string(row.value()));
  NodePtr pr = row.node();
  return make_result(
      row.value().replicate(n, 1), {&row},
      [pr](TensorNode& out) { pr->accumulate(out.grad.colwise().sum()); }, "broadcast_rows");
}

Tensor broadcast_scalar(const Tensor& v, Index n) {
  require_defined(v, "broadcast_scalar");
  if (!is_scalar(v.value())) throw DimensionError("broadcast_scalar: expected 1x1, got " + shape_string(v.value()));
  if (n < 1) throw ContractError("broadcast_scalar: n must be >= 1");
  NodePtr pv = v.node();
  return make_result(
      Mat::Constant(n, 1, v.value()(0, 0)), {&v},
      [pv](TensorNode& out) { pv->accumulate(Mat::Constant(1, 1, out.grad.sum())); },
      "broadcast_scalar");
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  require_defined(a, "reshape");
  if (rows * cols != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.value()) + " as [" +
                         std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  NodePtr pa = a.node();
  Mat v = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return make_result(
      std::move(v), {&a},
      [pa](TensorNode& out) {
        pa->accumulate(Eigen::Map<const Mat>(out.grad.data(), pa->value.rows(), pa->value.cols()));
      },
      "reshape");
}

Tensor stack_entries(std::span<const Tensor> mats) {
  if (mats.empty()) throw ContractError("stack_entries: no operands");
  const Index r = mats[0].rows(), c = mats[0].cols();
  const Index channels = static_cast<Index>(mats.size());
  Mat v(r * c, channels);
  bool needs_grad = false;
  for (Index k = 0; k < channels; ++k) {
    const Tensor& m = mats[static_cast<std::size_t>(k)];
    require_defined(m, "stack_entries");
    if (m.rows() != r || m.cols() != c) {
      throw DimensionError(shapes_message("stack_entries", mats[0].value(), m.value()));
    }
    v.col(k) = Eigen::Map<const Eigen::VectorXd>(m.value().data(), r * c);
    needs_grad = needs_grad || m.requires_grad();
  }
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(v);
  if (grad_enabled() && needs_grad) {
    node->requires_grad = true;
    for (const Tensor& m : mats) node->parents.push_back(m.node());
    node->backward_fn = [r, c](TensorNode& out) {
      for (std::size_t k = 0; k < out.parents.size(); ++k) {
        NodePtr& p = out.parents[k];
        if (!p->requires_grad) continue;
        Eigen::VectorXd col = out.grad.col(static_cast<Index>(k));
        p->accumulate(Eigen::Map<const Mat>(col.data(), r, c));
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor symmetrize(const Tensor& a) {
  require_defined(a, "symmetrize");
  if (a.rows() != a.cols()) throw DimensionError("symmetrize: non-square " + shape_string(a.value()));
  NodePtr pa = a.node();
  Mat v = 0.5 * (a.value() + a.value().transpose());
  return make_result(
      std::move(v), {&a},
      [pa](TensorNode& out) { pa->accumulate(0.5 * (out.grad + out.grad.transpose())); },
      "symmetrize");
}

Tensor masked_row_softmax(const Tensor& logits, const Mat& allowed) {
  require_defined(logits, "masked_row_softmax");
  const Mat& z = logits.value();
  if (z.rows() != allowed.rows() || z.cols() != allowed.cols()) {
    throw DimensionError(shapes_message("masked_row_softmax", z, allowed));
  }
  Mat p = Mat::Zero(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < z.cols(); ++j) {
      if (allowed(i, j) != 0.0) mx = std::max(mx, z(i, j));
    }
    if (!std::isfinite(mx)) throw ContractError("masked_row_softmax: row " + std::to_string(i) + " has no allowed entry");
    double total = 0.0;
    for (Index j = 0; j < z.cols(); ++j) {
      if (allowed(i, j) != 0.0) {
        p(i, j) = std::exp(z(i, j) - mx);
        total += p(i, j);
      }
    }
    p.row(i) /= total;
  }
  NodePtr pl = logits.node();
  return make_result(
      std::move(p), {&logits},
      [pl](TensorNode& out) {
        // dz_ij = p_ij (g_ij - sum_k p_ik g_ik); masked entries have p = 0.
        const Mat& pv = out.value;
        Eigen::VectorXd dots = pv.cwiseProduct(out.grad).rowwise().sum();
        Mat g = pv.cwiseProduct(out.grad - dots.replicate(1, pv.cols()));
        pl->accumulate(g);
      },
      "masked_row_softmax");
}

}  // namespace twigs
