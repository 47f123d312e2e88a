#pragma once

// Dense rank-2 tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a node holding an Eigen row-major matrix. Every
// operation on tensors that require gradients records its inputs and a backward
// rule; backward() walks that record once in reverse topological order and then
// drops it. Scalars are 1x1 tensors.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "twigs/errors.hpp"

namespace twigs {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
  Mat value;
  Mat grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::string name;
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  void accumulate(const Mat& g);
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Mat value, bool requires_grad = false, std::string name = {});

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  Index size() const { return node_->value.size(); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->grad.size() > 0; }
  const Mat& grad() const { return node_->grad; }
  Mat& mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad = Mat::Zero(rows(), cols()); }
  void clear_grad() { node_->grad.resize(0, 0); }

  const std::string& name() const { return node_->name; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

std::string shape_string(const Mat& m);

// Recording is enabled per thread; NoGradGuard disables it for a scope so sampling
// chains do not build a backward record.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Topologically ordered record of the operations reachable from a root.
class Tape {
 public:
  explicit Tape(const Tensor& root);
  std::span<const NodePtr> nodes() const { return order_; }
  void run_backward();

 private:
  std::vector<NodePtr> order_;  // inputs precede outputs
};

// Populates grad on every requires_grad leaf reachable from the scalar loss, then
// consumes the record.
void backward(const Tensor& loss);

// --- operations --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise; one operand may be 1x1 and is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Elementwise product with a constant matrix (no gradient to the constant).
Tensor mask(const Tensor& a, const Mat& m);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor mean_pool_rows(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// 1xd row repeated n times.
Tensor broadcast_rows(const Tensor& row, Index n);
// 1x1 value repeated into an n x 1 column.
Tensor broadcast_scalar(const Tensor& v, Index n);

// Row-major reshape.
Tensor reshape(const Tensor& a, Index rows, Index cols);
// n x n matrices stacked as channels: row (i*n + j) holds entry (i,j) of each input.
Tensor stack_entries(std::span<const Tensor> mats);

// (S + S^T) / 2
Tensor symmetrize(const Tensor& a);

// Row softmax restricted to entries where allowed != 0. Each row needs at least one
// allowed entry.
Tensor masked_row_softmax(const Tensor& logits, const Mat& allowed);

}  // namespace twigs
