// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a reverse-mode tape.
//
// A Tape becomes the active tape of the constructing thread for its lifetime.
// Operations record themselves on the active tape whenever at least one input
// is tracked (a leaf with requires_grad set, or an output of an earlier
// recorded operation). Without an active tape every operation is a plain
// forward evaluation.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace attsets {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorStorage {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass reaches this leaf
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // nonzero for recorded op outputs
  std::size_t node = 0;
};

}  // namespace detail

/// Initializer for tensor_new.
struct Init {
  enum class Kind { zeros, constant, uniform };
  Kind kind = Kind::zeros;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::uint64_t seed = 0;

  static Init zeros() { return {}; }
  static Init constant(double v) { return {Kind::constant, v, 0.0, 0.0, 0}; }
  static Init uniform(double lo, double hi, std::uint64_t seed) {
    return {Kind::uniform, 0.0, lo, hi, seed};
  }
};

class Tensor {
 public:
  /// Scalar zero.
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(const Shape& shape);
  static Tensor constant(const Shape& shape, double v);
  static Tensor uniform(const Shape& shape, double lo, double hi, std::uint64_t seed);
  static Tensor scalar(double v);

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return s_->values.size(); }

  std::span<const double> values() const { return s_->values; }
  /// Mutable view of the values. Only for parameters that are not on a live tape.
  std::span<double> data() { return s_->values; }
  double at(std::size_t i) const { return s_->values.at(i); }
  double item() const;

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const double> grad() const { return s_->grad; }
  std::span<double> mutable_grad() { return s_->grad; }
  void zero_grad();
  void clear_grad() { s_->grad.clear(); }

  /// Node identifier on the tape that produced this tensor, if any.
  std::optional<std::size_t> node_id() const;

  /// Fresh storage with the same values; untracked.
  Tensor detach() const;

  bool shares_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorStorage> s) : s_(std::move(s)) {}

  std::shared_ptr<detail::TensorStorage> s_;

  friend class Tape;
  friend Tensor make_op_result(Shape, std::vector<double>, const std::vector<Tensor>&,
                               std::function<void(std::span<const double>,
                                                  std::span<std::vector<double>* const>)>);
};

/// Backward rule: receives d(loss)/d(output) and accumulates into the input
/// gradient buffers. Buffers are null for inputs that are not tracked.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

/// Builds an operation output and records it on the active tape when needed.
/// Throws NumericError if any value is non-finite.
Tensor make_op_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                      BackwardFn backward);

class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Active tape of the calling thread, or null.
  static Tape* current();

  /// Populates grad on every tracked leaf reachable from `loss`. A tape can be
  /// replayed once; run the forward pass again for another backward.
  void backward(const Tensor& loss);

  std::size_t op_count() const { return records_.size(); }
  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Record {
    std::vector<std::optional<std::size_t>> inputs;  // nullopt: untracked input
    std::size_t output;
    BackwardFn backward;
  };
  struct Node {
    std::size_t numel = 0;
    std::shared_ptr<detail::TensorStorage> storage;  // set for leaves only
  };

  std::optional<std::size_t> tracked_node(const Tensor& t);
  std::optional<std::size_t> lookup_node(const Tensor& t) const;

  std::uint64_t id_;
  Tape* previous_;
  std::vector<Node> nodes_;
  std::vector<Record> records_;
  std::unordered_map<const detail::TensorStorage*, std::size_t> leaf_nodes_;
  bool consumed_ = false;

  friend Tensor make_op_result(Shape, std::vector<double>, const std::vector<Tensor>&, BackwardFn);
};

// Operations ----------------------------------------------------------------

enum class BinaryOp { add, sub, mul };
enum class UnaryOp { exp, sigmoid, relu, tanh };

Tensor tensor_new(const Shape& shape, const Init& init);

/// [M x K] * [K x P] -> [M x P].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise op on identical shapes; either operand may be a one-element scalar.
Tensor ew_binary(BinaryOp op, const Tensor& a, const Tensor& b);
inline Tensor add(const Tensor& a, const Tensor& b) { return ew_binary(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return ew_binary(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return ew_binary(BinaryOp::mul, a, b); }

Tensor map_unary(UnaryOp op, const Tensor& a);
inline Tensor exp(const Tensor& a) { return map_unary(UnaryOp::exp, a); }
inline Tensor sigmoid(const Tensor& a) { return map_unary(UnaryOp::sigmoid, a); }
inline Tensor relu(const Tensor& a) { return map_unary(UnaryOp::relu, a); }
inline Tensor tanh(const Tensor& a) { return map_unary(UnaryOp::tanh, a); }

/// Softmax over axis 0 (the set axis), independently for every trailing slot.
/// Each column is shifted by its maximum before exponentiation.
Tensor softmax_set(const Tensor& c);

/// Sums out `axis`. Accumulation starts from the first slice and proceeds in
/// increasing index order.
Tensor reduce_sum(const Tensor& a, std::size_t axis);

/// Maximum over `axis`; the gradient goes to the first maximizing index.
Tensor reduce_max(const Tensor& a, std::size_t axis);

/// Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7].
Tensor bce_loss(const Tensor& pred, const Tensor& target);

/// Adds bias[P] to every row of a[M x P].
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor reshape(const Tensor& a, Shape shape);

/// Rows [begin, begin + count) along axis 0.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);

/// Concatenation along axis 0; trailing extents must agree.
Tensor concat_rows(std::span<const Tensor> parts);

/// [N x 1] -> [N x count] by repeating the single column.
Tensor repeat_cols(const Tensor& a, std::size_t count);

/// Backward over the active tape. `loss` must be a one-element tensor recorded on it.
void backward(const Tensor& loss);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-5);

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

namespace testing {
/// Negative-control hook for the self-test: normalizes softmax by a running
/// partial sum, which breaks both column normalization and order invariance.
void set_softmax_fault(bool on);
bool softmax_fault();
}  // namespace testing

}  // namespace attsets
