// SPDX-License-Identifier: Apache-2.0
#include "attsets/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "attsets/errors.hpp"
#include "attsets/rng.hpp"

namespace attsets {

namespace {

thread_local Tape* g_current_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};
std::atomic<bool> g_softmax_fault{false};

constexpr double kBceClamp = 1e-7;

void check_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
  }
}

// c[M x P] += a[M x K] * b[K x P]
constexpr std::size_t kColTile = 256;
constexpr std::size_t kRowBlock = 32;

// c[m x p] += a[m x k] * b[k x p]
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t p) {
  for (std::size_t i0 = 0; i0 < m; i0 += kRowBlock) {
    const std::size_t i1 = std::min(m, i0 + kRowBlock);
    for (std::size_t j0 = 0; j0 < p; j0 += kColTile) {
      const std::size_t j1 = std::min(p, j0 + kColTile);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double* brow = b + kk * p;
        for (std::size_t i = i0; i < i1; ++i) {
          const double aik = a[i * k + kk];
          if (aik == 0.0) continue;  // exact: adding a signed zero never changes crow
          double* crow = c + i * p;
          for (std::size_t j = j0; j < j1; ++j) crow[j] += aik * brow[j];
        }
      }
    }
  }
}

// c[m x k] += a[m x p] * b[k x p]^T
void gemm_nt_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t p,
                        std::size_t k) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* brow = b + kk * p;
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * p;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t j = 0;
      for (; j + 4 <= p; j += 4) {
        s0 += arow[j] * brow[j];
        s1 += arow[j + 1] * brow[j + 1];
        s2 += arow[j + 2] * brow[j + 2];
        s3 += arow[j + 3] * brow[j + 3];
      }
      for (; j < p; ++j) s0 += arow[j] * brow[j];
      c[i * k + kk] += (s0 + s1) + (s2 + s3);
    }
  }
}

// c[k x p] += a[m x k]^T * b[m x p]
void gemm_tn_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t p) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    double* crow = c + kk * p;
    for (std::size_t i = 0; i < m; ++i) {
      const double aik = a[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = b + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

// Splits a shape around `axis` into (outer, extent, inner) block sizes.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Tensor ----------------------------------------------------------------------

Tensor::Tensor() : s_(std::make_shared<detail::TensorStorage>()) { s_->values = {0.0}; }

Tensor::Tensor(Shape shape, std::vector<double> values)
    : s_(std::make_shared<detail::TensorStorage>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  s_->shape = std::move(shape);
  s_->values = std::move(values);
}

Tensor Tensor::zeros(const Shape& shape) { return tensor_new(shape, Init::zeros()); }

Tensor Tensor::constant(const Shape& shape, double v) {
  return tensor_new(shape, Init::constant(v));
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, std::uint64_t seed) {
  return tensor_new(shape, Init::uniform(lo, hi, seed));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return s_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return s_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  return *this;
}

void Tensor::zero_grad() {
  if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

std::optional<std::size_t> Tensor::node_id() const {
  if (s_->tape_id == 0) return std::nullopt;
  return s_->node;
}

Tensor Tensor::detach() const { return Tensor(s_->shape, s_->values); }

// Tape ------------------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)), previous_(g_current_tape) {
  g_current_tape = this;
}

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

std::optional<std::size_t> Tape::lookup_node(const Tensor& t) const {
  if (t.s_->tape_id == id_) return t.s_->node;
  if (auto it = leaf_nodes_.find(t.s_.get()); it != leaf_nodes_.end()) return it->second;
  return std::nullopt;
}

std::optional<std::size_t> Tape::tracked_node(const Tensor& t) {
  if (auto id = lookup_node(t)) return id;
  if (!t.s_->requires_grad) return std::nullopt;
  const std::size_t id = nodes_.size();
  nodes_.push_back({t.numel(), t.s_});
  leaf_nodes_.emplace(t.s_.get(), id);
  return id;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw ContractError("backward: tape already replayed; run the forward pass again");
  }
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  const auto root = tracked_node(loss);
  consumed_ = true;
  if (!root) return;  // detached loss: nothing reachable

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[*root] = {1.0};
  std::vector<std::vector<double>*> inputs;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& out = grads[it->output];
    if (out.empty()) continue;
    inputs.assign(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      if (!it->inputs[i]) continue;
      auto& g = grads[*it->inputs[i]];
      if (g.empty()) g.assign(nodes_[*it->inputs[i]].numel, 0.0);
      inputs[i] = &g;
    }
    it->backward(out, inputs);
    std::vector<double>().swap(out);
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    auto& storage = nodes_[id].storage;
    if (!storage) continue;
    auto& leaf_grad = storage->grad;
    if (leaf_grad.empty()) leaf_grad.assign(storage->values.size(), 0.0);
    const auto& g = grads[id];
    for (std::size_t i = 0; i < g.size(); ++i) leaf_grad[i] += g[i];
  }
  records_.clear();
}

Tensor make_op_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                      BackwardFn backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("operation produced a non-finite value");
  }
  auto storage = std::make_shared<detail::TensorStorage>();
  storage->shape = std::move(shape);
  storage->values = std::move(values);

  Tape* tape = Tape::current();
  if (tape != nullptr && !tape->consumed_) {
    std::vector<std::optional<std::size_t>> ids;
    ids.reserve(inputs.size());
    bool any = false;
    for (const auto& in : inputs) {
      ids.push_back(tape->tracked_node(in));
      any = any || ids.back().has_value();
    }
    if (any) {
      const std::size_t id = tape->nodes_.size();
      tape->nodes_.push_back({storage->values.size(), nullptr});
      storage->tape_id = tape->id_;
      storage->node = id;
      tape->records_.push_back({std::move(ids), id, std::move(backward)});
    }
  }
  return Tensor(std::move(storage));
}

// Operations --------------------------------------------------------------------

Tensor tensor_new(const Shape& shape, const Init& init) {
  check_shape(shape);
  std::vector<double> values(shape_numel(shape), 0.0);
  switch (init.kind) {
    case Init::Kind::zeros:
      break;
    case Init::Kind::constant:
      std::fill(values.begin(), values.end(), init.value);
      break;
    case Init::Kind::uniform: {
      if (!(init.lo < init.hi)) throw ContractError("uniform init requires lo < hi");
      Rng rng(init.seed);
      for (double& v : values) v = rng.uniform(init.lo, init.hi);
      break;
    }
  }
  return Tensor(shape, std::move(values));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  std::vector<double> out(m * p, 0.0);
  gemm_accumulate(a.values().data(), b.values().data(), out.data(), m, k, p);
  return make_op_result({m, p}, std::move(out), {a, b},
                        [a, b, m, k, p](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          if (in[0]) {
                            // dA = dC * B^T
                            gemm_nt_accumulate(g.data(), b.values().data(), in[0]->data(), m, p, k);
                          }
                          if (in[1]) {
                            // dB = A^T * dC
                            gemm_tn_accumulate(a.values().data(), g.data(), in[1]->data(), m, k, p);
                          }
                        });
}

Tensor ew_binary(BinaryOp op, const Tensor& a, const Tensor& b) {
  enum class Bcast { none, scalar_a, scalar_b };
  Bcast mode = Bcast::none;
  if (a.shape() != b.shape()) {
    if (b.numel() == 1) {
      mode = Bcast::scalar_b;
    } else if (a.numel() == 1) {
      mode = Bcast::scalar_a;
    } else {
      throw ShapeError("elementwise op: shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  const Shape out_shape = mode == Bcast::scalar_a ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  auto ai = [&](std::size_t i) { return mode == Bcast::scalar_a ? av[0] : av[i]; };
  auto bi = [&](std::size_t i) { return mode == Bcast::scalar_b ? bv[0] : bv[i]; };

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (op) {
      case BinaryOp::add: out[i] = ai(i) + bi(i); break;
      case BinaryOp::sub: out[i] = ai(i) - bi(i); break;
      case BinaryOp::mul: out[i] = ai(i) * bi(i); break;
    }
  }
  return make_op_result(
      out_shape, std::move(out), {a, b},
      [a, b, op, mode, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
        const auto av = a.values();
        const auto bv = b.values();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ia = mode == Bcast::scalar_a ? 0 : i;
          const std::size_t ib = mode == Bcast::scalar_b ? 0 : i;
          double da = g[i], db = g[i];
          if (op == BinaryOp::sub) db = -g[i];
          if (op == BinaryOp::mul) {
            da = g[i] * bv[ib];
            db = g[i] * av[ia];
          }
          if (in[0]) (*in[0])[ia] += da;
          if (in[1]) (*in[1])[ib] += db;
        }
      });
}

Tensor map_unary(UnaryOp op, const Tensor& a) {
  const auto x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (op) {
      case UnaryOp::exp:
        y[i] = std::exp(x[i]);
        if (!std::isfinite(y[i])) {
          throw NumericError("exp overflow at input " + std::to_string(x[i]) +
                             "; stabilize before exponentiating");
        }
        break;
      case UnaryOp::sigmoid:
        if (x[i] >= 0.0) {
          y[i] = 1.0 / (1.0 + std::exp(-x[i]));
        } else {
          const double e = std::exp(x[i]);
          y[i] = e / (1.0 + e);
        }
        break;
      case UnaryOp::relu: y[i] = x[i] > 0.0 ? x[i] : 0.0; break;
      case UnaryOp::tanh: y[i] = std::tanh(x[i]); break;
    }
  }
  auto yv = std::make_shared<std::vector<double>>(y);
  return make_op_result(a.shape(), std::move(y), {a},
                        [a, op, yv](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          auto& dx = *in[0];
                          const auto x = a.values();
                          const auto& y = *yv;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            switch (op) {
                              case UnaryOp::exp: dx[i] += g[i] * y[i]; break;
                              case UnaryOp::sigmoid: dx[i] += g[i] * y[i] * (1.0 - y[i]); break;
                              case UnaryOp::relu:
                                if (x[i] > 0.0) dx[i] += g[i];
                                break;
                              case UnaryOp::tanh: dx[i] += g[i] * (1.0 - y[i] * y[i]); break;
                            }
                          }
                        });
}

Tensor softmax_set(const Tensor& c) {
  if (c.rank() < 1) throw ShapeError("softmax_set needs a set axis");
  const std::size_t n = c.dim(0);
  const std::size_t cols = c.numel() / n;
  const auto x = c.values();
  const bool fault = g_softmax_fault.load(std::memory_order_relaxed);

  std::vector<double> s(x.size());
  for (std::size_t d = 0; d < cols; ++d) {
    double mx = x[d];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i * cols + d]);
    for (std::size_t i = 0; i < n; ++i) s[i * cols + d] = std::exp(x[i * cols + d] - mx);
    double total = s[d];
    for (std::size_t i = 1; i < n; ++i) total += s[i * cols + d];
    if (fault) {
      double partial = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        partial += s[i * cols + d];
        s[i * cols + d] /= partial;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) s[i * cols + d] /= total;
    }
  }
  auto sv = std::make_shared<std::vector<double>>(s);
  return make_op_result(c.shape(), std::move(s), {c},
                        [sv, n, cols](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          auto& dx = *in[0];
                          const auto& s = *sv;
                          for (std::size_t d = 0; d < cols; ++d) {
                            double dot = s[d] * g[d];
                            for (std::size_t i = 1; i < n; ++i) dot += s[i * cols + d] * g[i * cols + d];
                            for (std::size_t i = 0; i < n; ++i) {
                              const std::size_t k = i * cols + d;
                              dx[k] += s[k] * (g[k] - dot);
                            }
                          }
                        });
}

Tensor reduce_sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError("reduce_sum: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(a.shape()));
  }
  const AxisSplit sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto x = a.values();
  std::vector<double> out(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* base = x.data() + o * sp.extent * sp.inner;
    double* dst = out.data() + o * sp.inner;
    std::copy(base, base + sp.inner, dst);
    for (std::size_t k = 1; k < sp.extent; ++k) {
      const double* row = base + k * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  return make_op_result(std::move(out_shape), std::move(out), {a},
                        [sp](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          auto& dx = *in[0];
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t k = 0; k < sp.extent; ++k)
                              for (std::size_t i = 0; i < sp.inner; ++i)
                                dx[(o * sp.extent + k) * sp.inner + i] += g[o * sp.inner + i];
                        });
}

Tensor reduce_max(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError("reduce_max: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(a.shape()));
  }
  const AxisSplit sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto x = a.values();
  std::vector<double> out(sp.outer * sp.inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size(), 0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      double bv = x[o * sp.extent * sp.inner + i];
      for (std::size_t k = 1; k < sp.extent; ++k) {
        const double v = x[(o * sp.extent + k) * sp.inner + i];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out[o * sp.inner + i] = bv;
      (*argmax)[o * sp.inner + i] = best;
    }
  }
  return make_op_result(std::move(out_shape), std::move(out), {a},
                        [sp, argmax](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          auto& dx = *in[0];
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t i = 0; i < sp.inner; ++i) {
                              const std::size_t k = (*argmax)[o * sp.inner + i];
                              dx[(o * sp.extent + k) * sp.inner + i] += g[o * sp.inner + i];
                            }
                        });
}

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("bce_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const auto p = pred.values();
  const auto t = target.values();
  const std::size_t n = p.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
    total += -(t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc));
  }
  const double mean = total / static_cast<double>(n);
  // The clamp is treated as identity in the backward pass, evaluated at the clamped point.
  return make_op_result({}, {mean}, {pred, target},
                        [pred, target, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          const auto p = pred.values();
                          const auto t = target.values();
                          const double scale = g[0] / static_cast<double>(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            const double pc = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
                            if (in[0]) (*in[0])[i] += scale * (-t[i] / pc + (1.0 - t[i]) / (1.0 - pc));
                            if (in[1]) (*in[1])[i] += scale * (std::log(1.0 - pc) - std::log(pc));
                          }
                        });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || a.dim(1) != bias.dim(0)) {
    throw ShapeError("add_bias: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  }
  const std::size_t m = a.dim(0), p = a.dim(1);
  const auto x = a.values();
  const auto b = bias.values();
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] += b[j];
  return make_op_result(a.shape(), std::move(out), {a, bias},
                        [m, p](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          if (in[0])
                            for (std::size_t i = 0; i < m * p; ++i) (*in[0])[i] += g[i];
                          if (in[1])
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < p; ++j) (*in[1])[j] += g[i * p + j];
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  const auto x = a.values();
  return make_op_result(std::move(shape), std::vector<double>(x.begin(), x.end()), {a},
                        [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                        });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.rank() < 1 || count == 0 || begin + count > a.dim(0)) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t row = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = count;
  const auto x = a.values();
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(begin * row),
                          x.begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
  return make_op_result(std::move(shape), std::move(out), {a},
                        [begin, row](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          auto& dx = *in[0];
                          for (std::size_t i = 0; i < g.size(); ++i) dx[begin * row + i] += g[i];
                        });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ShapeError("concat_rows: inputs need a row axis");
  const Shape trailing(shape.begin() + 1, shape.end());
  std::size_t rows = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& t : parts) {
    if (t.rank() != shape.size() || !std::equal(trailing.begin(), trailing.end(), t.shape().begin() + 1)) {
      throw ShapeError("concat_rows: " + shape_str(t.shape()) + " does not match " + shape_str(shape));
    }
    offsets.push_back(out.size());
    out.insert(out.end(), t.values().begin(), t.values().end());
    rows += t.dim(0);
  }
  shape[0] = rows;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_op_result(std::move(shape), std::move(out), inputs,
                        [offsets](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          for (std::size_t k = 0; k < in.size(); ++k) {
                            if (!in[k]) continue;
                            auto& dx = *in[k];
                            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[offsets[k] + i];
                          }
                        });
}

Tensor repeat_cols(const Tensor& a, std::size_t count) {
  if (a.rank() != 2 || a.dim(1) != 1 || count == 0) {
    throw ShapeError("repeat_cols: expects [N x 1], got " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0);
  const auto x = a.values();
  std::vector<double> out(n * count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i];
  return make_op_result({n, count}, std::move(out), {a},
                        [n, count](std::span<const double> g, std::span<std::vector<double>* const> in) {
                          auto& dx = *in[0];
                          for (std::size_t i = 0; i < n; ++i) {
                            double acc = g[i * count];
                            for (std::size_t j = 1; j < count; ++j) acc += g[i * count + j];
                            dx[i] += acc;
                          }
                        });
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
  Tensor probe = x.detach();
  auto v = probe.data();
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + eps;
    const double fp = f(probe);
    v[i] = orig - eps;
    const double fm = f(probe);
    v[i] = orig;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(g));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

namespace testing {
void set_softmax_fault(bool on) { g_softmax_fault.store(on); }
bool softmax_fault() { return g_softmax_fault.load(); }
}  // namespace testing

}  // namespace attsets
