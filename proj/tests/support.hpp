// SPDX-License-Identifier: Apache-2.0
// Independent oracles shared by the unit tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "attsets/rng.hpp"
#include "attsets/tensor.hpp"

namespace attsets::testsupport {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(shape, lo, hi, seed);
}

/// Same shape, entries bounded away from zero (keeps relu kinks out of finite differences).
inline Tensor away_from_zero(const Shape& shape, std::uint64_t seed) {
  Tensor t = Tensor::uniform(shape, 0.1, 1.0, seed);
  Rng rng(seed, 99);
  for (double& v : t.data()) {
    if (rng.uniform01() < 0.5) v = -v;
  }
  return t;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// Reference row-major product.
inline std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                                        std::size_t k, std::size_t p) {
  std::vector<double> c(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * p + j];
      c[i * p + j] = s;
    }
  return c;
}

inline Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t row = t.numel() / t.dim(0);
  std::vector<double> out;
  for (std::size_t r : perm) {
    const auto src = t.values().subspan(r * row, row);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor(t.shape(), std::move(out));
}

/// Autodiff gradient of f at x; f must build its graph from x on the active tape.
inline std::vector<double> autodiff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0) {
  Tensor x = x0.detach();
  x.set_requires_grad(true);
  {
    Tape tape;
    tape.backward(f(x));
  }
  return {x.grad().begin(), x.grad().end()};
}

}  // namespace attsets::testsupport
