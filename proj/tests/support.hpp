#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sam/ops.hpp"
#include "sam/random.hpp"
#include "sam/tensor.hpp"

namespace sam::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Random values with |x| >= margin, so kinks at zero stay out of reach of a
// finite-difference step.
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

using ScalarFn = std::function<Tensor()>;

// Largest relative error, over `inputs`, between the backward() gradient of
// f and central differences. Each input must be a leaf that f reads. The
// denominator is floored at 1e-3 so that gradients which are zero up to
// rounding do not divide by noise.
inline double gradcheck(std::vector<Tensor> inputs, const ScalarFn& f, double h = 1e-5) {
  const Tensor out = f();
  backward(out);
  double worst = 0.0;
  for (Tensor& x : inputs) {
    std::vector<double> analytic(x.size(), 0.0);
    if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
    std::vector<double> numeric(x.size());
    {
      GradMode off(false);
      auto vals = x.mutable_values();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double keep = vals[i];
        vals[i] = keep + h;
        const double up = f().item();
        vals[i] = keep - h;
        const double down = f().item();
        vals[i] = keep;
        numeric[i] = (up - down) / (2.0 * h);
      }
    }
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
    const double denom = std::max({norm2(analytic), norm2(numeric), 1e-3});
    worst = std::max(worst, norm2(diff) / denom);
    x.clear_grad();
  }
  return worst;
}

// sum(w * t): with a fixed random w this turns any tensor into a scalar
// whose gradient exercises every entry.
inline Tensor weighted_sum(const Tensor& t, const Tensor& w) { return ops::sum(ops::mul(t, w)); }

}  // namespace sam::testing
