#include "sam/sam_loss.hpp"

#include <algorithm>
#include <cmath>

#include "sam/backbone.hpp"
#include "sam/ops.hpp"

namespace sam {

SamProjection SamProjection::init(std::size_t feature_dim, std::uint64_t seed) {
  return {Tensor::from({feature_dim}, fan_in_uniform(feature_dim, feature_dim, seed), true)};
}

void SamLossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("sam: tau must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("sam: lambda must be non-negative");
}

AttentionMap predict_attention(const Tensor& features, const SamProjection& proj) {
  if (features.rank() != 3 || proj.w.rank() != 1 || features.dim(2) != proj.w.dim(0)) {
    throw DimensionError("predict_attention: features " + shape_string(features.shape()) +
                         " do not match projection " + shape_string(proj.w.shape()));
  }
  const std::size_t d = proj.w.dim(0);
  const Tensor filter = ops::reshape(proj.w, {1, 1, d, 1});
  const Tensor map = ops::conv2d(features, filter, 1, 0);
  return {ops::reshape(map, {features.dim(0), features.dim(1)}), AttentionSource::predicted, std::nullopt};
}

namespace {

// KL(softmax(a / tau) || softmax(g / tau)) evaluated with log-softmax, so
// cells whose probability underflows to zero cannot break the ratio.
Tensor tempered_kl(const Tensor& predicted, const Tensor& target, double tau) {
  auto log_softmax = [tau](std::span<const double> v) {
    double peak = v[0];
    for (double x : v) peak = std::max(peak, x);
    double total = 0.0;
    for (double x : v) total += std::exp((x - peak) / tau);
    const double log_z = std::log(total);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - peak) / tau - log_z;
    return out;
  };
  const auto log_a = log_softmax(predicted.values());
  const auto log_g = log_softmax(target.values());
  std::vector<double> a(log_a.size()), g(log_g.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::exp(log_a[i]);
    g[i] = std::exp(log_g[i]);
    kl += a[i] * (log_a[i] - log_g[i]);
  }
  return make_op("sam_kl", {}, {kl}, {predicted, target},
                 [a = std::move(a), g = std::move(g), log_a, log_g, kl, tau](
                     std::span<const double> grad, std::span<std::vector<double>* const> grads) {
                   if (auto* ga = grads[0]) {
                     for (std::size_t i = 0; i < a.size(); ++i) {
                       (*ga)[i] += grad[0] * a[i] * (log_a[i] - log_g[i] - kl) / tau;
                     }
                   }
                   if (auto* gg = grads[1]) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i] += grad[0] * (g[i] - a[i]) / tau;
                   }
                 });
}

}  // namespace

Tensor sam_loss(const AttentionMap& predicted, const AttentionMap& target, const SamLossConfig& cfg) {
  cfg.validate();
  if (target.grid.requires_grad()) {
    throw ContractError("sam_loss: target attention is attached to the graph; detach it first");
  }
  if (predicted.grid.shape() != target.grid.shape()) {
    throw DimensionError("sam_loss: predicted " + shape_string(predicted.grid.shape()) + " vs target " +
                         shape_string(target.grid.shape()));
  }
  return tempered_kl(predicted.grid, target.grid, cfg.tau);
}

Tensor total_loss(const Tensor& ce, const Tensor& sam, double lambda) {
  return ops::add(ce, ops::scale(sam, lambda));
}

}  // namespace sam
