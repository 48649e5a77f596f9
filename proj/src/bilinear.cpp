#include "sam/bilinear.hpp"

#include <cmath>

#include "sam/ops.hpp"

namespace sam {

namespace {

using Grads = std::span<std::vector<double>* const>;

constexpr double kSqrtEpsilon = 1e-12;

}  // namespace

ProjectionBank ProjectionBank::init(std::size_t k, std::size_t feature_dim, std::uint64_t seed) {
  if (k == 0) throw ParameterError("projection bank needs at least one filter");
  return {Tensor::from({k, feature_dim}, fan_in_uniform(k * feature_dim, feature_dim, seed), true)};
}

Tensor project_attention_maps(const Tensor& features, const ProjectionBank& bank) {
  if (features.rank() != 3 || bank.weights.rank() != 2 || features.dim(2) != bank.weights.dim(1)) {
    throw DimensionError("project_attention_maps: features " + shape_string(features.shape()) +
                         " do not match bank " + shape_string(bank.weights.shape()));
  }
  const std::size_t cells = features.dim(0) * features.dim(1), d = features.dim(2), k = bank.k();
  const auto phi = features.values();
  const auto wv = bank.weights.values();
  std::vector<double> out(cells * k);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += phi[cell * d + c] * wv[p * d + c];
      out[cell * k + p] = acc;
    }
  }
  const Tensor weights = bank.weights;
  return make_op("project_attention_maps", {features.dim(0), features.dim(1), k}, std::move(out),
                 {features, weights}, [features, weights, cells, d, k](std::span<const double> g, Grads grads) {
                   const auto phi = features.values();
                   const auto wv = weights.values();
                   if (auto* gphi = grads[0]) {
                     for (std::size_t cell = 0; cell < cells; ++cell) {
                       for (std::size_t p = 0; p < k; ++p) {
                         const double gv = g[cell * k + p];
                         for (std::size_t c = 0; c < d; ++c) (*gphi)[cell * d + c] += gv * wv[p * d + c];
                       }
                     }
                   }
                   if (auto* gw = grads[1]) {
                     for (std::size_t cell = 0; cell < cells; ++cell) {
                       for (std::size_t p = 0; p < k; ++p) {
                         const double gv = g[cell * k + p];
                         for (std::size_t c = 0; c < d; ++c) (*gw)[p * d + c] += gv * phi[cell * d + c];
                       }
                     }
                   }
                 });
}

AttentionMap union_max(const Tensor& maps) {
  return {ops::channel_max(maps), AttentionSource::predicted, std::nullopt};
}

Tensor attentive_pool(const Tensor& map, const Tensor& features) {
  if (map.rank() != 2 || features.rank() != 3 || map.dim(0) != features.dim(0) || map.dim(1) != features.dim(1)) {
    throw DimensionError("attentive_pool: map " + shape_string(map.shape()) + " and features " +
                         shape_string(features.shape()) + " disagree on spatial axes 0/1");
  }
  const std::size_t h = map.dim(0), w = map.dim(1);
  return ops::reshape(bilinear_concat(ops::reshape(map, {h, w, 1}), features).f, {features.dim(2)});
}

BilinearFeature bilinear_concat(const Tensor& maps, const Tensor& features) {
  if (maps.rank() != 3 || features.rank() != 3 || maps.dim(0) != features.dim(0) ||
      maps.dim(1) != features.dim(1)) {
    throw DimensionError("bilinear_concat: maps " + shape_string(maps.shape()) + " and features " +
                         shape_string(features.shape()) + " disagree on spatial axes 0/1");
  }
  const std::size_t cells = maps.dim(0) * maps.dim(1), k = maps.dim(2), d = features.dim(2);
  const auto a = maps.values();
  const auto phi = features.values();
  std::vector<double> out(k * d, 0.0);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const double* fv = phi.data() + cell * d;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[cell * k + p];
      double* seg = out.data() + p * d;
      for (std::size_t c = 0; c < d; ++c) seg[c] += av * fv[c];
    }
  }
  return {make_op("bilinear_concat", {k * d}, std::move(out), {maps, features},
                  [maps, features, cells, k, d](std::span<const double> g, Grads grads) {
                    const auto a = maps.values();
                    const auto phi = features.values();
                    if (auto* ga = grads[0]) {
                      for (std::size_t cell = 0; cell < cells; ++cell) {
                        for (std::size_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          for (std::size_t c = 0; c < d; ++c) acc += g[p * d + c] * phi[cell * d + c];
                          (*ga)[cell * k + p] += acc;
                        }
                      }
                    }
                    if (auto* gphi = grads[1]) {
                      for (std::size_t cell = 0; cell < cells; ++cell) {
                        double* gf = gphi->data() + cell * d;
                        for (std::size_t p = 0; p < k; ++p) {
                          const double av = a[cell * k + p];
                          const double* gs = g.data() + p * d;
                          for (std::size_t c = 0; c < d; ++c) gf[c] += av * gs[c];
                        }
                      }
                    }
                  })};
}

Tensor signed_sqrt_l2(const Tensor& f) {
  const auto x = f.values();
  std::vector<double> root(x.size());
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    root[i] = std::copysign(std::sqrt(std::abs(x[i]) + kSqrtEpsilon), x[i]);
    norm_sq += root[i] * root[i];
  }
  const double norm = std::sqrt(norm_sq);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = root[i] / norm;
  std::vector<double> y = out;
  return make_op("signed_sqrt_l2", f.shape(), std::move(out), {f},
                 [f, y = std::move(y), norm](std::span<const double> g, Grads grads) {
                   const auto x = f.values();
                   double dot = 0.0;
                   for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
                   auto& gf = *grads[0];
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     // d/dr of r/|r|, then d r / d x = 1 / (2 sqrt(|x| + eps)).
                     const double dr = (g[i] - y[i] * dot) / norm;
                     gf[i] += dr / (2.0 * std::sqrt(std::abs(x[i]) + kSqrtEpsilon));
                   }
                 });
}

Tensor bilinear_logits(const Tensor& features, const ProjectionBank& bank, const ClassifierHead& head,
                       const BilinearOptions& options) {
  Tensor f = bilinear_concat(project_attention_maps(features, bank), features).f;
  if (options.normalize) f = signed_sqrt_l2(f);
  if (head.weights.dim(1) != f.size()) {
    throw DimensionError("bilinear_logits: classifier width " + std::to_string(head.weights.dim(1)) +
                         " does not match bilinear feature length " + std::to_string(f.size()));
  }
  return ops::add(ops::matvec(head.weights, f), head.bias);
}

Tensor sam_bilinear_loss(const Tensor& maps, const AttentionMap& gradcam_target, const SamLossConfig& cfg) {
  if (gradcam_target.source != AttentionSource::gradcam) {
    throw ContractError(std::string("sam_bilinear_loss: target must come from grad_cam, received ") +
                        to_string(gradcam_target.source));
  }
  return sam_loss(union_max(maps), gradcam_target, cfg);
}

}  // namespace sam
