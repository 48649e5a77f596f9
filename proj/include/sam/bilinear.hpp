#pragma once

#include <cstddef>
#include <cstdint>

#include "sam/attention.hpp"
#include "sam/backbone.hpp"
#include "sam/sam_loss.hpp"
#include "sam/tensor.hpp"

namespace sam {

inline constexpr std::size_t kDefaultProjections = 16;

/// K class-agnostic 1x1 filters, one per row; each acts as a part detector.
struct ProjectionBank {
  Tensor weights;  // K x D

  std::size_t k() const { return weights.dim(0); }
  static ProjectionBank init(std::size_t k, std::size_t feature_dim, std::uint64_t seed);
};

/// Concatenated attentive poolings; segment k has length D.
struct BilinearFeature {
  Tensor f;  // D*K
};

struct BilinearOptions {
  // Signed square root followed by L2 normalization of f. Off by default.
  bool normalize = false;
};

/// maps_{ijk} = w_k . phi_{ij}; H x W x K, live.
Tensor project_attention_maps(const Tensor& features, const ProjectionBank& bank);

/// Per-cell maximum over the K maps.
AttentionMap union_max(const Tensor& maps);

/// f = sum_{ij} A_{ij} phi_{ij}.
Tensor attentive_pool(const Tensor& map, const Tensor& features);

/// cat(f_1, ..., f_K) with f_k = attentive_pool(maps[:, :, k], features).
BilinearFeature bilinear_concat(const Tensor& maps, const Tensor& features);

/// Signed square root and L2 normalization of a bilinear feature.
Tensor signed_sqrt_l2(const Tensor& f);

/// Classifier logits over the bilinear feature of `features`.
Tensor bilinear_logits(const Tensor& features, const ProjectionBank& bank, const ClassifierHead& head,
                       const BilinearOptions& options = {});

/// sam_loss(union_max(maps), target). The target must be a detached Grad-CAM map.
Tensor sam_bilinear_loss(const Tensor& maps, const AttentionMap& gradcam_target, const SamLossConfig& cfg);

}  // namespace sam
