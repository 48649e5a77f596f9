#pragma once

#include <cstdint>

#include "sam/attention.hpp"
#include "sam/tensor.hpp"

namespace sam {

/// Class-agnostic projection w: a 1x1 convolution with a single filter.
struct SamProjection {
  Tensor w;  // D

  static SamProjection init(std::size_t feature_dim, std::uint64_t seed);
};

enum class TargetKind { cam, gradcam };

struct SamLossConfig {
  double tau = kDefaultTemperature;
  double lambda = 0.01;
  TargetKind target_kind = TargetKind::cam;

  void validate() const;
};

/// w^T phi at every cell; live, so gradients reach both w and phi.
AttentionMap predict_attention(const Tensor& features, const SamProjection& proj);

/// KL(normalize(predicted) || normalize(target)). The target must be detached;
/// gradient flows only through the prediction. Evaluated in log space, so it
/// stays finite when a normalized cell underflows.
Tensor sam_loss(const AttentionMap& predicted, const AttentionMap& target, const SamLossConfig& cfg);

/// ce + lambda * sam.
Tensor total_loss(const Tensor& ce, const Tensor& sam, double lambda);

}  // namespace sam
