#pragma once

#include <cstddef>
#include <functional>
#include <optional>

#include "sam/backbone.hpp"
#include "sam/tensor.hpp"

namespace sam {

enum class AttentionSource { cam, gradcam, predicted };

const char* to_string(AttentionSource source);

/// H x W importance grid over the feature-map cells.
struct AttentionMap {
  Tensor grid;
  AttentionSource source = AttentionSource::predicted;
  std::optional<std::size_t> class_used;  // empty for class-agnostic maps
};

/// Temperature-softmaxed attention; a distribution over grid cells.
struct NormalizedAttention {
  Tensor grid;
};

inline constexpr double kDefaultTemperature = 0.4;

/// CAM(y)_{ij} = w_y . phi_{ij}. No bias, no rectification. Detached.
AttentionMap cam(const Tensor& features, const ClassifierHead& head, std::size_t y);

/// Maps a feature map to class logits; any differentiable head.
using LogitsFn = std::function<Tensor(const Tensor& features)>;

/// Per-location Grad-CAM: ReLU(<dl(y)/dphi_{ij}, phi_{ij}>). The gradient is
/// taken on a detached copy of `features` in scratch buffers, so neither the
/// training graph nor any parameter gradient is touched. Detached.
AttentionMap grad_cam(const Tensor& features, const LogitsFn& logits, std::size_t y);

NormalizedAttention normalize_attention(const AttentionMap& map, double tau = kDefaultTemperature);

}  // namespace sam
