#include "sam/attention.hpp"

#include "sam/ops.hpp"

namespace sam {

const char* to_string(AttentionSource source) {
  switch (source) {
    case AttentionSource::cam:
      return "cam";
    case AttentionSource::gradcam:
      return "gradcam";
    case AttentionSource::predicted:
      return "predicted";
  }
  return "unknown";
}

namespace {

void check_features(const Tensor& features, const char* op) {
  if (features.rank() != 3) {
    throw DimensionError(std::string(op) + ": feature map must be H x W x D, received " +
                         shape_string(features.shape()));
  }
}

}  // namespace

AttentionMap cam(const Tensor& features, const ClassifierHead& head, std::size_t y) {
  check_features(features, "cam");
  const std::size_t classes = head.weights.dim(0), d = head.weights.dim(1);
  if (y >= classes) {
    throw ParameterError("cam: class " + std::to_string(y) + " out of range for " + std::to_string(classes) +
                         " classes");
  }
  if (features.dim(2) != d) {
    throw DimensionError("cam: feature channels " + std::to_string(features.dim(2)) +
                         " do not match classifier width " + std::to_string(d));
  }
  const std::size_t h = features.dim(0), w = features.dim(1);
  const auto phi = features.values();
  const auto wy = head.weights.values().subspan(y * d, d);
  std::vector<double> grid(h * w, 0.0);
  for (std::size_t cell = 0; cell < h * w; ++cell) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += wy[c] * phi[cell * d + c];
    grid[cell] = acc;
  }
  return {Tensor::from({h, w}, std::move(grid)), AttentionSource::cam, y};
}

AttentionMap grad_cam(const Tensor& features, const LogitsFn& logits, std::size_t y) {
  check_features(features, "grad_cam");
  GradMode recording(true);
  Tensor phi = detach(features);
  phi.set_requires_grad(true);
  const Tensor scores = logits(phi);
  if (y >= scores.size()) {
    throw ParameterError("grad_cam: class " + std::to_string(y) + " out of range for " +
                         std::to_string(scores.size()) + " classes");
  }
  std::vector<double> seed(scores.size(), 0.0);
  seed[y] = 1.0;
  const std::vector<double> dphi = gradient(scores, phi, seed);

  const std::size_t h = phi.dim(0), w = phi.dim(1), d = phi.dim(2);
  const auto pv = phi.values();
  std::vector<double> grid(h * w, 0.0);
  for (std::size_t cell = 0; cell < h * w; ++cell) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += dphi[cell * d + c] * pv[cell * d + c];
    grid[cell] = acc > 0.0 ? acc : 0.0;
  }
  return {Tensor::from({h, w}, std::move(grid)), AttentionSource::gradcam, y};
}

NormalizedAttention normalize_attention(const AttentionMap& map, double tau) {
  return {ops::softmax2d_temperature(map.grid, tau)};
}

}  // namespace sam
