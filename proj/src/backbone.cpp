#include "sam/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "sam/ops.hpp"
#include "sam/random.hpp"

namespace sam {

Shape BackboneConfig::feature_shape() const {
  std::size_t h = height, w = width;
  const std::size_t pad = kernel_size / 2;
  for (std::size_t b = 0; b < block_channels.size(); ++b) {
    h = (h + 2 * pad - kernel_size) / 2 + 1;
    w = (w + 2 * pad - kernel_size) / 2 + 1;
  }
  return {h, w, block_channels.empty() ? channels : block_channels.back()};
}

void BackboneConfig::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ParameterError("backbone: input size must be positive");
  if (block_channels.empty()) throw ParameterError("backbone: at least one block is required");
  if (std::find(block_channels.begin(), block_channels.end(), 0u) != block_channels.end()) {
    throw ParameterError("backbone: block channel counts must be positive");
  }
  if (kernel_size == 0 || kernel_size % 2 == 0) throw ParameterError("backbone: kernel size must be odd");
  if (num_classes < 2) throw ParameterError("backbone: need at least 2 classes");
  std::size_t h = height, w = width;
  const std::size_t pad = kernel_size / 2;
  for (std::size_t b = 0; b < block_channels.size(); ++b) {
    if (kernel_size > h + 2 * pad || kernel_size > w + 2 * pad) {
      throw ParameterError("backbone: input too small for block " + std::to_string(b));
    }
    h = (h + 2 * pad - kernel_size) / 2 + 1;
    w = (w + 2 * pad - kernel_size) / 2 + 1;
  }
  if (h < 2 || w < 2) {
    throw ParameterError("backbone: feature map " + shape_string(feature_shape()) +
                         " is smaller than 2x2; attention over one cell is degenerate");
  }
}

std::vector<double> fan_in_uniform(std::size_t count, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> out(count);
  for (double& v : out) v = dist(rng);
  return out;
}

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t k = config_.kernel_size;
  std::size_t cin = config_.channels;
  for (std::size_t b = 0; b < config_.block_channels.size(); ++b) {
    const std::size_t cout = config_.block_channels[b];
    const std::size_t fan_in = k * k * cin;
    kernels_.push_back(Tensor::from({k, k, cin, cout},
                                    fan_in_uniform(fan_in * cout, fan_in, derive_seed(config_.init_seed, b)), true));
    biases_.push_back(Tensor::zeros({cout}, true));
    cin = cout;
  }
}

Tensor Backbone::forward_features(const Tensor& image) const {
  const Shape expected{config_.height, config_.width, config_.channels};
  if (image.shape() != expected) {
    throw DimensionError("backbone: expected image of shape " + shape_string(expected) + ", received " +
                         shape_string(image.shape()));
  }
  Tensor x = image;
  for (std::size_t b = 0; b < kernels_.size(); ++b) {
    x = ops::relu(ops::add_channel_bias(ops::conv2d(x, kernels_[b], 2, config_.kernel_size / 2), biases_[b]));
  }
  return x;
}

ClassifierHead make_classifier_head(std::size_t num_classes, std::size_t feature_dim, std::uint64_t seed) {
  return {Tensor::from({num_classes, feature_dim}, fan_in_uniform(num_classes * feature_dim, feature_dim, seed), true),
          Tensor::zeros({num_classes}, true)};
}

Tensor forward_logits(const ClassifierHead& head, const Tensor& features) {
  if (features.rank() != 3 || features.dim(2) != head.weights.dim(1)) {
    throw DimensionError("forward_logits: features " + shape_string(features.shape()) +
                         " do not match classifier of shape " + shape_string(head.weights.shape()) +
                         " (channel axis 2 vs weight axis 1)");
  }
  return ops::add(ops::matvec(head.weights, ops::global_average_pool(features)), head.bias);
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1) throw DimensionError("cross_entropy: logits must be a vector");
  if (label >= logits.size()) {
    throw ParameterError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                         std::to_string(logits.size()) + " classes");
  }
  const auto z = logits.values();
  const double peak = *std::max_element(z.begin(), z.end());
  std::vector<double> probs(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    probs[i] = std::exp(z[i] - peak);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  const double loss = std::log(total) + peak - z[label];
  return make_op("cross_entropy", {}, {loss}, {logits},
                 [probs = std::move(probs), label](std::span<const double> g,
                                                   std::span<std::vector<double>* const> grads) {
                   auto& gl = *grads[0];
                   for (std::size_t i = 0; i < probs.size(); ++i) {
                     gl[i] += g[0] * (probs[i] - (i == label ? 1.0 : 0.0));
                   }
                 });
}

}  // namespace sam
