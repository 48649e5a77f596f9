#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sam/tensor.hpp"

namespace sam {

/// Plain convolutional stack: each block is a kxk convolution with stride 2
/// and "same" padding, a per-channel bias and a ReLU.
struct BackboneConfig {
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t channels = 3;
  std::vector<std::size_t> block_channels{16, 32, 64};
  std::size_t kernel_size = 3;
  std::size_t num_classes = 8;
  std::uint64_t init_seed = 0;

  /// Spatial and channel extent of the last block's output.
  Shape feature_shape() const;
  void validate() const;
};

/// Linear classifier over pooled features; row y of `weights` is w_y.
struct ClassifierHead {
  Tensor weights;  // num_classes x D
  Tensor bias;     // num_classes
};

class Backbone {
 public:
  explicit Backbone(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }

  /// Last-block activation phi(I), H x W x D.
  Tensor forward_features(const Tensor& image) const;

  std::vector<Tensor>& kernels() { return kernels_; }
  std::vector<Tensor>& biases() { return biases_; }
  const std::vector<Tensor>& kernels() const { return kernels_; }
  const std::vector<Tensor>& biases() const { return biases_; }

 private:
  BackboneConfig config_;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
};

/// Samples `count` values uniformly in +-sqrt(6 / fan_in).
std::vector<double> fan_in_uniform(std::size_t count, std::size_t fan_in, std::uint64_t seed);

ClassifierHead make_classifier_head(std::size_t num_classes, std::size_t feature_dim, std::uint64_t seed);

/// l(y) = w_y . GAP(features) + bias_y for every class y.
Tensor forward_logits(const ClassifierHead& head, const Tensor& features);

/// -ln softmax(logits)[label], stabilized with log-sum-exp.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

}  // namespace sam
