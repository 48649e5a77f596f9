#pragma once

#include <cstddef>
#include <span>

#include "sam/tensor.hpp"

// Differentiable operations. Shapes must match exactly; there is no
// broadcasting. Feature maps are laid out H x W x C, row-major.
namespace sam::ops {

/// Cross-correlation of an HxWxCin map with kxkxCinxCout kernels.
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride = 1, std::size_t padding = 0);

/// Adds bias[c] to every cell of channel c of an HxWxC map.
Tensor add_channel_bias(const Tensor& map, const Tensor& bias);

/// Spatial mean of an HxWxD map, giving a D-vector.
Tensor global_average_pool(const Tensor& map);

/// exp(map/tau) normalized over all cells of an HxW map.
Tensor softmax2d_temperature(const Tensor& map, double tau);

/// sum_i p_i ln(p_i / q_i) over flattened distributions, with 0 ln(0/q) = 0.
Tensor kl_divergence(const Tensor& p, const Tensor& q);

/// Per-cell maximum over the channels of an HxWxK stack. Gradient goes to the
/// lowest arg-max channel.
Tensor channel_max(const Tensor& maps);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);
Tensor relu(const Tensor& t);

/// W (MxN) times x (N).
Tensor matvec(const Tensor& weights, const Tensor& x);

/// Sum of all entries, as a scalar.
Tensor sum(const Tensor& t);

/// Elementwise sum of equally shaped tensors.
Tensor add_all(std::span<const Tensor> terms);

/// Same values under a new shape with the same element count.
Tensor reshape(const Tensor& t, Shape shape);

/// Entry `index` of a flattened tensor, as a scalar.
Tensor select(const Tensor& t, std::size_t index);

}  // namespace sam::ops
