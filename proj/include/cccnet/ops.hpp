#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cccnet/tensor.hpp"

namespace cccnet {

// Differentiable operations. Feature maps are C x H x W; dense layers take a
// vector (n) or a row batch (B x n). Shape violations throw ShapeError.

/// Stride-1 cross-correlation. weight is C_out x C_in x k x k (k odd),
/// bias has C_out entries.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t padding);

/// 2x2 max pooling with stride 2. A trailing odd row/column is dropped; ties
/// send the gradient to the first element in row-major window order.
Tensor maxpool2(const Tensor& input);

/// Affine map y = W x + b, applied row-wise for a B x n input.
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& t);
/// x for x > 0, slope * x otherwise.
Tensor leaky_relu(const Tensor& t, Scalar slope);
Tensor sigmoid(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, Scalar factor);
Tensor square(const Tensor& t);

/// Sum of every element, accumulated in double. Returns a 1-element tensor.
Tensor sum_all(const Tensor& t);

/// Stacks C_i x H x W maps along the channel axis, preserving order.
Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_channels(std::initializer_list<Tensor> parts);

/// Extracts channel `index` of a C x H x W map as a 1 x H x W map.
Tensor channel(const Tensor& t, std::size_t index);

/// Block-average downsampling of a C x H x W map. Trailing rows/columns that
/// do not fill a whole block are cropped first.
Tensor avgpool_down(const Tensor& t, std::size_t factor);

/// Mean binary cross-entropy of probabilities against {0,1} targets. p is
/// clamped to [1e-7, 1 - 1e-7]; the clamp passes no gradient.
Tensor binary_cross_entropy(const Tensor& probs, std::span<const Scalar> targets);

inline constexpr double kBceClamp = 1e-7;

}  // namespace cccnet
