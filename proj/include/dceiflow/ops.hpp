#pragma once

#include <span>

#include "dceiflow/tensor.hpp"

/// Differentiable primitives. Every function records its backward rule on
/// the active tape when at least one input requires a gradient. Shape
/// mismatches throw std::invalid_argument.
namespace dceiflow::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, float value);
Tensor scale(const Tensor& x, float factor);
/// x^exponent for x > 0; throws for x <= 0, propagates NaN.
Tensor pow_scalar(const Tensor& x, float exponent);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Sum of every element, shape {1}. Accumulates in double, row-major.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// NCHW -> N1HW, summing channels.
Tensor channel_sum(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, int begin, int end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose2d(const Tensor& x);

/// (M,K) x (K,N) -> (M,N).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation with zero padding. input (N,Ci,H,W), weight (Co,Ci,k,k),
/// bias (Co) or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// Bilinear sampling at absolute pixel positions. input (N,C,H,W),
/// coords (N,2,Ho,Wo) with channel 0 = x (column) and 1 = y (row).
/// Corners outside the image contribute zero.
Tensor grid_sample(const Tensor& input, const Tensor& coords);

/// 2x2 average pooling with stride 2 over the last two dimensions. Odd
/// extents drop the last row or column; an extent of 1 is kept.
Tensor avg_pool2(const Tensor& x);

/// Bilinear upsampling of the last two dimensions by an integer factor,
/// half-pixel centers (align_corners = false), edges clamped.
Tensor upsample_bilinear(const Tensor& x, int factor);

}  // namespace dceiflow::ops
