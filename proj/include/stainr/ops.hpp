#pragma once

#include "stainr/tensor.hpp"

namespace stainr {

// Elementwise binary ops. `b` either matches `a` exactly or matches a's shape
// without its leading dimension, in which case it broadcasts over that
// dimension.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
/// Exact erf-based GELU: 0.5 x (1 + erf(x / sqrt 2)).
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

/// [M,K]x[K,N], [B,M,K]x[B,K,N], or [B,M,K]x[K,N] with the rhs shared.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Swaps the two trailing axes.
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Channels [start, start+count) of an [N, C, ...] tensor.
template <typename T> Tensor<T> slice_channels(const Tensor<T>& a, Index start, Index count);
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Multiplies slice i of the leading axis by factors[i % factors.numel()].
template <typename T> Tensor<T> scale_slices(const Tensor<T>& a, const Tensor<T>& factors);

/// 2-D cross-correlation, kernel size 1 or 3. `bias` may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int pad = 0);

/// Per-channel 3x3 convolution, stride 1, zero padding 1. `bias` may be undefined.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Normalizes over `axis` (negative counts from the end) with biased variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     int axis = -1, T eps = T(1e-6));

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

/// x / max(||x||, eps) along `axis`.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, int axis = -1, T eps = T(1e-8));

template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, int factor);
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, int factor);

/// Splits an [B,C,H,W] map into per-head windows of `span`x`span` pixels
/// centered on each non-overlapping `window`x`window` block. Pixels outside
/// the image read as zero. Result: [B*nW*heads, span*span, C/heads], windows
/// in row-major block order.
template <typename T>
Tensor<T> extract_windows(const Tensor<T>& x, int window, int span, int heads);

/// Inverse of extract_windows with span == window.
template <typename T>
Tensor<T> merge_windows(const Tensor<T>& windows, const Shape& image_shape, int window, int heads);

/// Row-wise hard threshold on the last axis of a probability matrix: entries
/// below `threshold` become zero and survivors are rescaled to sum to one.
template <typename T> Tensor<T> threshold_renormalize(const Tensor<T>& p, T threshold);

/// sigma(w) * sem + (1 - sigma(w))/2 * (ins + part) with a one-element w.
template <typename T>
Tensor<T> protomix(const Tensor<T>& part, const Tensor<T>& ins, const Tensor<T>& sem,
                   const Tensor<T>& w);

/// Separable "valid" filtering of every [H,W] plane of an [B,C,H,W] tensor
/// with the same 1-D kernel along both axes.
template <typename T>
Tensor<T> separable_filter_valid(const Tensor<T>& x, const std::vector<T>& kernel);

}  // namespace stainr
