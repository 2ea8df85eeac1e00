#pragma once

#include <optional>
#include <utility>

#include "ebnet/tensor.hpp"

namespace ebnet {

/// Parameters of a 2-d convolution. A fully-connected layer is carried in the
/// same struct with a kernel of shape out x in x 1 x 1 applied to the
/// flattened input. The bias participates in the forward pass only.
struct ConvParams {
  Tensor kernel;  // out-channels x in-channels x kh x kw
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  std::optional<Tensor> bias;  // out-channels
};

struct PoolParams {
  int window_h = 2;
  int window_w = 2;
  int stride_h = 2;
  int stride_w = 2;
  int pad_h = 0;
  int pad_w = 0;
};

/// Argmax record of a max-pool: one flat input index per pooled output entry.
/// Ties resolve to the lowest flat index, so masks are reproducible.
struct PoolMask {
  std::vector<int> shape;              // pooled output shape (c x h x w)
  std::vector<std::int64_t> indices;   // flat index into the pool input
};

/// (in + 2*pad - k) / stride + 1; throws ShapeMismatch unless it divides
/// exactly and yields an extent >= 1.
int conv_output_extent(int in, int k, int stride, int pad);

Tensor conv2d_forward(const Tensor& input, const ConvParams& params);

/// Adjoint of conv2d_forward with zero bias: <conv(x), g> == <x, backward(g)>.
Tensor conv2d_backward_data(const Tensor& grad_like, const ConvParams& params,
                            const std::vector<int>& input_shape);

std::pair<Tensor, PoolMask> maxpool_forward(const Tensor& input, const PoolParams& params);

/// Fixed-divisor mean: padding contributes zeros and still counts toward the
/// window area, so every output is the same non-negative linear map of inputs.
Tensor avgpool_forward(const Tensor& input, const PoolParams& params);

/// Adjoint of avgpool_forward.
Tensor avgpool_backward_data(const Tensor& grad_like, const PoolParams& params,
                             const std::vector<int>& input_shape);

/// Across-channel response normalization:
///   out[c] = in[c] * (k + (alpha/local_size) * sum_{c' in window} in[c']^2)^(-beta)
/// with the channel window clipped at the boundaries.
Tensor lrn_forward(const Tensor& input, int local_size, double alpha, double beta, double k);

/// Elementwise division with the zero-denominator convention: wherever the
/// denominator is exactly zero the quotient is zero.
Tensor safe_div(const Tensor& num, const Tensor& den);

/// c x h x w -> 1 x h x w, summing over channels.
Tensor channel_sum(const Tensor& input);

}  // namespace ebnet
