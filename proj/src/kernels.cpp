#include "ebnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ebnet {

int conv_output_extent(int in, int k, int stride, int pad) {
  if (k < 1) throw ShapeMismatch("kernel extent must be >= 1");
  if (stride < 1) throw ShapeMismatch("stride must be >= 1");
  if (pad < 0) throw ShapeMismatch("padding must be >= 0");
  // floor division: trailing samples that do not fill a stride are dropped
  const int span = in + 2 * pad - k;
  if (span < 0) {
    throw ShapeMismatch("output size formula (" + std::to_string(in) + " + 2*" +
                        std::to_string(pad) + " - " + std::to_string(k) + ") / " +
                        std::to_string(stride) + " + 1 is not a positive integer");
  }
  return span / stride + 1;
}

namespace {

void require_3d(const Tensor& t, const char* what) {
  if (t.ndim() != 3) {
    throw ShapeMismatch(std::string(what) + " must be c x h x w, got " + t.shape_str());
  }
}

void check_conv_params(const Tensor& input, const ConvParams& p) {
  require_3d(input, "conv input");
  if (p.kernel.ndim() != 4) {
    throw ShapeMismatch("conv kernel must be o x c x kh x kw, got " + p.kernel.shape_str());
  }
  if (p.kernel.dim(1) != input.dim(0)) {
    throw ShapeMismatch("conv channel mismatch: kernel expects " +
                        std::to_string(p.kernel.dim(1)) + " input channels, input has " +
                        std::to_string(input.dim(0)));
  }
  if (p.bias && (p.bias->ndim() != 1 || p.bias->dim(0) != p.kernel.dim(0))) {
    throw ShapeMismatch("conv bias must have one entry per output channel");
  }
}

std::vector<int> conv_output_shape(const std::vector<int>& in_shape, const ConvParams& p) {
  const int oh = conv_output_extent(in_shape[1], p.kernel.dim(2), p.stride_h, p.pad_h);
  const int ow = conv_output_extent(in_shape[2], p.kernel.dim(3), p.stride_w, p.pad_w);
  return {p.kernel.dim(0), oh, ow};
}

void check_pool_params(const Tensor& input, const PoolParams& p) {
  require_3d(input, "pool input");
  if (p.pad_h >= p.window_h || p.pad_w >= p.window_w) {
    throw ShapeMismatch("pool padding must be smaller than the window");
  }
}

std::vector<int> pool_output_shape(const std::vector<int>& in_shape, const PoolParams& p) {
  const int oh = conv_output_extent(in_shape[1], p.window_h, p.stride_h, p.pad_h);
  const int ow = conv_output_extent(in_shape[2], p.window_w, p.stride_w, p.pad_w);
  return {in_shape[0], oh, ow};
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const ConvParams& p) {
  check_conv_params(input, p);
  const auto out_shape = conv_output_shape(input.shape(), p);
  Tensor out(out_shape);

  const int ic = input.dim(0), ih = input.dim(1), iw = input.dim(2);
  const int oc = out_shape[0], oh = out_shape[1], ow = out_shape[2];
  const int kh = p.kernel.dim(2), kw = p.kernel.dim(3);

  for (int o = 0; o < oc; ++o) {
    const double b = p.bias ? (*p.bias)[o] : 0.0;
    for (int y = 0; y < oh; ++y) {
      const int iy0 = y * p.stride_h - p.pad_h;
      for (int x = 0; x < ow; ++x) {
        const int ix0 = x * p.stride_w - p.pad_w;
        double acc = b;
        for (int c = 0; c < ic; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= ih) continue;  // zero padding
            const double* in_row = input.data() + (static_cast<std::int64_t>(c) * ih + iy) * iw;
            const double* k_row =
                p.kernel.data() + ((static_cast<std::int64_t>(o) * ic + c) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= iw) continue;
              acc += k_row[kx] * in_row[ix];
            }
          }
        }
        out.at3(o, y, x) = acc;
      }
    }
  }
  return out;
}

Tensor conv2d_backward_data(const Tensor& grad_like, const ConvParams& p,
                            const std::vector<int>& input_shape) {
  if (input_shape.size() != 3) {
    throw ShapeMismatch("conv backward needs a c x h x w input shape");
  }
  if (p.kernel.ndim() != 4 || p.kernel.dim(1) != input_shape[0]) {
    throw ShapeMismatch("conv backward: kernel does not match input shape " +
                        shape_to_string(input_shape));
  }
  const auto out_shape = conv_output_shape(input_shape, p);
  if (grad_like.shape() != out_shape) {
    throw ShapeMismatch("conv backward: top shape " + grad_like.shape_str() +
                        " does not match conv output " + shape_to_string(out_shape));
  }

  Tensor out(input_shape);
  const int ic = input_shape[0], ih = input_shape[1], iw = input_shape[2];
  const int oc = out_shape[0], oh = out_shape[1], ow = out_shape[2];
  const int kh = p.kernel.dim(2), kw = p.kernel.dim(3);

  // Scatter form: mirrors the forward loops, so both directions cost the same.
  for (int o = 0; o < oc; ++o) {
    for (int y = 0; y < oh; ++y) {
      const int iy0 = y * p.stride_h - p.pad_h;
      for (int x = 0; x < ow; ++x) {
        const int ix0 = x * p.stride_w - p.pad_w;
        const double g = grad_like.at3(o, y, x);
        if (g == 0.0) continue;
        for (int c = 0; c < ic; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= ih) continue;
            double* out_row = out.data() + (static_cast<std::int64_t>(c) * ih + iy) * iw;
            const double* k_row =
                p.kernel.data() + ((static_cast<std::int64_t>(o) * ic + c) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= iw) continue;
              out_row[ix] += k_row[kx] * g;
            }
          }
        }
      }
    }
  }
  return out;
}

std::pair<Tensor, PoolMask> maxpool_forward(const Tensor& input, const PoolParams& p) {
  check_pool_params(input, p);
  const auto out_shape = pool_output_shape(input.shape(), p);
  Tensor out(out_shape);
  PoolMask mask;
  mask.shape = out_shape;
  mask.indices.assign(static_cast<std::size_t>(shape_numel(out_shape)), -1);

  const int ih = input.dim(1), iw = input.dim(2);
  std::int64_t oi = 0;
  for (int c = 0; c < out_shape[0]; ++c) {
    for (int y = 0; y < out_shape[1]; ++y) {
      for (int x = 0; x < out_shape[2]; ++x, ++oi) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = -1;
        // Scanning in increasing flat order makes strict > keep the lowest index on ties.
        for (int ky = 0; ky < p.window_h; ++ky) {
          const int iy = y * p.stride_h - p.pad_h + ky;
          if (iy < 0 || iy >= ih) continue;  // padding is -inf, never selected
          for (int kx = 0; kx < p.window_w; ++kx) {
            const int ix = x * p.stride_w - p.pad_w + kx;
            if (ix < 0 || ix >= iw) continue;
            const std::int64_t idx = (static_cast<std::int64_t>(c) * ih + iy) * iw + ix;
            const double v = input[idx];
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        }
        if (best_idx < 0) throw ShapeMismatch("max-pool window contains no valid input");
        out[oi] = best;
        mask.indices[static_cast<std::size_t>(oi)] = best_idx;
      }
    }
  }
  return {std::move(out), std::move(mask)};
}

Tensor avgpool_forward(const Tensor& input, const PoolParams& p) {
  check_pool_params(input, p);
  const auto out_shape = pool_output_shape(input.shape(), p);
  Tensor out(out_shape);
  const int ih = input.dim(1), iw = input.dim(2);
  const double inv_area = 1.0 / (static_cast<double>(p.window_h) * p.window_w);

  std::int64_t oi = 0;
  for (int c = 0; c < out_shape[0]; ++c) {
    for (int y = 0; y < out_shape[1]; ++y) {
      for (int x = 0; x < out_shape[2]; ++x, ++oi) {
        double acc = 0.0;
        for (int ky = 0; ky < p.window_h; ++ky) {
          const int iy = y * p.stride_h - p.pad_h + ky;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < p.window_w; ++kx) {
            const int ix = x * p.stride_w - p.pad_w + kx;
            if (ix < 0 || ix >= iw) continue;
            acc += input.at3(c, iy, ix);
          }
        }
        out[oi] = acc * inv_area;
      }
    }
  }
  return out;
}

Tensor avgpool_backward_data(const Tensor& grad_like, const PoolParams& p,
                             const std::vector<int>& input_shape) {
  if (input_shape.size() != 3) throw ShapeMismatch("avgpool backward needs c x h x w shape");
  const auto out_shape = pool_output_shape(input_shape, p);
  if (grad_like.shape() != out_shape) {
    throw ShapeMismatch("avgpool backward: top shape " + grad_like.shape_str() +
                        " does not match pooled output " + shape_to_string(out_shape));
  }
  Tensor out(input_shape);
  const int ih = input_shape[1], iw = input_shape[2];
  const double inv_area = 1.0 / (static_cast<double>(p.window_h) * p.window_w);

  std::int64_t oi = 0;
  for (int c = 0; c < out_shape[0]; ++c) {
    for (int y = 0; y < out_shape[1]; ++y) {
      for (int x = 0; x < out_shape[2]; ++x, ++oi) {
        const double g = grad_like[oi] * inv_area;
        if (g == 0.0) continue;
        for (int ky = 0; ky < p.window_h; ++ky) {
          const int iy = y * p.stride_h - p.pad_h + ky;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < p.window_w; ++kx) {
            const int ix = x * p.stride_w - p.pad_w + kx;
            if (ix < 0 || ix >= iw) continue;
            out.at3(c, iy, ix) += g;
          }
        }
      }
    }
  }
  return out;
}

Tensor lrn_forward(const Tensor& input, int local_size, double alpha, double beta, double k) {
  require_3d(input, "lrn input");
  if (local_size < 1 || local_size % 2 == 0) {
    throw ShapeMismatch("lrn local_size must be odd and >= 1");
  }
  if (k <= 0.0) throw ShapeMismatch("lrn k must be positive");

  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int half = local_size / 2;
  Tensor out(input.shape());
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        const int c0 = std::max(0, c - half);
        const int c1 = std::min(C - 1, c + half);
        double ss = 0.0;
        for (int cc = c0; cc <= c1; ++cc) {
          const double v = input.at3(cc, y, x);
          ss += v * v;
        }
        const double scale = std::pow(k + alpha / local_size * ss, -beta);
        out.at3(c, y, x) = input.at3(c, y, x) * scale;
      }
    }
  }
  return out;
}

Tensor safe_div(const Tensor& num, const Tensor& den) {
  if (!num.same_shape(den)) {
    throw ShapeMismatch("safe_div: shape " + num.shape_str() + " vs " + den.shape_str());
  }
  Tensor out(num.shape());
  for (std::int64_t i = 0; i < num.numel(); ++i) {
    out[i] = (den[i] == 0.0) ? 0.0 : num[i] / den[i];
  }
  return out;
}

Tensor channel_sum(const Tensor& input) {
  require_3d(input, "channel_sum input");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  Tensor out({1, H, W});
  for (int c = 0; c < C; ++c) {
    const double* src = input.data() + static_cast<std::int64_t>(c) * H * W;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) out[i] += src[i];
  }
  return out;
}

}  // namespace ebnet
