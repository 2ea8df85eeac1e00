#pragma once

#include "ebnet/tensor.hpp"

namespace ebnet {

/// Catmull-Rom weight (cubic convolution with a = -0.5) at distance s.
/// Interpolating: 1 at s = 0, 0 at every other integer, and the four taps of
/// any sample position sum to 1.
double catmull_rom_weight(double s);

/// Bicubic resampling of a c x h x w tensor, per channel. Pixel centers are
/// aligned (source = (dst + 0.5) * in/out - 0.5) and samples outside the grid
/// clamp to the edge. With clamp_negative the ringing below zero is cut off,
/// which keeps probability maps non-negative.
Tensor bicubic_resize(const Tensor& input, int out_h, int out_w, bool clamp_negative = false);

}  // namespace ebnet
