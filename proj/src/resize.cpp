#include "ebnet/resize.hpp"

#include <algorithm>
#include <cmath>

namespace ebnet {

double catmull_rom_weight(double s) {
  const double a = -0.5;
  s = std::abs(s);
  if (s <= 1.0) return ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0;
  if (s < 2.0) return ((a * s - 5.0 * a) * s + 8.0 * a) * s - 4.0 * a;
  return 0.0;
}

Tensor bicubic_resize(const Tensor& input, int out_h, int out_w, bool clamp_negative) {
  if (input.ndim() != 3) {
    throw ShapeMismatch("bicubic_resize expects c x h x w, got " + input.shape_str());
  }
  if (out_h < 1 || out_w < 1) throw ShapeMismatch("bicubic_resize output extents must be >= 1");

  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  Tensor out({C, out_h, out_w});

  const double sy = static_cast<double>(H) / out_h;
  const double sx = static_cast<double>(W) / out_w;

  std::vector<double> wy(4), wx(4);
  for (int y = 0; y < out_h; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(src_y));
    const double ty = src_y - y0;
    for (int t = 0; t < 4; ++t) wy[static_cast<std::size_t>(t)] = catmull_rom_weight(ty - (t - 1));
    for (int x = 0; x < out_w; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(src_x));
      const double tx = src_x - x0;
      for (int t = 0; t < 4; ++t) wx[static_cast<std::size_t>(t)] = catmull_rom_weight(tx - (t - 1));
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int ky = 0; ky < 4; ++ky) {
          const int iy = std::clamp(y0 - 1 + ky, 0, H - 1);
          double row = 0.0;
          for (int kx = 0; kx < 4; ++kx) {
            const int ix = std::clamp(x0 - 1 + kx, 0, W - 1);
            row += wx[static_cast<std::size_t>(kx)] * input.at3(c, iy, ix);
          }
          acc += wy[static_cast<std::size_t>(ky)] * row;
        }
        if (clamp_negative && acc < 0.0) acc = 0.0;
        out.at3(c, y, x) = acc;
      }
    }
  }
  return out;
}

}  // namespace ebnet
