#pragma once

#include <string>

#include "ebnet/tensor.hpp"

namespace ebnet {

/// Reads a netpbm image (P2/P5 grayscale, P3/P6 color; 8- or 16-bit) into a
/// c x h x w tensor of raw sample values in [0, maxval].
Tensor read_pnm(const std::string& path);

/// Header-only peek: returns {channels, height, width} without decoding pixels.
std::vector<int> pnm_extents(const std::string& path);

/// 8-bit binary PGM/PPM writers for 1- and 3-channel tensors; values are
/// rounded and clamped to [0, 255].
void write_pnm8(const std::string& path, const Tensor& image);

/// 16-bit binary PGM of a 1 x h x w map, scaled so the maximum maps to 65535.
/// The pre-scaling maximum is recorded in a "# max <value>" comment so the
/// absolute scale survives the quantization.
void write_pgm16_scaled(const std::string& path, const Tensor& map);

/// Raw float dump: one header line "EBMAP <H> <W>\n" followed by h*w
/// little-endian 64-bit floats, row-major.
void write_ebmap(const std::string& path, const Tensor& map);
Tensor read_ebmap(const std::string& path);

/// Binary mask from a PGM: nonzero samples are inside. Returns 1 x h x w of 0/1.
Tensor read_mask_pgm(const std::string& path);

}  // namespace ebnet
