#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ebnet/model.hpp"
#include "ebnet/tensor.hpp"

namespace ebtest {

// fully connected ReLU stack: input(in_w) -> [fc -> relu]* -> fc(out_w).
// weights are mixed-sign; depth counts the fc layers.
ebnet::ModelBundle random_mlp(std::mt19937_64& rng, int depth, int max_width);

// fixed conv net small enough for the chain oracle:
// input 3x12x12 -> conv 6ch 3x3 pad1 -> relu -> maxpool 2x2/2 -> conv 8ch 3x3 pad1 -> relu -> fc 10
ebnet::ModelBundle small_convnet(std::mt19937_64& rng);

// ~1.3e7 MAC net for the timing criterion; attention_layer is the second pooling layer
ebnet::ModelBundle perf_convnet(std::mt19937_64& rng);

// input(4) -> fc 6 -> fc 3, mixed-sign weights; activations may go negative,
// so walks need a shift. returns the model; synth_cache fills activations directly.
ebnet::ModelBundle signed_mlp(std::mt19937_64& rng);

// three-class color detector: conv 1x1 identity -> relu -> fc 3
// (+1 on its own channel, -0.1 on the others). attention at the relu.
ebnet::ModelBundle color_detector();

struct DetectorImage {
  std::string path;
  std::string category;       // of the primary square
  int x0, y0, x1, y1;         // inclusive box of the primary square
  bool difficult;             // small square plus a distracter square
  std::string distracter;     // empty when none
  int dx0, dy0, dx1, dy1;
};

// writes 64x64 PPMs plus a dataset JSONL under dir; returns one record per image
std::vector<DetectorImage> write_detector_dataset(const std::string& dir, int n_images,
                                                  uint64_t seed);

struct BlobFixture {
  ebnet::Tensor map;          // 1 x h x w
  int x0, y0, x1, y1;         // pixels with value >= alpha * mean, alpha = 1
};

// isotropic Gaussian bump on a zero background; the analytic box is derived
// by per-pixel scan against the closed-form threshold. quantize rounds each
// value to an integer so the map survives a 16-bit image round trip unchanged.
BlobFixture gaussian_blob(int h, int w, double cy, double cx, double sigma, double peak,
                          bool quantize = false);

// serialize a model to dir as <name>.json + <name>.bin; returns the manifest path
std::string write_model(const ebnet::ModelBundle& model, const std::string& dir,
                        const std::string& name);

}  // namespace ebtest
