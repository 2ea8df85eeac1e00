#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ebnet/image_io.hpp"
#include "testutil.hpp"

namespace ebtest {

using ebnet::ConvParams;
using ebnet::LayerKind;
using ebnet::LayerSpec;
using ebnet::ModelBundle;
using ebnet::Tensor;

namespace {

LayerSpec layer(std::string id, LayerKind kind, std::vector<std::string> inputs) {
  LayerSpec L;
  L.id = std::move(id);
  L.kind = kind;
  L.inputs = std::move(inputs);
  return L;
}

ConvParams random_fc(std::mt19937_64& rng, int out_n, int in_n, double w_range,
                     double b_range) {
  ConvParams cp;
  cp.kernel = random_tensor({out_n, in_n, 1, 1}, rng, -w_range, w_range);
  if (b_range > 0) cp.bias = random_tensor({out_n}, rng, -b_range, b_range);
  return cp;
}

ConvParams random_conv(std::mt19937_64& rng, int out_c, int in_c, int k, int pad,
                       double w_range, double b_range) {
  ConvParams cp;
  cp.kernel = random_tensor({out_c, in_c, k, k}, rng, -w_range, w_range);
  cp.pad_h = cp.pad_w = pad;
  if (b_range > 0) cp.bias = random_tensor({out_c}, rng, -b_range, b_range);
  return cp;
}

}  // namespace

ModelBundle random_mlp(std::mt19937_64& rng, int depth, int max_width) {
  std::uniform_int_distribution<int> width(2, max_width);
  ModelBundle m;
  LayerSpec in = layer("in", LayerKind::Input, {});
  int prev_w = width(rng);
  in.out_shape = {prev_w};
  m.layers.push_back(in);

  std::string below = "in";
  for (int d = 0; d < depth; ++d) {
    const int w = width(rng);
    const std::string fc_id = "fc" + std::to_string(d);
    m.layers.push_back(layer(fc_id, LayerKind::Fc, {below}));
    m.weights[fc_id] = random_fc(rng, w, prev_w, 1.0, 0.3);
    below = fc_id;
    if (d + 1 < depth) {
      const std::string relu_id = "relu" + std::to_string(d);
      m.layers.push_back(layer(relu_id, LayerKind::Relu, {fc_id}));
      below = relu_id;
    }
    prev_w = w;
  }
  m.output_layer = below;
  ebnet::finalize_model(m);
  return m;
}

ModelBundle small_convnet(std::mt19937_64& rng) {
  ModelBundle m;
  LayerSpec in = layer("in", LayerKind::Input, {});
  in.out_shape = {3, 12, 12};
  m.layers.push_back(in);
  m.layers.push_back(layer("conv1", LayerKind::Conv, {"in"}));
  m.weights["conv1"] = random_conv(rng, 6, 3, 3, 1, 0.5, 0.1);
  m.layers.push_back(layer("relu1", LayerKind::Relu, {"conv1"}));
  LayerSpec pool = layer("pool1", LayerKind::MaxPool, {"relu1"});
  pool.pool = {2, 2, 2, 2, 0, 0};
  m.layers.push_back(pool);
  m.layers.push_back(layer("conv2", LayerKind::Conv, {"pool1"}));
  m.weights["conv2"] = random_conv(rng, 8, 6, 3, 1, 0.5, 0.1);
  m.layers.push_back(layer("relu2", LayerKind::Relu, {"conv2"}));
  m.layers.push_back(layer("fc", LayerKind::Fc, {"relu2"}));
  m.weights["fc"] = random_fc(rng, 10, 8 * 6 * 6, 0.5, 0.1);
  m.output_layer = "fc";
  ebnet::finalize_model(m);
  return m;
}

ModelBundle perf_convnet(std::mt19937_64& rng) {
  ModelBundle m;
  LayerSpec in = layer("in", LayerKind::Input, {});
  in.out_shape = {3, 64, 64};
  m.layers.push_back(in);

  const auto block = [&](const std::string& n, const std::string& below, int out_c,
                         int in_c) {
    m.layers.push_back(layer("conv" + n, LayerKind::Conv, {below}));
    m.weights["conv" + n] = random_conv(rng, out_c, in_c, 3, 1, 0.2, 0.05);
    m.layers.push_back(layer("relu" + n, LayerKind::Relu, {"conv" + n}));
    LayerSpec pool = layer("pool" + n, LayerKind::MaxPool, {"relu" + n});
    pool.pool = {2, 2, 2, 2, 0, 0};
    m.layers.push_back(pool);
  };
  block("1", "in", 16, 3);
  block("2", "pool1", 32, 16);

  m.layers.push_back(layer("conv3", LayerKind::Conv, {"pool2"}));
  m.weights["conv3"] = random_conv(rng, 64, 32, 3, 1, 0.2, 0.05);
  m.layers.push_back(layer("relu3", LayerKind::Relu, {"conv3"}));
  m.layers.push_back(layer("fc", LayerKind::Fc, {"relu3"}));
  m.weights["fc"] = random_fc(rng, 100, 64 * 16 * 16, 0.05, 0.05);
  m.output_layer = "fc";
  m.attention_layer = "pool2";
  ebnet::finalize_model(m);
  return m;
}

ModelBundle signed_mlp(std::mt19937_64& rng) {
  ModelBundle m;
  LayerSpec in = layer("in", LayerKind::Input, {});
  in.out_shape = {4};
  m.layers.push_back(in);
  m.layers.push_back(layer("fc1", LayerKind::Fc, {"in"}));
  m.weights["fc1"] = random_fc(rng, 6, 4, 1.0, 0.2);
  m.layers.push_back(layer("fc2", LayerKind::Fc, {"fc1"}));
  m.weights["fc2"] = random_fc(rng, 3, 6, 1.0, 0.2);
  m.output_layer = "fc2";
  ebnet::finalize_model(m);
  return m;
}

ModelBundle color_detector() {
  ModelBundle m;
  LayerSpec in = layer("in", LayerKind::Input, {});
  in.out_shape = {3, 64, 64};
  m.layers.push_back(in);

  m.layers.push_back(layer("conv1", LayerKind::Conv, {"in"}));
  ConvParams id_conv;
  id_conv.kernel = Tensor({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) id_conv.kernel.at4(c, c, 0, 0) = 1.0;
  m.weights["conv1"] = id_conv;

  m.layers.push_back(layer("relu1", LayerKind::Relu, {"conv1"}));

  m.layers.push_back(layer("fc", LayerKind::Fc, {"relu1"}));
  const int plane = 64 * 64;
  ConvParams fc;
  fc.kernel = Tensor({3, 3 * plane, 1, 1});
  for (int o = 0; o < 3; ++o) {
    for (int j = 0; j < 3 * plane; ++j) {
      fc.kernel[static_cast<int64_t>(o) * 3 * plane + j] = (j / plane == o) ? 1.0 : -0.1;
    }
  }
  m.weights["fc"] = fc;

  m.output_layer = "fc";
  m.attention_layer = "relu1";
  ebnet::finalize_model(m);
  return m;
}

std::vector<DetectorImage> write_detector_dataset(const std::string& dir, int n_images,
                                                  uint64_t seed) {
  static const char* kCats[3] = {"red", "green", "blue"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> quad(0, 3);
  std::uniform_int_distribution<int> off(0, 20);  // 12 px square inside a 32 px quadrant

  std::vector<DetectorImage> out;
  std::string jsonl = "{\"categories\":[\"red\",\"green\",\"blue\"]}\n";

  for (int i = 0; i < n_images; ++i) {
    DetectorImage rec;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "img_%04d.ppm", i);
    rec.path = dir + "/" + buf;
    const int cat = i % 3;
    rec.category = kCats[cat];
    rec.difficult = (i % 2 == 1);

    const int q = quad(rng);
    rec.x0 = (q % 2) * 32 + off(rng);
    rec.y0 = (q / 2) * 32 + off(rng);
    rec.x1 = rec.x0 + 11;
    rec.y1 = rec.y0 + 11;

    Tensor img({3, 64, 64});
    const auto paint = [&img](int ch, int x0, int y0) {
      for (int y = y0; y < y0 + 12; ++y)
        for (int x = x0; x < x0 + 12; ++x) img.at3(ch, y, x) = 255.0;
    };
    paint(cat, rec.x0, rec.y0);

    std::string regions = "{\"category\":\"" + rec.category + "\",\"bbox\":[" +
                          std::to_string(rec.x0) + "," + std::to_string(rec.y0) + "," +
                          std::to_string(rec.x1) + "," + std::to_string(rec.y1) + "]}";

    if (rec.difficult) {
      const int dcat = (cat + 1 + static_cast<int>(rng() % 2)) % 3;
      rec.distracter = kCats[dcat];
      int dq = quad(rng);
      while (dq == q) dq = quad(rng);
      rec.dx0 = (dq % 2) * 32 + off(rng);
      rec.dy0 = (dq / 2) * 32 + off(rng);
      rec.dx1 = rec.dx0 + 11;
      rec.dy1 = rec.dy0 + 11;
      paint(dcat, rec.dx0, rec.dy0);
      regions += ",{\"category\":\"" + rec.distracter + "\",\"bbox\":[" +
                 std::to_string(rec.dx0) + "," + std::to_string(rec.dy0) + "," +
                 std::to_string(rec.dx1) + "," + std::to_string(rec.dy1) + "]}";
    }

    ebnet::write_pnm8(rec.path, img);
    jsonl += "{\"image\":\"";
    jsonl += buf;
    jsonl += "\",\"regions\":[" + regions + "]}\n";
    out.push_back(rec);
  }
  write_text(dir + "/dataset.jsonl", jsonl);
  return out;
}

BlobFixture gaussian_blob(int h, int w, double cy, double cx, double sigma, double peak,
                          bool quantize) {
  BlobFixture fx;
  fx.map = Tensor({1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      double v = peak * std::exp(-d2 / (2.0 * sigma * sigma));
      if (quantize) v = std::round(v);
      fx.map.at3(0, y, x) = v;
    }
  }
  const double tau = fx.map.sum() / static_cast<double>(fx.map.numel());
  fx.x0 = w;
  fx.y0 = h;
  fx.x1 = -1;
  fx.y1 = -1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (fx.map.at3(0, y, x) >= tau) {
        fx.x0 = std::min(fx.x0, x);
        fx.y0 = std::min(fx.y0, y);
        fx.x1 = std::max(fx.x1, x);
        fx.y1 = std::max(fx.y1, y);
      }
    }
  }
  return fx;
}

std::string write_model(const ebnet::ModelBundle& model, const std::string& dir,
                        const std::string& name) {
  const std::string manifest = dir + "/" + name + ".json";
  ebnet::save_model_files(model, manifest, dir + "/" + name + ".bin");
  return manifest;
}

}  // namespace ebtest
