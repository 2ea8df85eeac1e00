#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ebnet/errors.hpp"
#include "ebnet/kernels.hpp"
#include "ebnet/model.hpp"
#include "fixtures.hpp"
#include "testutil.hpp"

using ebnet::ActivationCache;
using ebnet::LayerKind;
using ebnet::ModelBundle;
using ebnet::Tensor;

namespace {

const char* kTinyManifest = R"({
  "format": "ebnet-v1",
  "layers": [
    {"id": "in", "kind": "input", "shape": [1, 2, 2]},
    {"id": "c", "kind": "conv", "inputs": ["in"],
     "weight_offset": 0, "weight_shape": [1, 1, 1, 1]}
  ],
  "output_layer": "c"
})";

}  // namespace

TEST_CASE("load_model: input + conv manifest with matching blob") {
  ModelBundle m = ebnet::load_model(kTinyManifest, {2.0});
  CHECK(m.layers.size() == 2);
  CHECK(m.layers[0].kind == LayerKind::Input);
  CHECK(m.layers[1].out_shape == std::vector<int>{1, 2, 2});
  CHECK(m.conv_params("c").kernel[0] == 2.0);
  CHECK(m.output_layer == "c");
}

TEST_CASE("load_model: dangling input reference") {
  const std::string bad = R"({
    "format": "ebnet-v1",
    "layers": [
      {"id": "in", "kind": "input", "shape": [1, 2, 2]},
      {"id": "c", "kind": "conv", "inputs": ["nowhere"],
       "weight_offset": 0, "weight_shape": [1, 1, 1, 1]}
    ],
    "output_layer": "c"
  })";
  CHECK_THROWS_AS(ebnet::load_model(bad, {1.0}), ebnet::CycleDetected);
}

TEST_CASE("load_model: forward reference counts as a cycle") {
  const std::string fwd = R"({
    "format": "ebnet-v1",
    "layers": [
      {"id": "in", "kind": "input", "shape": [4]},
      {"id": "a", "kind": "relu", "inputs": ["b"]},
      {"id": "b", "kind": "fc", "inputs": ["in"], "weight_offset": 0, "weight_shape": [2, 4]}
    ],
    "output_layer": "b"
  })";
  CHECK_THROWS_AS(ebnet::load_model(fwd, std::vector<double>(8, 0.1)),
                  ebnet::CycleDetected);
}

TEST_CASE("load_model: duplicate layer id") {
  const std::string dup = R"({
    "format": "ebnet-v1",
    "layers": [
      {"id": "in", "kind": "input", "shape": [1, 2, 2]},
      {"id": "in", "kind": "relu", "inputs": ["in"]}
    ],
    "output_layer": "in"
  })";
  CHECK_THROWS_AS(ebnet::load_model(dup, {}), ebnet::ParseError);
}

TEST_CASE("load_model: blob shorter than the offset table") {
  // kernel wants 1 value at offset 0 but the blob is empty
  CHECK_THROWS_AS(ebnet::load_model(kTinyManifest, {}), ebnet::MissingWeights);
}

TEST_CASE("load_model: unknown format and kind") {
  CHECK_THROWS_AS(ebnet::load_model(R"({"format": "other", "layers": []})", {}),
                  ebnet::ParseError);
  const std::string kind = R"({
    "format": "ebnet-v1",
    "layers": [{"id": "x", "kind": "transformer"}],
    "output_layer": "x"
  })";
  CHECK_THROWS_AS(ebnet::load_model(kind, {}), ebnet::UnsupportedLayerKind);
}

TEST_CASE("load_model: softmax must stay terminal") {
  const std::string mid = R"({
    "format": "ebnet-v1",
    "layers": [
      {"id": "in", "kind": "input", "shape": [3]},
      {"id": "sm", "kind": "softmax", "inputs": ["in"]},
      {"id": "r", "kind": "relu", "inputs": ["sm"]}
    ],
    "output_layer": "r"
  })";
  CHECK_THROWS_AS(ebnet::load_model(mid, {}), ebnet::ParseError);
}

TEST_CASE("save then reload reproduces weights bit for bit") {
  std::mt19937_64 rng(61);
  ModelBundle m = ebtest::small_convnet(rng);
  const auto [manifest, blob] = ebnet::save_model(m);
  ModelBundle back = ebnet::load_model(manifest, blob);

  REQUIRE(back.layers.size() == m.layers.size());
  for (const auto& [id, cp] : m.weights) {
    CHECK(ebtest::bit_identical(back.conv_params(id).kernel, cp.kernel));
    REQUIRE(back.conv_params(id).bias.has_value() == cp.bias.has_value());
    if (cp.bias) CHECK(ebtest::bit_identical(*back.conv_params(id).bias, *cp.bias));
  }
  // and the re-serialization is byte-identical
  const auto [manifest2, blob2] = ebnet::save_model(back);
  CHECK(manifest2 == manifest);
  CHECK(blob2 == blob);
}

TEST_CASE("save_model_files round trips through disk") {
  std::mt19937_64 rng(67);
  ModelBundle m = ebtest::random_mlp(rng, 3, 8);
  const std::string dir = ebtest::scratch_dir("model_files");
  const std::string manifest = ebtest::write_model(m, dir, "mlp");
  // weights_file in the manifest lets the loader find the blob on its own
  ModelBundle back = ebnet::load_model_files(manifest);
  for (const auto& [id, cp] : m.weights)
    CHECK(ebtest::bit_identical(back.conv_params(id).kernel, cp.kernel));
}

TEST_CASE("forward: identity conv then relu preserves a non-negative image") {
  ModelBundle m = ebnet::load_model(R"({
    "format": "ebnet-v1",
    "layers": [
      {"id": "in", "kind": "input", "shape": [1, 2, 2]},
      {"id": "c", "kind": "conv", "inputs": ["in"], "weight_offset": 0, "weight_shape": [1, 1, 1, 1]},
      {"id": "r", "kind": "relu", "inputs": ["c"]}
    ],
    "output_layer": "r"
  })", {1.0});
  Tensor img({1, 2, 2}, {0.0, 1.5, 2.0, 0.25});
  ActivationCache cache = ebnet::forward(m, img);
  CHECK(ebtest::bit_identical(cache.response("c"), img));
  CHECK(ebtest::bit_identical(cache.response("r"), img));
  CHECK(cache.input_shape == std::vector<int>{1, 2, 2});
}

TEST_CASE("forward: relu clips negatives") {
  ModelBundle m = ebnet::load_model(R"({
    "format": "ebnet-v1",
    "layers": [
      {"id": "in", "kind": "input", "shape": [3]},
      {"id": "r", "kind": "relu", "inputs": ["in"]}
    ],
    "output_layer": "r"
  })", {});
  ActivationCache cache = ebnet::forward(m, Tensor({3}, {-1.0, 0.0, 2.0}));
  const Tensor& r = cache.response("r");
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);
}

TEST_CASE("forward equals hand composition of the tensor kernels") {
  std::mt19937_64 rng(71);
  ModelBundle m = ebtest::small_convnet(rng);
  Tensor img = ebtest::random_tensor({3, 12, 12}, rng, 0.0, 1.0);
  ActivationCache cache = ebnet::forward(m, img);

  Tensor c1 = ebnet::conv2d_forward(img, m.conv_params("conv1"));
  CHECK(ebtest::bit_identical(cache.response("conv1"), c1));
  Tensor r1 = ebnet::clamp_non_negative(c1);
  CHECK(ebtest::bit_identical(cache.response("relu1"), r1));
  auto [p1, mask] = ebnet::maxpool_forward(r1, m.layer("pool1").pool);
  CHECK(ebtest::bit_identical(cache.response("pool1"), p1));
  CHECK(cache.mask("pool1").indices == mask.indices);
  Tensor c2 = ebnet::conv2d_forward(p1, m.conv_params("conv2"));
  Tensor r2 = ebnet::clamp_non_negative(c2);
  const ebnet::ConvParams& fc = m.conv_params("fc");
  Tensor flat = r2.reshaped({static_cast<int>(r2.numel()), 1, 1});
  Tensor out = ebnet::conv2d_forward(flat, fc).reshaped({10});
  CHECK(ebtest::bit_identical(cache.response("fc"), out));

  // determinism: a second run is bit-identical
  ActivationCache again = ebnet::forward(m, img);
  for (const auto& [id, t] : cache.responses)
    CHECK(ebtest::bit_identical(again.response(id), t));
}

TEST_CASE("forward: concat, flatten, dropout, avgpool, lrn, softmax") {
  const std::string manifest = R"({
    "format": "ebnet-v1",
    "layers": [
      {"id": "in", "kind": "input", "shape": [2, 2, 2]},
      {"id": "d", "kind": "dropout-identity", "inputs": ["in"]},
      {"id": "n", "kind": "lrn", "inputs": ["d"], "local_size": 1, "alpha": 0.0, "beta": 1.0, "k": 1.0},
      {"id": "cat", "kind": "concat", "inputs": ["d", "n"]},
      {"id": "ap", "kind": "avgpool", "inputs": ["cat"], "window": 2},
      {"id": "f", "kind": "flatten", "inputs": ["ap"]},
      {"id": "sm", "kind": "softmax", "inputs": ["f"]}
    ],
    "output_layer": "f"
  })";
  ModelBundle m = ebnet::load_model(manifest, {});
  std::mt19937_64 rng(73);
  Tensor img = ebtest::random_tensor({2, 2, 2}, rng, 0.0, 2.0);
  ActivationCache cache = ebnet::forward(m, img);

  CHECK(ebtest::bit_identical(cache.response("d"), img));
  // alpha = 0, k = 1 keeps lrn an identity
  CHECK(ebtest::bit_identical(cache.response("n"), img));
  const Tensor& cat = cache.response("cat");
  CHECK(cat.shape() == std::vector<int>{4, 2, 2});
  CHECK(cat.at3(0, 1, 1) == img.at3(0, 1, 1));
  CHECK(cat.at3(2, 1, 1) == img.at3(0, 1, 1));
  const Tensor& ap = cache.response("ap");
  CHECK(ap.shape() == std::vector<int>{4, 1, 1});
  CHECK(ap[0] == doctest::Approx((img[0] + img[1] + img[2] + img[3]) / 4.0).epsilon(1e-15));
  CHECK(cache.response("f").shape() == std::vector<int>{4});

  const Tensor& sm = cache.response("sm");
  CHECK(sm.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sm.shape() == std::vector<int>{4});
}

TEST_CASE("forward rejects a mis-shaped image with the layer id in the error") {
  ModelBundle m = ebnet::load_model(kTinyManifest, {1.0});
  try {
    ebnet::forward(m, Tensor({1, 3, 3}));
    FAIL("expected ShapeMismatch");
  } catch (const ebnet::ShapeMismatch& e) {
    CHECK(std::string(e.what()).find("in") != std::string::npos);
  }
}

TEST_CASE("class_signal forms") {
  std::mt19937_64 rng(79);
  ModelBundle m = ebtest::random_mlp(rng, 3, 8);
  const int out_n = m.layer(m.output_layer).out_shape[0];

  ebnet::TopDownSignal one = ebnet::class_signal(m, {0});
  CHECK(one.layer_id == m.output_layer);
  CHECK(one.values[0] == 1.0);
  CHECK(one.mass() == 1.0);

  if (out_n >= 2) {
    ebnet::TopDownSignal two = ebnet::class_signal(m, {0, 1}, {1.0, 1.0});
    CHECK(two.values[0] == 0.5);
    CHECK(two.values[1] == 0.5);
  }

  CHECK_THROWS_AS(ebnet::class_signal(m, {static_cast<int64_t>(out_n)}),
                  ebnet::IndexOutOfRange);
  CHECK_THROWS_AS(ebnet::class_signal(m, {}), ebnet::IndexOutOfRange);
  CHECK_THROWS_AS(ebnet::class_signal(m, {0}, {-1.0}), ebnet::NegativeWeight);
}

TEST_CASE("signal_from_map normalizes a spatial confidence map") {
  ModelBundle m = ebnet::load_model(R"({
    "format": "ebnet-v1",
    "layers": [
      {"id": "in", "kind": "input", "shape": [1, 7, 7]},
      {"id": "c", "kind": "conv", "inputs": ["in"], "weight_offset": 0, "weight_shape": [1, 1, 1, 1]}
    ],
    "output_layer": "c"
  })", {1.0});
  std::mt19937_64 rng(83);
  Tensor conf = ebtest::random_tensor({1, 7, 7}, rng, 0.0, 3.0);
  ebnet::TopDownSignal sig = ebnet::signal_from_map(m, "c", conf);
  CHECK(sig.mass() == doctest::Approx(1.0).epsilon(1e-12));
  const double total = conf.sum();
  for (int64_t i = 0; i < conf.numel(); ++i)
    CHECK(sig.values[i] == doctest::Approx(conf[i] / total).epsilon(1e-12));

  Tensor neg = conf;
  neg[3] = -0.5;
  CHECK_THROWS_AS(ebnet::signal_from_map(m, "c", neg), ebnet::NegativeWeight);
  CHECK_THROWS_AS(ebnet::signal_from_map(m, "zzz", conf), ebnet::UnknownLayer);
}

TEST_CASE("post-relu responses stay non-negative on random non-negative input") {
  std::mt19937_64 rng(89);
  for (int trial = 0; trial < 5; ++trial) {
    ModelBundle m = ebtest::random_mlp(rng, 4, 12);
    Tensor in = ebtest::random_tensor(m.layers[0].out_shape, rng, 0.0, 1.0);
    ActivationCache cache = ebnet::forward(m, in);
    for (const auto& L : m.layers) {
      if (L.kind != LayerKind::Relu) continue;
      CHECK(cache.response(L.id).min_value() >= 0.0);
    }
  }
}
