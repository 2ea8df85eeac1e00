#include "ebnet/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ebnet {

using json = nlohmann::ordered_json;

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::Fc: return "fc";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Lrn: return "lrn";
    case LayerKind::Concat: return "concat";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::DropoutIdentity: return "dropout-identity";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  static const std::map<std::string, LayerKind> table = {
      {"input", LayerKind::Input},
      {"conv", LayerKind::Conv},
      {"fc", LayerKind::Fc},
      {"relu", LayerKind::Relu},
      {"maxpool", LayerKind::MaxPool},
      {"avgpool", LayerKind::AvgPool},
      {"lrn", LayerKind::Lrn},
      {"concat", LayerKind::Concat},
      {"flatten", LayerKind::Flatten},
      {"softmax", LayerKind::Softmax},
      {"dropout-identity", LayerKind::DropoutIdentity},
  };
  const auto it = table.find(name);
  if (it == table.end()) throw UnsupportedLayerKind("unknown layer kind '" + name + "'");
  return it->second;
}

const LayerSpec& ModelBundle::layer(const std::string& id) const {
  const auto it = index.find(id);
  if (it == index.end()) throw UnknownLayer("no layer named '" + id + "'");
  return layers[static_cast<std::size_t>(it->second)];
}

int ModelBundle::layer_index(const std::string& id) const {
  const auto it = index.find(id);
  if (it == index.end()) throw UnknownLayer("no layer named '" + id + "'");
  return it->second;
}

const ConvParams& ModelBundle::conv_params(const std::string& id) const {
  const auto it = weights.find(id);
  if (it == weights.end()) throw MissingWeights("layer '" + id + "' has no weights");
  return it->second;
}

const Tensor& ActivationCache::response(const std::string& id) const {
  const auto it = responses.find(id);
  if (it == responses.end()) throw UnknownLayer("no cached response for layer '" + id + "'");
  return it->second;
}

const PoolMask& ActivationCache::mask(const std::string& id) const {
  const auto it = masks.find(id);
  if (it == masks.end()) throw UnknownLayer("no pooling mask for layer '" + id + "'");
  return it->second;
}

namespace {

void infer_shape(ModelBundle& model, LayerSpec& L) {
  const auto input_shape = [&](std::size_t i) -> const std::vector<int>& {
    return model.layers[static_cast<std::size_t>(model.index.at(L.inputs[i]))].out_shape;
  };

  switch (L.kind) {
    case LayerKind::Input: {
      // c x h x w for images, 1-d for plain vector inputs
      if (L.out_shape.empty()) {
        throw ShapeMismatch(L.id + ": input layer needs a non-empty shape");
      }
      for (int d : L.out_shape) {
        if (d < 1) throw ShapeMismatch(L.id + ": input extents must be positive");
      }
      break;
    }
    case LayerKind::Conv: {
      const ConvParams& cp = model.conv_params(L.id);
      const auto& in = input_shape(0);
      if (in.size() != 3) throw ShapeMismatch(L.id + ": conv input must be c x h x w");
      if (cp.kernel.ndim() != 4) {
        throw ShapeMismatch(L.id + ": conv kernel must be o x c x kh x kw");
      }
      if (cp.kernel.dim(1) != in[0]) {
        throw ShapeMismatch(L.id + ": kernel expects " + std::to_string(cp.kernel.dim(1)) +
                            " input channels, layer below provides " + std::to_string(in[0]));
      }
      if (cp.bias && cp.bias->numel() != cp.kernel.dim(0)) {
        throw ShapeMismatch(L.id + ": bias length differs from output channel count");
      }
      int oh = 0, ow = 0;
      try {
        oh = conv_output_extent(in[1], cp.kernel.dim(2), cp.stride_h, cp.pad_h);
        ow = conv_output_extent(in[2], cp.kernel.dim(3), cp.stride_w, cp.pad_w);
      } catch (const EbError& e) {
        throw ShapeMismatch(L.id + ": " + e.what());
      }
      L.out_shape = {cp.kernel.dim(0), oh, ow};
      break;
    }
    case LayerKind::Fc: {
      const ConvParams& cp = model.conv_params(L.id);
      const std::int64_t n = shape_numel(input_shape(0));
      if (cp.kernel.ndim() != 4 || cp.kernel.dim(2) != 1 || cp.kernel.dim(3) != 1) {
        throw ShapeMismatch(L.id + ": fc kernel must be out x in x 1 x 1");
      }
      if (cp.kernel.dim(1) != n) {
        throw ShapeMismatch(L.id + ": fc expects " + std::to_string(cp.kernel.dim(1)) +
                            " inputs, layer below provides " + std::to_string(n));
      }
      if (cp.bias && cp.bias->numel() != cp.kernel.dim(0)) {
        throw ShapeMismatch(L.id + ": bias length differs from output count");
      }
      L.out_shape = {cp.kernel.dim(0)};
      break;
    }
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      const auto& in = input_shape(0);
      if (in.size() != 3) throw ShapeMismatch(L.id + ": pooling input must be c x h x w");
      if (L.pool.window_h < 1 || L.pool.window_w < 1 || L.pool.stride_h < 1 ||
          L.pool.stride_w < 1 || L.pool.pad_h < 0 || L.pool.pad_w < 0) {
        throw ShapeMismatch(L.id + ": bad pooling geometry");
      }
      if (L.kind == LayerKind::MaxPool &&
          (L.pool.pad_h >= L.pool.window_h || L.pool.pad_w >= L.pool.window_w)) {
        throw ShapeMismatch(L.id + ": maxpool padding must be smaller than the window");
      }
      int oh = 0, ow = 0;
      try {
        oh = conv_output_extent(in[1], L.pool.window_h, L.pool.stride_h, L.pool.pad_h);
        ow = conv_output_extent(in[2], L.pool.window_w, L.pool.stride_w, L.pool.pad_w);
      } catch (const EbError& e) {
        throw ShapeMismatch(L.id + ": " + e.what());
      }
      L.out_shape = {in[0], oh, ow};
      break;
    }
    case LayerKind::Lrn: {
      const auto& in = input_shape(0);
      if (in.size() != 3) throw ShapeMismatch(L.id + ": lrn input must be c x h x w");
      if (L.lrn.local_size < 1 || L.lrn.local_size % 2 == 0 || L.lrn.k <= 0.0) {
        throw ShapeMismatch(L.id + ": lrn needs odd local_size >= 1 and k > 0");
      }
      L.out_shape = in;
      break;
    }
    case LayerKind::Relu:
    case LayerKind::Softmax:
    case LayerKind::DropoutIdentity: {
      L.out_shape = input_shape(0);
      break;
    }
    case LayerKind::Flatten: {
      L.out_shape = {static_cast<int>(shape_numel(input_shape(0)))};
      break;
    }
    case LayerKind::Concat: {
      const auto& first = input_shape(0);
      if (first.size() != 3) throw ShapeMismatch(L.id + ": concat inputs must be c x h x w");
      int channels = first[0];
      for (std::size_t i = 1; i < L.inputs.size(); ++i) {
        const auto& in = input_shape(i);
        if (in.size() != 3 || in[1] != first[1] || in[2] != first[2]) {
          throw ShapeMismatch(L.id + ": concat inputs must agree on h x w");
        }
        channels += in[0];
      }
      L.out_shape = {channels, first[1], first[2]};
      break;
    }
  }
}

}  // namespace

void finalize_model(ModelBundle& model) {
  if (model.layers.empty()) throw ParseError("model has no layers");
  model.index.clear();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& L = model.layers[i];
    if (L.id.empty()) throw ParseError("layer without an id");
    if (!model.index.emplace(L.id, static_cast<int>(i)).second) {
      throw ParseError("duplicate layer id '" + L.id + "'");
    }
  }

  int n_input = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& L = model.layers[i];
    if (L.kind == LayerKind::Input) {
      if (!L.inputs.empty()) throw ParseError(L.id + ": input layer takes no inputs");
      ++n_input;
    } else if (L.kind == LayerKind::Concat) {
      if (L.inputs.empty()) throw ParseError(L.id + ": concat needs at least one input");
    } else if (L.inputs.size() != 1) {
      throw ParseError(L.id + ": expects exactly one input");
    }
    for (const std::string& in : L.inputs) {
      const auto it = model.index.find(in);
      if (it == model.index.end() || it->second >= static_cast<int>(i)) {
        throw CycleDetected(L.id + ": input '" + in + "' is not an earlier layer");
      }
      if (model.layers[static_cast<std::size_t>(it->second)].kind == LayerKind::Softmax) {
        throw ParseError(L.id + ": softmax output cannot feed another layer");
      }
    }
  }
  if (n_input != 1) throw ParseError("model must have exactly one input layer");

  for (LayerSpec& L : model.layers) infer_shape(model, L);

  if (model.output_layer.empty()) throw ParseError("output_layer is not set");
  const LayerSpec& out = model.layer(model.output_layer);
  if (out.kind == LayerKind::Softmax) throw ParseError("output_layer must not be a softmax");
  if (!model.attention_layer.empty()) model.layer(model.attention_layer);
}

namespace {

std::pair<int, int> int_pair(const json& lj, const char* key, std::pair<int, int> fallback,
                             const std::string& id) {
  if (!lj.contains(key)) return fallback;
  const json& v = lj.at(key);
  if (v.is_number_integer()) {
    const int s = v.get<int>();
    return {s, s};
  }
  if (v.is_array() && v.size() == 2) return {v[0].get<int>(), v[1].get<int>()};
  throw ParseError(id + ": '" + std::string(key) + "' must be an int or [h, w]");
}

Tensor slice_blob(const std::vector<double>& blob, std::int64_t offset,
                  const std::vector<int>& shape, const std::string& id) {
  const std::int64_t n = shape_numel(shape);
  if (offset < 0 || offset + n > static_cast<std::int64_t>(blob.size())) {
    throw MissingWeights(id + ": weight slice [" + std::to_string(offset) + ", " +
                         std::to_string(offset + n) + ") falls outside the blob of " +
                         std::to_string(blob.size()) + " values");
  }
  std::vector<double> data(blob.begin() + offset, blob.begin() + offset + n);
  return Tensor(shape, std::move(data));
}

void parse_weights(const json& lj, const std::vector<double>& blob, const LayerSpec& L,
                   ModelBundle& model) {
  if (!lj.contains("weight_offset") || !lj.contains("weight_shape")) {
    throw MissingWeights(L.id + ": needs weight_offset and weight_shape");
  }
  std::vector<int> wshape = lj.at("weight_shape").get<std::vector<int>>();
  if (L.kind == LayerKind::Fc && wshape.size() == 2) {
    wshape = {wshape[0], wshape[1], 1, 1};
  }
  if (wshape.size() != 4) {
    throw ParseError(L.id + ": weight_shape must be o x c x kh x kw (fc may use out x in)");
  }
  ConvParams cp{slice_blob(blob, lj.at("weight_offset").get<std::int64_t>(), wshape, L.id),
                1, 1, 0, 0, std::nullopt};
  if (L.kind == LayerKind::Conv) {
    const auto stride = int_pair(lj, "stride", {1, 1}, L.id);
    const auto pad = int_pair(lj, "pad", {0, 0}, L.id);
    cp.stride_h = stride.first;
    cp.stride_w = stride.second;
    cp.pad_h = pad.first;
    cp.pad_w = pad.second;
  }
  if (lj.contains("bias_offset")) {
    cp.bias = slice_blob(blob, lj.at("bias_offset").get<std::int64_t>(), {wshape[0]}, L.id);
  }
  model.weights.emplace(L.id, std::move(cp));
}

}  // namespace

ModelBundle load_model(const std::string& manifest_json, const std::vector<double>& blob) {
  json j;
  try {
    j = json::parse(manifest_json);
  } catch (const std::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != "ebnet-v1") {
    throw ParseError("manifest: expected \"format\": \"ebnet-v1\"");
  }
  if (!j.contains("layers") || !j.at("layers").is_array()) {
    throw ParseError("manifest: missing layers array");
  }

  ModelBundle model;
  try {
    for (const json& lj : j.at("layers")) {
      LayerSpec L;
      L.id = lj.value("id", std::string());
      if (L.id.empty()) throw ParseError("manifest: layer without an id");
      L.kind = layer_kind_from_name(lj.value("kind", std::string()));
      if (lj.contains("inputs")) {
        for (const json& s : lj.at("inputs")) L.inputs.push_back(s.get<std::string>());
      }
      switch (L.kind) {
        case LayerKind::Input: {
          if (!lj.contains("shape")) throw ParseError(L.id + ": input layer needs a shape");
          L.out_shape = lj.at("shape").get<std::vector<int>>();
          break;
        }
        case LayerKind::Conv:
        case LayerKind::Fc: {
          parse_weights(lj, blob, L, model);
          break;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
          const auto window = int_pair(lj, "window", {0, 0}, L.id);
          const auto stride = int_pair(lj, "stride", window, L.id);
          const auto pad = int_pair(lj, "pad", {0, 0}, L.id);
          L.pool = {window.first, window.second, stride.first, stride.second,
                    pad.first, pad.second};
          break;
        }
        case LayerKind::Lrn: {
          L.lrn.local_size = lj.value("local_size", 5);
          L.lrn.alpha = lj.value("alpha", 1e-4);
          L.lrn.beta = lj.value("beta", 0.75);
          L.lrn.k = lj.value("k", 1.0);
          break;
        }
        default:
          break;
      }
      model.layers.push_back(std::move(L));
    }
    model.output_layer = j.value("output_layer", std::string());
    model.attention_layer = j.value("attention_layer", std::string());
    if (j.contains("mean")) {
      for (const json& v : j.at("mean")) model.mean.push_back(v.get<double>());
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }

  finalize_model(model);
  return model;
}

namespace {

std::vector<double> read_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open weights file " + path);
  const std::streamsize bytes = in.tellg();
  if (bytes % 8 != 0) {
    throw MissingWeights(path + ": weight blob size is not a multiple of 8 bytes");
  }
  std::vector<double> blob(static_cast<std::size_t>(bytes / 8));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(blob.data()), bytes);
  if (in.gcount() != bytes) throw IoError("failed reading " + path);
  return blob;
}

}  // namespace

ModelBundle load_model_files(const std::string& manifest_path, const std::string& weights_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::string wpath = weights_path;
  if (wpath.empty()) {
    try {
      const json j = json::parse(text);
      if (j.contains("weights_file")) {
        const std::filesystem::path rel = j.at("weights_file").get<std::string>();
        wpath = (std::filesystem::path(manifest_path).parent_path() / rel).string();
      }
    } catch (const std::exception&) {
      // load_model reports the parse failure with context
    }
  }
  std::vector<double> blob;
  if (!wpath.empty()) blob = read_blob(wpath);
  return load_model(text, blob);
}

std::pair<std::string, std::vector<double>> save_model(const ModelBundle& model) {
  json j;
  j["format"] = "ebnet-v1";
  json layers = json::array();
  std::vector<double> blob;

  const auto append = [&blob](const Tensor& t) {
    blob.insert(blob.end(), t.data(), t.data() + t.numel());
  };

  for (const LayerSpec& L : model.layers) {
    json lj;
    lj["id"] = L.id;
    lj["kind"] = layer_kind_name(L.kind);
    if (!L.inputs.empty()) lj["inputs"] = L.inputs;
    switch (L.kind) {
      case LayerKind::Input: {
        lj["shape"] = L.out_shape;
        break;
      }
      case LayerKind::Conv: {
        const ConvParams& cp = model.conv_params(L.id);
        lj["stride"] = json::array({cp.stride_h, cp.stride_w});
        lj["pad"] = json::array({cp.pad_h, cp.pad_w});
        lj["weight_offset"] = blob.size();
        lj["weight_shape"] = json::array(
            {cp.kernel.dim(0), cp.kernel.dim(1), cp.kernel.dim(2), cp.kernel.dim(3)});
        append(cp.kernel);
        if (cp.bias) {
          lj["bias_offset"] = blob.size();
          append(*cp.bias);
        }
        break;
      }
      case LayerKind::Fc: {
        const ConvParams& cp = model.conv_params(L.id);
        lj["weight_offset"] = blob.size();
        lj["weight_shape"] = json::array({cp.kernel.dim(0), cp.kernel.dim(1)});
        append(cp.kernel);
        if (cp.bias) {
          lj["bias_offset"] = blob.size();
          append(*cp.bias);
        }
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        lj["window"] = json::array({L.pool.window_h, L.pool.window_w});
        lj["stride"] = json::array({L.pool.stride_h, L.pool.stride_w});
        lj["pad"] = json::array({L.pool.pad_h, L.pool.pad_w});
        break;
      }
      case LayerKind::Lrn: {
        lj["local_size"] = L.lrn.local_size;
        lj["alpha"] = L.lrn.alpha;
        lj["beta"] = L.lrn.beta;
        lj["k"] = L.lrn.k;
        break;
      }
      default:
        break;
    }
    layers.push_back(std::move(lj));
  }

  j["layers"] = std::move(layers);
  j["output_layer"] = model.output_layer;
  if (!model.attention_layer.empty()) j["attention_layer"] = model.attention_layer;
  if (!model.mean.empty()) j["mean"] = model.mean;
  return {j.dump(2) + "\n", std::move(blob)};
}

void save_model_files(const ModelBundle& model, const std::string& manifest_path,
                      const std::string& weights_path) {
  const auto [manifest, blob] = save_model(model);
  json j = json::parse(manifest);
  j["weights_file"] = std::filesystem::path(weights_path).filename().string();
  std::ofstream mout(manifest_path, std::ios::binary);
  if (!mout) throw IoError("cannot write manifest " + manifest_path);
  mout << j.dump(2) << "\n";
  if (!mout) throw IoError("failed writing " + manifest_path);

  std::ofstream wout(weights_path, std::ios::binary);
  if (!wout) throw IoError("cannot write weights " + weights_path);
  wout.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * 8));
  if (!wout) throw IoError("failed writing " + weights_path);
}

ActivationCache forward(const ModelBundle& model, const Tensor& input) {
  ActivationCache cache;
  cache.input_shape = input.shape();
  for (const LayerSpec& L : model.layers) {
    switch (L.kind) {
      case LayerKind::Input: {
        if (input.shape() != L.out_shape) {
          throw ShapeMismatch(L.id + ": got input " + input.shape_str() + ", model expects " +
                              shape_to_string(L.out_shape));
        }
        cache.responses.emplace(L.id, input);
        break;
      }
      case LayerKind::Conv: {
        cache.responses.emplace(
            L.id, conv2d_forward(cache.response(L.inputs[0]), model.conv_params(L.id)));
        break;
      }
      case LayerKind::Fc: {
        const Tensor& x = cache.response(L.inputs[0]);
        const Tensor flat = x.reshaped({static_cast<int>(x.numel()), 1, 1});
        Tensor y = conv2d_forward(flat, model.conv_params(L.id));
        cache.responses.emplace(L.id, y.reshaped({y.dim(0)}));
        break;
      }
      case LayerKind::Relu: {
        cache.responses.emplace(L.id, clamp_non_negative(cache.response(L.inputs[0])));
        break;
      }
      case LayerKind::MaxPool: {
        auto [y, mask] = maxpool_forward(cache.response(L.inputs[0]), L.pool);
        cache.masks.emplace(L.id, std::move(mask));
        cache.responses.emplace(L.id, std::move(y));
        break;
      }
      case LayerKind::AvgPool: {
        cache.responses.emplace(L.id, avgpool_forward(cache.response(L.inputs[0]), L.pool));
        break;
      }
      case LayerKind::Lrn: {
        cache.responses.emplace(L.id, lrn_forward(cache.response(L.inputs[0]), L.lrn.local_size,
                                                  L.lrn.alpha, L.lrn.beta, L.lrn.k));
        break;
      }
      case LayerKind::Concat: {
        Tensor out(L.out_shape);
        std::int64_t at = 0;
        for (const std::string& in : L.inputs) {
          const Tensor& x = cache.response(in);
          std::memcpy(out.data() + at, x.data(), static_cast<std::size_t>(x.numel()) * 8);
          at += x.numel();
        }
        cache.responses.emplace(L.id, std::move(out));
        break;
      }
      case LayerKind::Flatten: {
        const Tensor& x = cache.response(L.inputs[0]);
        cache.responses.emplace(L.id, x.reshaped({static_cast<int>(x.numel())}));
        break;
      }
      case LayerKind::Softmax: {
        const Tensor& x = cache.response(L.inputs[0]);
        Tensor y = x;
        const double m = x.max_value();
        double total = 0.0;
        for (std::int64_t i = 0; i < y.numel(); ++i) {
          y[i] = std::exp(y[i] - m);
          total += y[i];
        }
        for (std::int64_t i = 0; i < y.numel(); ++i) y[i] /= total;
        cache.responses.emplace(L.id, std::move(y));
        break;
      }
      case LayerKind::DropoutIdentity: {
        cache.responses.emplace(L.id, cache.response(L.inputs[0]));
        break;
      }
    }
  }
  return cache;
}

TopDownSignal class_signal(const ModelBundle& model,
                           const std::vector<std::int64_t>& class_indices,
                           const std::vector<double>& class_weights) {
  if (class_indices.empty()) {
    throw IndexOutOfRange("class_signal needs at least one class index");
  }
  if (!class_weights.empty() && class_weights.size() != class_indices.size()) {
    throw ShapeMismatch("class weight count differs from class index count");
  }
  const LayerSpec& out = model.layer(model.output_layer);
  Tensor sig(out.out_shape);
  for (std::size_t k = 0; k < class_indices.size(); ++k) {
    const std::int64_t idx = class_indices[k];
    if (idx < 0 || idx >= sig.numel()) {
      throw IndexOutOfRange("class index " + std::to_string(idx) + " outside [0, " +
                            std::to_string(sig.numel()) + ")");
    }
    const double w = class_weights.empty() ? 1.0 : class_weights[k];
    if (w < 0.0) throw NegativeWeight("class weights must be non-negative");
    sig[idx] += w;
  }
  const double total = sig.sum();
  if (total > 0.0) {
    for (std::int64_t i = 0; i < sig.numel(); ++i) sig[i] /= total;
  }
  return {model.output_layer, std::move(sig)};
}

TopDownSignal signal_from_map(const ModelBundle& model, const std::string& layer_id,
                              const Tensor& values, bool normalize) {
  const LayerSpec& L = model.layer(layer_id);
  if (values.shape() != L.out_shape) {
    throw ShapeMismatch(layer_id + ": signal is " + values.shape_str() + ", layer produces " +
                        shape_to_string(L.out_shape));
  }
  for (std::int64_t i = 0; i < values.numel(); ++i) {
    if (values[i] < 0.0) throw NegativeWeight(layer_id + ": signal values must be non-negative");
  }
  Tensor sig = values;
  if (normalize) {
    const double total = sig.sum();
    if (total > 0.0) {
      for (std::int64_t i = 0; i < sig.numel(); ++i) sig[i] /= total;
    }
  }
  return {layer_id, std::move(sig)};
}

}  // namespace ebnet
