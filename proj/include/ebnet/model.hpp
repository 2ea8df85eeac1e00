#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ebnet/errors.hpp"
#include "ebnet/kernels.hpp"
#include "ebnet/tensor.hpp"

namespace ebnet {

enum class LayerKind {
  Input,
  Conv,
  Fc,
  Relu,
  MaxPool,
  AvgPool,
  Lrn,
  Concat,
  Flatten,
  Softmax,
  DropoutIdentity,
};

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);  // UnsupportedLayerKind

struct LrnParams {
  int local_size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 1.0;
};

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::Input;
  std::vector<std::string> inputs;
  // input: declared in the manifest; every other kind: inferred by finalize_model
  std::vector<int> out_shape;

  PoolParams pool;  // maxpool / avgpool only
  LrnParams lrn;    // lrn only
};

// Layers are stored in topological order; conv and fc parameters live in
// `weights`, keyed by layer id (fc kernels are out x in x 1 x 1).
struct ModelBundle {
  std::vector<LayerSpec> layers;
  std::map<std::string, int> index;
  std::map<std::string, ConvParams> weights;
  std::string output_layer;
  std::string attention_layer;  // empty = unset
  std::vector<double> mean;     // per-channel input mean, empty = none

  bool has_layer(const std::string& id) const { return index.count(id) != 0; }
  const LayerSpec& layer(const std::string& id) const;       // UnknownLayer
  int layer_index(const std::string& id) const;              // UnknownLayer
  const ConvParams& conv_params(const std::string& id) const;  // MissingWeights
};

struct ActivationCache {
  std::map<std::string, Tensor> responses;
  std::map<std::string, PoolMask> masks;  // one entry per maxpool layer
  std::vector<int> input_shape;

  const Tensor& response(const std::string& id) const;  // UnknownLayer
  const PoolMask& mask(const std::string& id) const;    // UnknownLayer
};

struct TopDownSignal {
  std::string layer_id;
  Tensor values;

  double mass() const { return values.sum(); }
};

// Validates topology and arity, infers every out_shape. Call after building a
// ModelBundle by hand; load_model calls it internally.
void finalize_model(ModelBundle& model);

ModelBundle load_model(const std::string& manifest_json, const std::vector<double>& blob);
ModelBundle load_model_files(const std::string& manifest_path,
                             const std::string& weights_path = "");

// Offsets into the returned blob are recomputed in layer order, so
// save -> load -> save reproduces both byte streams exactly.
std::pair<std::string, std::vector<double>> save_model(const ModelBundle& model);
void save_model_files(const ModelBundle& model, const std::string& manifest_path,
                      const std::string& weights_path);

ActivationCache forward(const ModelBundle& model, const Tensor& input);

// Point mass over class entries of the output layer, scaled to sum 1.
// Weights default to 1 and must be non-negative.
TopDownSignal class_signal(const ModelBundle& model,
                           const std::vector<std::int64_t>& class_indices,
                           const std::vector<double>& class_weights = {});

// Arbitrary non-negative signal at a named layer; scaled to sum 1 when
// normalize is set and the total is positive.
TopDownSignal signal_from_map(const ModelBundle& model, const std::string& layer_id,
                              const Tensor& values, bool normalize = true);

}  // namespace ebnet
