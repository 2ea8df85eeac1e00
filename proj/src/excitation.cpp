#include "ebnet/excitation.hpp"

#include <cstdio>
#include <map>

#include "ebnet/resize.hpp"

namespace ebnet {

Tensor eb_step_affine(const Tensor& bottom_act, const ConvParams& params, const Tensor& top_mwp,
                      double shift_lambda) {
  Tensor shifted = shift_lambda == 0.0 ? bottom_act : add_scalar(bottom_act, shift_lambda);
  for (std::int64_t i = 0; i < shifted.numel(); ++i) {
    if (shifted[i] < 0.0) {
      throw NegativeActivation("activation " + std::to_string(bottom_act[i]) +
                               " + lambda " + std::to_string(shift_lambda) + " is negative");
    }
  }
  ConvParams wplus{clamp_non_negative(params.kernel), params.stride_h, params.stride_w,
                   params.pad_h, params.pad_w, std::nullopt};
  Tensor x = conv2d_forward(shifted, wplus);
  if (!x.same_shape(top_mwp)) {
    throw ShapeMismatch("top signal is " + top_mwp.shape_str() + ", layer produces " +
                        x.shape_str());
  }
  Tensor y = safe_div(top_mwp, x);
  Tensor z = conv2d_backward_data(y, wplus, shifted.shape());
  return hadamard(shifted, z);
}

Tensor eb_step_relu(const Tensor& top_mwp) { return top_mwp; }

Tensor eb_step_maxpool(const Tensor& top_mwp, const PoolMask& mask,
                       const std::vector<int>& bottom_shape) {
  if (top_mwp.shape() != mask.shape) {
    throw ShapeMismatch("top signal is " + top_mwp.shape_str() + ", pooling mask covers " +
                        shape_to_string(mask.shape));
  }
  Tensor out(bottom_shape);
  for (std::int64_t i = 0; i < top_mwp.numel(); ++i) {
    const std::int64_t at = mask.indices[static_cast<std::size_t>(i)];
    if (at < 0 || at >= out.numel()) {
      throw ShapeMismatch("pooling mask points outside the bottom tensor");
    }
    out[at] += top_mwp[i];
  }
  return out;
}

Tensor eb_step_lrn(const Tensor& top_mwp) { return top_mwp; }

std::vector<Tensor> eb_step_concat(const Tensor& top_mwp,
                                   const std::vector<int>& segment_extents) {
  if (top_mwp.ndim() != 3) {
    throw ShapeMismatch("concat split expects c x h x w, got " + top_mwp.shape_str());
  }
  int total = 0;
  for (int c : segment_extents) {
    if (c < 1) throw ShapeMismatch("concat segment extents must be positive");
    total += c;
  }
  if (total != top_mwp.dim(0)) {
    throw ShapeMismatch("concat segments cover " + std::to_string(total) + " channels, map has " +
                        std::to_string(top_mwp.dim(0)));
  }
  const int h = top_mwp.dim(1), w = top_mwp.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<Tensor> parts;
  parts.reserve(segment_extents.size());
  std::int64_t at = 0;
  for (int c : segment_extents) {
    const std::int64_t n = c * plane;
    std::vector<double> data(top_mwp.data() + at, top_mwp.data() + at + n);
    parts.emplace_back(std::vector<int>{c, h, w}, std::move(data));
    at += n;
  }
  return parts;
}

Tensor eb_step_avgpool(const Tensor& bottom_act, const PoolParams& pool, const Tensor& top_mwp,
                       double shift_lambda) {
  Tensor shifted = shift_lambda == 0.0 ? bottom_act : add_scalar(bottom_act, shift_lambda);
  for (std::int64_t i = 0; i < shifted.numel(); ++i) {
    if (shifted[i] < 0.0) {
      throw NegativeActivation("activation " + std::to_string(bottom_act[i]) +
                               " + lambda " + std::to_string(shift_lambda) + " is negative");
    }
  }
  Tensor x = avgpool_forward(shifted, pool);
  if (!x.same_shape(top_mwp)) {
    throw ShapeMismatch("top signal is " + top_mwp.shape_str() + ", pooling produces " +
                        x.shape_str());
  }
  Tensor y = safe_div(top_mwp, x);
  Tensor z = avgpool_backward_data(y, pool, shifted.shape());
  return hadamard(shifted, z);
}

namespace {

// Carries values (possibly signed, for the contrastive pass) from start_layer
// down to target_layer, stepping only through layers from which the target is
// reachable.
Tensor walk_down(const ModelBundle& model, const ActivationCache& cache, int start_idx,
                 Tensor start_values, int target_idx, double lambda) {
  const auto& layers = model.layers;
  if (target_idx > start_idx) {
    throw SignalBelowTarget("target layer '" + layers[target_idx].id +
                            "' sits above the signal layer '" + layers[start_idx].id + "'");
  }
  if (target_idx == start_idx) return start_values;

  std::vector<char> reach(layers.size(), 0);
  for (int i = target_idx + 1; i <= start_idx; ++i) {
    for (const std::string& in : layers[static_cast<std::size_t>(i)].inputs) {
      const int j = model.index.at(in);
      if (j == target_idx || reach[static_cast<std::size_t>(j)]) {
        reach[static_cast<std::size_t>(i)] = 1;
        break;
      }
    }
  }

  std::map<int, Tensor> acc;
  acc.emplace(start_idx, std::move(start_values));
  const auto add_acc = [&acc](int idx, Tensor t) {
    const auto it = acc.find(idx);
    if (it == acc.end()) {
      acc.emplace(idx, std::move(t));
    } else {
      add_into(it->second, t);
    }
  };

  for (int i = start_idx; i > target_idx; --i) {
    const auto it = acc.find(i);
    if (it == acc.end()) continue;
    if (!reach[static_cast<std::size_t>(i)]) continue;

    const LayerSpec& L = layers[static_cast<std::size_t>(i)];
    const Tensor top = std::move(it->second);
    acc.erase(it);

    switch (L.kind) {
      case LayerKind::Conv: {
        const Tensor& bottom = cache.response(L.inputs[0]);
        add_acc(model.index.at(L.inputs[0]),
                eb_step_affine(bottom, model.conv_params(L.id), top, lambda));
        break;
      }
      case LayerKind::Fc: {
        const Tensor& bottom = cache.response(L.inputs[0]);
        const Tensor flat = bottom.reshaped({static_cast<int>(bottom.numel()), 1, 1});
        const Tensor top3 = top.reshaped({top.dim(0), 1, 1});
        Tensor out = eb_step_affine(flat, model.conv_params(L.id), top3, lambda);
        add_acc(model.index.at(L.inputs[0]), out.reshaped(bottom.shape()));
        break;
      }
      case LayerKind::Relu: {
        add_acc(model.index.at(L.inputs[0]), eb_step_relu(top));
        break;
      }
      case LayerKind::Lrn: {
        add_acc(model.index.at(L.inputs[0]), eb_step_lrn(top));
        break;
      }
      case LayerKind::DropoutIdentity: {
        add_acc(model.index.at(L.inputs[0]), top);
        break;
      }
      case LayerKind::Flatten: {
        const LayerSpec& below = layers[static_cast<std::size_t>(model.index.at(L.inputs[0]))];
        add_acc(model.index.at(L.inputs[0]), top.reshaped(below.out_shape));
        break;
      }
      case LayerKind::MaxPool: {
        const LayerSpec& below = layers[static_cast<std::size_t>(model.index.at(L.inputs[0]))];
        add_acc(model.index.at(L.inputs[0]),
                eb_step_maxpool(top, cache.mask(L.id), below.out_shape));
        break;
      }
      case LayerKind::AvgPool: {
        const Tensor& bottom = cache.response(L.inputs[0]);
        add_acc(model.index.at(L.inputs[0]), eb_step_avgpool(bottom, L.pool, top, lambda));
        break;
      }
      case LayerKind::Concat: {
        std::vector<int> extents;
        extents.reserve(L.inputs.size());
        for (const std::string& in : L.inputs) {
          extents.push_back(model.layer(in).out_shape[0]);
        }
        std::vector<Tensor> parts = eb_step_concat(top, extents);
        for (std::size_t k = 0; k < parts.size(); ++k) {
          add_acc(model.index.at(L.inputs[k]), std::move(parts[k]));
        }
        break;
      }
      case LayerKind::Softmax:
        throw UnsupportedLayerKind(L.id + ": attention cannot propagate through softmax");
      case LayerKind::Input:
        throw UnsupportedLayerKind(L.id + ": attention cannot step through the input layer");
    }
  }

  const auto got = acc.find(target_idx);
  if (got == acc.end()) return Tensor(layers[static_cast<std::size_t>(target_idx)].out_shape);
  return std::move(got->second);
}

}  // namespace

MWPField excitation_backprop(const ModelBundle& model, const ActivationCache& cache,
                             const TopDownSignal& signal, const std::string& target_layer,
                             double shift_lambda) {
  const LayerSpec& target = model.layer(target_layer);
  if (target.kind == LayerKind::Input) {
    throw UnsupportedLayerKind(target_layer +
                               ": attention is not defined on the input pixel layer");
  }
  const int s = model.layer_index(signal.layer_id);
  const int t = model.layer_index(target_layer);
  if (t == s) return {target_layer, signal.values};
  return {target_layer, walk_down(model, cache, s, signal.values, t, shift_lambda)};
}

namespace {

// First contrastive stage: signed difference of one step under the signal
// layer's weights and one under their negation, landing on the layer below.
Tensor dual_difference(const ModelBundle& model, const ActivationCache& cache,
                       const TopDownSignal& signal, double lambda, int* bottom_idx) {
  const LayerSpec& L = model.layer(signal.layer_id);
  if (L.kind != LayerKind::Conv && L.kind != LayerKind::Fc) {
    throw DualUndefined(signal.layer_id +
                        ": the contrastive dual exists only for conv or fc signal layers");
  }
  const ConvParams& params = model.conv_params(L.id);
  ConvParams negated = params;
  for (std::int64_t i = 0; i < negated.kernel.numel(); ++i) negated.kernel[i] = -negated.kernel[i];

  const Tensor& bottom = cache.response(L.inputs[0]);
  *bottom_idx = model.index.at(L.inputs[0]);

  if (L.kind == LayerKind::Fc) {
    const Tensor flat = bottom.reshaped({static_cast<int>(bottom.numel()), 1, 1});
    const Tensor top3 = signal.values.reshaped({signal.values.dim(0), 1, 1});
    Tensor pos = eb_step_affine(flat, params, top3, lambda);
    Tensor neg = eb_step_affine(flat, negated, top3, lambda);
    return sub(pos, neg).reshaped(bottom.shape());
  }
  Tensor pos = eb_step_affine(bottom, params, signal.values, lambda);
  Tensor neg = eb_step_affine(bottom, negated, signal.values, lambda);
  return sub(pos, neg);
}

}  // namespace

Tensor contrastive_backprop_signed(const ModelBundle& model, const ActivationCache& cache,
                                   const TopDownSignal& signal, const std::string& target_layer,
                                   double shift_lambda) {
  const LayerSpec& target = model.layer(target_layer);
  if (target.kind == LayerKind::Input) {
    throw UnsupportedLayerKind(target_layer +
                               ": attention is not defined on the input pixel layer");
  }
  if (target_layer == signal.layer_id) {
    throw SignalBelowTarget(target_layer +
                            ": the contrastive difference exists only below the signal layer");
  }
  const int s = model.layer_index(signal.layer_id);
  const int t = model.layer_index(target_layer);
  if (t > s) {
    throw SignalBelowTarget("target layer '" + target_layer + "' sits above the signal layer '" +
                            signal.layer_id + "'");
  }
  int bottom_idx = -1;
  Tensor diff = dual_difference(model, cache, signal, shift_lambda, &bottom_idx);
  if (t == bottom_idx) return diff;
  // A topological index above the signal layer's own input cannot be reached
  // going down from there; such targets receive no mass.
  if (t > bottom_idx) return Tensor(target.out_shape);
  return walk_down(model, cache, bottom_idx, std::move(diff), t, shift_lambda);
}

MWPField contrastive_backprop(const ModelBundle& model, const ActivationCache& cache,
                              const TopDownSignal& signal, const std::string& target_layer,
                              double shift_lambda) {
  Tensor signed_field =
      contrastive_backprop_signed(model, cache, signal, target_layer, shift_lambda);
  Tensor truncated = clamp_non_negative(signed_field);
  if (truncated.sum() == 0.0 && signal.mass() > 0.0) {
    std::fprintf(stderr,
                 "warning: contrastive attention at layer %s is entirely non-positive; "
                 "returning a zero map\n",
                 target_layer.c_str());
  }
  return {target_layer, std::move(truncated)};
}

AttentionMap mwp_to_attention_map(const MWPField& field, int out_h, int out_w,
                                  const std::string& signal_descriptor) {
  if (field.values.ndim() != 3) {
    throw ShapeMismatch("attention maps need a spatial c x h x w field, got " +
                        field.values.shape_str());
  }
  Tensor summed = channel_sum(field.values);
  return {bicubic_resize(summed, out_h, out_w, true), field.layer_id, signal_descriptor};
}

AttentionMap combine_maps(const std::vector<AttentionMap>& maps,
                          const std::vector<double>& weights) {
  if (maps.empty()) throw ShapeMismatch("combine_maps needs at least one map");
  if (maps.size() != weights.size()) {
    throw ShapeMismatch("combine_maps got " + std::to_string(maps.size()) + " maps and " +
                        std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw NegativeWeight("map weights must be non-negative");
    total += w;
  }
  Tensor out(maps[0].values.shape());
  for (std::size_t k = 0; k < maps.size(); ++k) {
    if (!maps[k].values.same_shape(out)) {
      throw ShapeMismatch("combine_maps: map extents differ");
    }
    if (weights[k] == 0.0) continue;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += weights[k] * maps[k].values[i];
  }
  if (total > 0.0) {
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= total;
  }
  return {std::move(out), maps[0].source_layer, "combined"};
}

}  // namespace ebnet
