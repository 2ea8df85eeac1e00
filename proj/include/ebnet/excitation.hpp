#pragma once

#include <string>
#include <vector>

#include "ebnet/model.hpp"

namespace ebnet {

// Winning probabilities over one layer's neurons. Mass can only shrink on the
// way down (it leaks at zero-normalizer neurons), never grow.
struct MWPField {
  std::string layer_id;
  Tensor values;

  double mass() const { return values.sum(); }
};

struct AttentionMap {
  Tensor values;  // 1 x H x W
  std::string source_layer;
  std::string signal_descriptor;
};

// One top-down step through an affine layer:
//   W+ = max(W, 0)
//   X  = forward of (bottom_act + lambda) under W+, bias ignored
//   Y  = top_mwp / X, zero where X is zero
//   Z  = backward-data of Y under W+
//   out = (bottom_act + lambda) * Z
// Requires bottom_act + lambda >= 0 elementwise.
Tensor eb_step_affine(const Tensor& bottom_act, const ConvParams& params, const Tensor& top_mwp,
                      double shift_lambda = 0.0);

// Identity: neurons the forward pass zeroed already carry zero probability,
// because the affine step above multiplies by their activation.
Tensor eb_step_relu(const Tensor& top_mwp);

// Each pooled neuron has a single child (its window argmax): copy through the
// recorded mask. Overlapping windows landing on one input accumulate.
Tensor eb_step_maxpool(const Tensor& top_mwp, const PoolMask& mask,
                       const std::vector<int>& bottom_shape);

// The normalization factor is ignored, leaving one child per neuron.
Tensor eb_step_lrn(const Tensor& top_mwp);

// Partition along the channel axis; each slice keeps its mass.
std::vector<Tensor> eb_step_concat(const Tensor& top_mwp,
                                   const std::vector<int>& segment_extents);

// Average pooling is a fixed non-negative affine map (all weights 1/(kh*kw)),
// so it follows the same five-step recipe as eb_step_affine.
Tensor eb_step_avgpool(const Tensor& bottom_act, const PoolParams& pool, const Tensor& top_mwp,
                       double shift_lambda = 0.0);

// Walks top-down from the signal layer, applying the per-kind step and summing
// contributions where a layer feeds several consumers. Probability mass that
// flows into branches from which target_layer is unreachable is dropped, which
// matches the random-walk semantics (those walks never visit the target).
// The target may not be the input layer; attention is not defined on the
// mean-subtracted pixels.
MWPField excitation_backprop(const ModelBundle& model, const ActivationCache& cache,
                             const TopDownSignal& signal, const std::string& target_layer,
                             double shift_lambda = 0.0);

// Contrastive variant: one step under the signal layer's weights, one under
// their negation, subtract, then carry the signed difference down in a single
// pass (every step is linear in the top signal). The signed result is
// truncated at zero at the target layer. The signal layer must be conv or fc.
MWPField contrastive_backprop(const ModelBundle& model, const ActivationCache& cache,
                              const TopDownSignal& signal, const std::string& target_layer,
                              double shift_lambda = 0.0);

// Pre-truncation values, for equivalence checks against the two-pass form.
Tensor contrastive_backprop_signed(const ModelBundle& model, const ActivationCache& cache,
                                   const TopDownSignal& signal, const std::string& target_layer,
                                   double shift_lambda = 0.0);

// Channel sum, then bicubic upsampling to out_h x out_w with negative lobes
// clamped away.
AttentionMap mwp_to_attention_map(const MWPField& field, int out_h, int out_w,
                                  const std::string& signal_descriptor = "");

// Weighted arithmetic mean. All-zero weights yield an all-zero map.
AttentionMap combine_maps(const std::vector<AttentionMap>& maps,
                          const std::vector<double>& weights);

}  // namespace ebnet
