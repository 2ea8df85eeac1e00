#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ebnet/model.hpp"

namespace ebnet {

// Explicit absorbing-chain realization of the top-down winner-take-all walk,
// built by direct scalar evaluation of the per-neuron conditional
// probabilities. Deliberately shares no tensor kernels with the layer-wise
// engine; this is the ground truth the engine is validated against.
//
// States are the output neurons of every non-input, non-softmax layer. Layers
// fed directly by the input layer form the absorbing boundary; every state
// above them is transient. Zero-normalizer neurons route to a single synthetic
// sink, kept as the last absorbing column so each transient row sums to 1.
struct ChainModel {
  int n_transient = 0;
  int n_absorbing = 0;     // real absorbing states; the sink is one extra
  std::vector<double> Q;   // n_transient x n_transient, row-major
  std::vector<double> R;   // n_transient x (n_absorbing + 1), sink column last
  // (layer id, neuron offset) -> state. Transient states first, then
  // absorbing; the sink has no entry.
  std::map<std::pair<std::string, std::int64_t>, int> state_index;
  std::map<std::string, std::pair<int, int>> layer_span;  // id -> (base, count)

  int n_states() const { return n_transient + n_absorbing + 1; }
};

ChainModel build_chain(const ModelBundle& model, const ActivationCache& cache,
                       double shift_lambda = 0.0, int max_states = 5000);

// Solves (I - Q^T) v = s for transient visit counts, then R^T v for absorbing
// mass. Returns [transient..., absorbing..., sink], aligned with state_index.
std::vector<double> expected_visits(const ChainModel& chain,
                                    const std::vector<double>& start_distribution);

// n_samples independent top-to-absorbing walks with a seeded generator;
// returns per-state visit counts over all states including the sink.
std::vector<std::int64_t> sample_winner_paths(const ChainModel& chain,
                                              const std::vector<double>& start_distribution,
                                              std::int64_t n_samples, std::uint64_t seed);

// Start vector over transient states carrying the signal's values.
std::vector<double> start_from_signal(const ChainModel& chain, const TopDownSignal& signal);

// One layer's slice of an expected_visits result, in neuron offset order.
std::vector<double> layer_visits(const ChainModel& chain, const std::vector<double>& visits,
                                 const std::string& layer_id);

// Plain-text triplet dump for debugging.
std::string dump_chain(const ChainModel& chain);

}  // namespace ebnet
