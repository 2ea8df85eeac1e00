#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ebnet {

struct RunConfig {
  std::string model;     // manifest path; weights via --weights or its weights_file key
  std::string weights;
  std::string image;     // single-image commands
  std::string manifest;  // dataset JSONL
  std::string proposals;
  std::string out;       // report / map directory

  std::vector<std::int64_t> class_indices;
  std::vector<double> class_weights;
  std::string signal_map;  // EBMAP file injected at the output layer

  std::string layer;  // target layer; default: the model's attention_layer
  bool contrastive = false;
  double shift_lambda = 0.0;

  std::vector<double> alphas;  // locate sweep; empty = 0 to 10 in steps of 0.5
  double gamma = 0.0;
  int margin_px = 15;
  int resize = 0;  // shortest-side resize before the forward pass, 0 = keep

  int oracle_signals = 5;
  std::int64_t samples = 0;  // winner-path sampling check, 0 = skip
  int max_states = 5000;
  std::uint64_t seed = 1;

  int jobs = 1;
  bool dump_maps = false;
};

// Each command prints a JSON report to stdout (also written under cfg.out when
// set) and returns 0 iff no per-entry errors occurred.
int cmd_attend(const RunConfig& cfg);
int cmd_oracle_check(const RunConfig& cfg);
int cmd_point_game(const RunConfig& cfg);
int cmd_locate(const RunConfig& cfg);
int cmd_score_proposals(const RunConfig& cfg);

}  // namespace ebnet
