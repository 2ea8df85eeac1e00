#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "ebnet/commands.hpp"
#include "ebnet/errors.hpp"

namespace {

void add_model_flags(CLI::App* cmd, ebnet::RunConfig* cfg) {
  cmd->add_option("--model", cfg->model, "model manifest (json)")->required();
  cmd->add_option("--weights", cfg->weights, "weight blob; default: the manifest's weights_file");
}

void add_signal_flags(CLI::App* cmd, ebnet::RunConfig* cfg) {
  cmd->add_option("--class", cfg->class_indices, "class index at the output layer (repeatable)");
  cmd->add_option("--class-weight", cfg->class_weights, "weight per --class entry");
  cmd->add_option("--signal-map", cfg->signal_map, "EBMAP file injected at the output layer");
}

void add_walk_flags(CLI::App* cmd, ebnet::RunConfig* cfg) {
  cmd->add_option("--layer", cfg->layer, "target layer; default: the model's attention layer");
  cmd->add_option("--lambda", cfg->shift_lambda, "activation shift for non-ReLU nets");
  cmd->add_option("--resize", cfg->resize, "shortest-side resize before the forward pass");
}

void add_batch_flags(CLI::App* cmd, ebnet::RunConfig* cfg) {
  cmd->add_option("--jobs", cfg->jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", cfg->out, "directory for reports and map files");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"top-down neural attention maps and their evaluation protocols"};
  app.require_subcommand(1);
  ebnet::RunConfig cfg;

  CLI::App* attend = app.add_subcommand("attend", "write an attention map for one image");
  add_model_flags(attend, &cfg);
  attend->add_option("--image", cfg.image, "PPM/PGM image")->required();
  add_signal_flags(attend, &cfg);
  add_walk_flags(attend, &cfg);
  attend->add_flag("--contrastive", cfg.contrastive, "contrastive attention");
  attend->add_option("--out", cfg.out, "output directory")->required();

  CLI::App* oracle = app.add_subcommand("oracle-check",
                                        "validate the engine against the chain oracle");
  add_model_flags(oracle, &cfg);
  oracle->add_option("--image", cfg.image, "input image; default: seeded random input");
  oracle->add_option("--signals", cfg.oracle_signals, "random signals to test")
      ->check(CLI::PositiveNumber);
  oracle->add_option("--samples", cfg.samples, "winner-path samples for the stochastic check");
  oracle->add_option("--seed", cfg.seed, "generator seed");
  oracle->add_option("--max-states", cfg.max_states, "oracle state cap");
  add_walk_flags(oracle, &cfg);
  oracle->add_option("--out", cfg.out, "report directory");

  CLI::App* point = app.add_subcommand("point-game", "pointing accuracy over a dataset");
  add_model_flags(point, &cfg);
  point->add_option("--manifest", cfg.manifest, "dataset JSONL")->required();
  point->add_option("--margin", cfg.margin_px, "tolerance margin in pixels");
  add_walk_flags(point, &cfg);
  add_batch_flags(point, &cfg);

  CLI::App* locate = app.add_subcommand("locate", "bounding-box localization alpha sweep");
  add_model_flags(locate, &cfg);
  locate->add_option("--manifest", cfg.manifest, "dataset JSONL")->required();
  locate->add_option("--alpha", cfg.alphas, "sweep values; default 0 to 10 in steps of 0.5")
      ->check(CLI::NonNegativeNumber);
  locate->add_flag("--contrastive", cfg.contrastive, "contrastive attention");
  locate->add_flag("--dump-maps", cfg.dump_maps, "write per-image EBMAP files under --out");
  add_walk_flags(locate, &cfg);
  add_batch_flags(locate, &cfg);

  CLI::App* score = app.add_subcommand("score-proposals", "attention-weighted proposal scoring");
  add_model_flags(score, &cfg);
  score->add_option("--manifest", cfg.manifest, "dataset JSONL")->required();
  score->add_option("--proposals", cfg.proposals, "proposal JSONL")->required();
  score->add_option("--gamma", cfg.gamma, "area penalty exponent");
  score->add_flag("--contrastive", cfg.contrastive, "contrastive attention");
  add_walk_flags(score, &cfg);
  add_batch_flags(score, &cfg);

  CLI11_PARSE(app, argc, argv);

  try {
    if (attend->parsed()) return ebnet::cmd_attend(cfg);
    if (oracle->parsed()) return ebnet::cmd_oracle_check(cfg);
    if (point->parsed()) return ebnet::cmd_point_game(cfg);
    if (locate->parsed()) return ebnet::cmd_locate(cfg);
    if (score->parsed()) return ebnet::cmd_score_proposals(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
