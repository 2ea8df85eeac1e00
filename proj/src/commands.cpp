#include "ebnet/commands.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <thread>

#include "ebnet/eval.hpp"
#include "ebnet/excitation.hpp"
#include "ebnet/image_io.hpp"
#include "ebnet/model.hpp"
#include "ebnet/resize.hpp"
#include "ebnet/wta_oracle.hpp"

namespace ebnet {

using json = nlohmann::ordered_json;

namespace {

namespace fs = std::filesystem;

void emit_report(const json& report, const RunConfig& cfg, const std::string& name) {
  const std::string text = report.dump(2) + "\n";
  std::fputs(text.c_str(), stdout);
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    std::ofstream out(fs::path(cfg.out) / name);
    if (!out) throw IoError("cannot write report under " + cfg.out);
    out << text;
  }
}

Tensor preprocess(const ModelBundle& model, Tensor image, int resize) {
  if (resize > 0) {
    const int h = image.dim(1), w = image.dim(2);
    const double scale = static_cast<double>(resize) / std::min(h, w);
    const int oh = h <= w ? resize : static_cast<int>(std::lround(h * scale));
    const int ow = w <= h ? resize : static_cast<int>(std::lround(w * scale));
    image = bicubic_resize(image, oh, ow, false);
  }
  if (!model.mean.empty()) {
    if (static_cast<int>(model.mean.size()) != image.dim(0)) {
      throw ShapeMismatch("model mean has " + std::to_string(model.mean.size()) +
                          " channels, image has " + std::to_string(image.dim(0)));
    }
    const std::int64_t plane = static_cast<std::int64_t>(image.dim(1)) * image.dim(2);
    for (int c = 0; c < image.dim(0); ++c) {
      for (std::int64_t i = 0; i < plane; ++i) image[c * plane + i] -= model.mean[c];
    }
  }
  return image;
}

std::string resolve_target_layer(const ModelBundle& model, const RunConfig& cfg) {
  if (!cfg.layer.empty()) return cfg.layer;
  if (!model.attention_layer.empty()) return model.attention_layer;
  throw UnknownLayer("no --layer given and the model names no attention layer");
}

AttentionMap attention_for(const ModelBundle& model, const ActivationCache& cache,
                           const TopDownSignal& signal, const std::string& target,
                           bool contrastive, double lambda, int out_h, int out_w,
                           const std::string& descriptor) {
  const MWPField field = contrastive
                             ? contrastive_backprop(model, cache, signal, target, lambda)
                             : excitation_backprop(model, cache, signal, target, lambda);
  return mwp_to_attention_map(field, out_h, out_w, descriptor);
}

// ---- activation cache files -------------------------------------------------

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void put_i64(std::ofstream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

void put_str(std::ofstream& out, const std::string& s) {
  put_i64(out, static_cast<std::int64_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensor(std::ofstream& out, const Tensor& t) {
  put_i64(out, t.ndim());
  for (int d = 0; d < t.ndim(); ++d) put_i64(out, t.dim(d));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * 8));
}

bool get_i64(std::ifstream& in, std::int64_t* v) {
  in.read(reinterpret_cast<char*>(v), 8);
  return in.gcount() == 8;
}

bool get_str(std::ifstream& in, std::string* s) {
  std::int64_t n = 0;
  if (!get_i64(in, &n) || n < 0 || n > 4096) return false;
  s->resize(static_cast<std::size_t>(n));
  in.read(s->data(), n);
  return in.gcount() == n;
}

bool get_tensor(std::ifstream& in, Tensor* t) {
  std::int64_t nd = 0;
  if (!get_i64(in, &nd) || nd < 1 || nd > 8) return false;
  std::vector<int> shape;
  for (std::int64_t d = 0; d < nd; ++d) {
    std::int64_t e = 0;
    if (!get_i64(in, &e) || e < 1 || e > (1 << 24)) return false;
    shape.push_back(static_cast<int>(e));
  }
  Tensor tmp(shape);
  in.read(reinterpret_cast<char*>(tmp.data()),
          static_cast<std::streamsize>(tmp.numel() * 8));
  if (in.gcount() != static_cast<std::streamsize>(tmp.numel() * 8)) return false;
  *t = std::move(tmp);
  return true;
}

void write_cache_file(const std::string& path, const ActivationCache& cache) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return;  // cache is best-effort
  out.write("EBCACHE1", 8);
  put_i64(out, static_cast<std::int64_t>(cache.input_shape.size()));
  for (int d : cache.input_shape) put_i64(out, d);
  put_i64(out, static_cast<std::int64_t>(cache.responses.size()));
  for (const auto& [id, t] : cache.responses) {
    put_str(out, id);
    put_tensor(out, t);
  }
  put_i64(out, static_cast<std::int64_t>(cache.masks.size()));
  for (const auto& [id, mask] : cache.masks) {
    put_str(out, id);
    put_i64(out, static_cast<std::int64_t>(mask.shape.size()));
    for (int d : mask.shape) put_i64(out, d);
    put_i64(out, static_cast<std::int64_t>(mask.indices.size()));
    out.write(reinterpret_cast<const char*>(mask.indices.data()),
              static_cast<std::streamsize>(mask.indices.size() * 8));
  }
}

bool read_cache_file(const std::string& path, const ModelBundle& model, ActivationCache* cache) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::string(magic, 8) != "EBCACHE1") return false;

  ActivationCache got;
  std::int64_t n = 0;
  if (!get_i64(in, &n) || n < 1 || n > 8) return false;
  for (std::int64_t d = 0; d < n; ++d) {
    std::int64_t e = 0;
    if (!get_i64(in, &e)) return false;
    got.input_shape.push_back(static_cast<int>(e));
  }
  if (!get_i64(in, &n) || n < 0) return false;
  for (std::int64_t i = 0; i < n; ++i) {
    std::string id;
    Tensor t({1});
    if (!get_str(in, &id) || !get_tensor(in, &t)) return false;
    got.responses.emplace(std::move(id), std::move(t));
  }
  if (!get_i64(in, &n) || n < 0) return false;
  for (std::int64_t i = 0; i < n; ++i) {
    std::string id;
    PoolMask mask;
    std::int64_t nd = 0, cnt = 0;
    if (!get_str(in, &id) || !get_i64(in, &nd) || nd < 1 || nd > 8) return false;
    for (std::int64_t d = 0; d < nd; ++d) {
      std::int64_t e = 0;
      if (!get_i64(in, &e)) return false;
      mask.shape.push_back(static_cast<int>(e));
    }
    if (!get_i64(in, &cnt) || cnt < 0) return false;
    mask.indices.resize(static_cast<std::size_t>(cnt));
    in.read(reinterpret_cast<char*>(mask.indices.data()),
            static_cast<std::streamsize>(cnt * 8));
    if (in.gcount() != static_cast<std::streamsize>(cnt * 8)) return false;
    got.masks.emplace(std::move(id), std::move(mask));
  }

  // the cache must cover this exact model
  for (const LayerSpec& L : model.layers) {
    const auto it = got.responses.find(L.id);
    if (it == got.responses.end() || it->second.shape() != L.out_shape) return false;
    if (L.kind == LayerKind::MaxPool && got.masks.count(L.id) == 0) return false;
  }
  *cache = std::move(got);
  return true;
}

ActivationCache cached_forward(const ModelBundle& model, const Tensor& input,
                               const std::string& cache_key) {
  const char* dir = std::getenv("EBNET_CACHE_DIR");
  if (dir == nullptr || *dir == '\0') return forward(model, input);

  char name[32];
  std::snprintf(name, sizeof name, "%016llx.ebcache",
                static_cast<unsigned long long>(fnv1a(cache_key)));
  const std::string path = (fs::path(dir) / name).string();
  ActivationCache cache;
  if (read_cache_file(path, model, &cache)) return cache;
  cache = forward(model, input);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!ec) write_cache_file(path, cache);
  return cache;
}

// ---- signals ----------------------------------------------------------------

TopDownSignal build_signal(const ModelBundle& model, const RunConfig& cfg,
                           std::string* descriptor) {
  const bool have_classes = !cfg.class_indices.empty();
  const bool have_map = !cfg.signal_map.empty();
  if (have_classes == have_map) {
    throw ParseError("give exactly one of --class and --signal-map");
  }
  if (have_map) {
    const Tensor raw = read_ebmap(cfg.signal_map);
    const LayerSpec& out = model.layer(model.output_layer);
    if (raw.numel() != shape_numel(out.out_shape)) {
      throw ShapeMismatch("signal map has " + std::to_string(raw.numel()) +
                          " values, output layer has " +
                          std::to_string(shape_numel(out.out_shape)));
    }
    *descriptor = "map:" + cfg.signal_map;
    return signal_from_map(model, model.output_layer, raw.reshaped(out.out_shape), true);
  }
  std::string desc = "class";
  for (std::int64_t c : cfg.class_indices) desc += " " + std::to_string(c);
  *descriptor = desc;
  return class_signal(model, cfg.class_indices, cfg.class_weights);
}

json bbox_json(const BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

BBox region_box(const GroundTruthRegion& r) {
  if (r.bbox) return *r.bbox;
  const Tensor& m = *r.mask;
  const int h = m.dim(1), w = m.dim(2);
  BBox b{w, h, -1, -1};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (m[static_cast<std::int64_t>(y) * w + x] != 0.0) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
    }
  }
  if (b.x1 < 0) throw EmptyProposal("ground-truth mask has no set pixels");
  return b;
}

void run_parallel(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& th : pool) th.join();
}

int class_index_for(const DatasetManifest& manifest, const ModelBundle& model,
                    const std::string& category) {
  const auto it = std::find(manifest.categories.begin(), manifest.categories.end(), category);
  if (it == manifest.categories.end()) {
    throw EmptyCategory("category '" + category + "' is not in the manifest list");
  }
  const int idx = static_cast<int>(it - manifest.categories.begin());
  const std::int64_t n = shape_numel(model.layer(model.output_layer).out_shape);
  if (idx >= n) {
    throw IndexOutOfRange("category '" + category + "' needs class index " +
                          std::to_string(idx) + ", output layer has " + std::to_string(n));
  }
  return idx;
}

}  // namespace

// ---- attend -----------------------------------------------------------------

int cmd_attend(const RunConfig& cfg) {
  const ModelBundle model = load_model_files(cfg.model, cfg.weights);
  const Tensor raw = read_pnm(cfg.image);
  const int orig_h = raw.dim(1), orig_w = raw.dim(2);
  const Tensor input = preprocess(model, raw, cfg.resize);

  const std::string cache_key =
      cfg.model + "|" + cfg.image + "|" + std::to_string(cfg.resize);
  const ActivationCache cache = cached_forward(model, input, cache_key);

  std::string descriptor;
  const TopDownSignal signal = build_signal(model, cfg, &descriptor);
  if (cfg.contrastive) descriptor = "contrastive " + descriptor;
  const std::string target = resolve_target_layer(model, cfg);

  const MWPField field = cfg.contrastive
                             ? contrastive_backprop(model, cache, signal, target, cfg.shift_lambda)
                             : excitation_backprop(model, cache, signal, target, cfg.shift_lambda);
  const AttentionMap map = mwp_to_attention_map(field, orig_h, orig_w, descriptor);

  if (cfg.out.empty()) throw IoError("attend needs --out for the map files");
  fs::create_directories(cfg.out);
  const std::string stem = fs::path(cfg.image).stem().string();
  const std::string mode = cfg.contrastive ? "cmwp" : "mwp";
  const std::string pgm = (fs::path(cfg.out) / (stem + "_" + mode + ".pgm")).string();
  const std::string ebmap = (fs::path(cfg.out) / (stem + "_" + mode + ".ebmap")).string();
  write_pgm16_scaled(pgm, map.values);
  write_ebmap(ebmap, map.values);

  json report;
  report["command"] = "attend";
  report["image"] = cfg.image;
  report["model"] = cfg.model;
  report["layer"] = target;
  report["signal"] = descriptor;
  report["contrastive"] = cfg.contrastive;
  report["lambda"] = cfg.shift_lambda;
  report["signal_mass"] = signal.mass();
  report["mass_retained"] = field.mass();
  report["map_extents"] = json::array({orig_h, orig_w});
  report["pgm"] = pgm;
  report["ebmap"] = ebmap;
  report["errors"] = json::array();
  emit_report(report, cfg, stem + "_" + mode + ".json");
  return 0;
}

// ---- oracle-check -----------------------------------------------------------

namespace {

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

// infinity-norm relative disagreement between engine values and oracle values
double layer_error(const Tensor& engine, const std::vector<double>& oracle) {
  double denom = max_abs(oracle);
  double worst = 0.0;
  for (std::int64_t i = 0; i < engine.numel(); ++i) {
    worst = std::max(worst, std::fabs(engine[i] - oracle[static_cast<std::size_t>(i)]));
  }
  if (denom == 0.0) return worst == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return worst / denom;
}

}  // namespace

int cmd_oracle_check(const RunConfig& cfg) {
  const ModelBundle model = load_model_files(cfg.model, cfg.weights);
  const LayerSpec& input_layer = [&]() -> const LayerSpec& {
    for (const LayerSpec& L : model.layers) {
      if (L.kind == LayerKind::Input) return L;
    }
    throw ParseError("model has no input layer");
  }();

  Tensor input(input_layer.out_shape);
  if (!cfg.image.empty()) {
    input = preprocess(model, read_pnm(cfg.image), cfg.resize);
  } else {
    std::mt19937_64 rng(cfg.seed);
    for (std::int64_t i = 0; i < input.numel(); ++i) {
      input[i] = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }
  }

  const ActivationCache cache = forward(model, input);
  const ChainModel chain = build_chain(model, cache, cfg.shift_lambda, cfg.max_states);
  const int signal_idx = model.layer_index(model.output_layer);

  json signals = json::array();
  double worst = 0.0;
  bool ok = true;
  for (int r = 0; r < cfg.oracle_signals; ++r) {
    const LayerSpec& out_layer = model.layer(model.output_layer);
    Tensor values(out_layer.out_shape);
    std::mt19937_64 rng(cfg.seed + 1000003ull * static_cast<std::uint64_t>(r + 1));
    for (std::int64_t i = 0; i < values.numel(); ++i) {
      values[i] = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }
    const TopDownSignal signal = signal_from_map(model, model.output_layer, values, true);
    const std::vector<double> visits = expected_visits(chain, start_from_signal(chain, signal));

    double sig_worst = 0.0;
    for (const auto& [layer_id, span] : chain.layer_span) {
      if (model.layer_index(layer_id) > signal_idx) continue;
      const MWPField field =
          excitation_backprop(model, cache, signal, layer_id, cfg.shift_lambda);
      sig_worst = std::max(sig_worst, layer_error(field.values, layer_visits(chain, visits, layer_id)));
    }
    worst = std::max(worst, sig_worst);
    signals.push_back({{"signal", r}, {"max_relative_error", sig_worst}});
    if (!(sig_worst <= 1e-9)) ok = false;
  }

  json report;
  report["command"] = "oracle-check";
  report["model"] = cfg.model;
  report["states"] = chain.n_states();
  report["signals"] = signals;
  report["max_relative_error"] = worst;
  report["tolerance"] = 1e-9;
  report["pass"] = ok;

  if (cfg.samples > 0) {
    const TopDownSignal signal =
        class_signal(model, {0});  // deterministic start for the sampling check
    const std::vector<double> start = start_from_signal(chain, signal);
    const std::vector<double> visits = expected_visits(chain, start);
    const std::vector<std::int64_t> counts =
        sample_winner_paths(chain, start, cfg.samples, cfg.seed);
    std::int64_t tested = 0, within = 0;
    for (int s = 0; s < chain.n_states(); ++s) {
      const double p = std::clamp(visits[static_cast<std::size_t>(s)], 0.0, 1.0);
      if (p < 1e-3) continue;
      ++tested;
      const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(cfg.samples));
      const double freq = static_cast<double>(counts[static_cast<std::size_t>(s)]) /
                          static_cast<double>(cfg.samples);
      if (std::fabs(freq - p) <= 3.0 * sigma) ++within;
    }
    const double fraction = tested == 0 ? 1.0 : static_cast<double>(within) / tested;
    const bool mc_ok = fraction >= 0.99;
    report["sampling"] = {{"samples", cfg.samples},
                          {"states_tested", tested},
                          {"within_3_sigma", within},
                          {"fraction", fraction},
                          {"pass", mc_ok}};
    ok = ok && mc_ok;
    report["pass"] = ok;
  }

  emit_report(report, cfg, "oracle_check.json");
  return ok ? 0 : 1;
}

// ---- point-game -------------------------------------------------------------

namespace {

json report_of(const PointingReport& r) {
  json per = json::array();
  for (const CategoryAccuracy& c : r.per_category) {
    per.push_back({{"category", c.category},
                   {"hits", c.hits},
                   {"misses", c.misses},
                   {"accuracy", c.accuracy}});
  }
  return {{"per_category", per}, {"mean_accuracy", r.mean_accuracy}};
}

}  // namespace

int cmd_point_game(const RunConfig& cfg) {
  const ModelBundle model = load_model_files(cfg.model, cfg.weights);
  const DatasetManifest manifest = load_dataset_jsonl(cfg.manifest);
  const std::string target = resolve_target_layer(model, cfg);
  const int n = static_cast<int>(manifest.entries.size());

  struct EntryOutcome {
    std::vector<std::pair<std::string, bool>> mwp, cmwp;
    std::string error;
  };
  std::vector<EntryOutcome> outcomes(static_cast<std::size_t>(n));

  run_parallel(n, cfg.jobs, [&](int i) {
    EntryOutcome& out = outcomes[static_cast<std::size_t>(i)];
    const DatasetEntry& entry = manifest.entries[static_cast<std::size_t>(i)];
    try {
      const Tensor raw = read_pnm(entry.image_path);
      const Tensor input = preprocess(model, raw, cfg.resize);
      const ActivationCache cache = forward(model, input);
      for (const std::string& category : entry.categories) {
        const int cls = class_index_for(manifest, model, category);
        const TopDownSignal signal = class_signal(model, {cls});
        std::vector<GroundTruthRegion> regions;
        for (const GroundTruthRegion& r : entry.regions) {
          if (r.category == category) regions.push_back(r);
        }
        const AttentionMap mwp = attention_for(model, cache, signal, target, false,
                                               cfg.shift_lambda, entry.height, entry.width,
                                               category);
        const AttentionMap cmwp = attention_for(model, cache, signal, target, true,
                                                cfg.shift_lambda, entry.height, entry.width,
                                                category);
        out.mwp.emplace_back(category, pointing_hit(mwp, regions, cfg.margin_px));
        out.cmwp.emplace_back(category, pointing_hit(cmwp, regions, cfg.margin_px));
      }
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });

  json errors = json::array();
  std::vector<std::pair<std::string, bool>> mwp_results, cmwp_results;
  for (int i = 0; i < n; ++i) {
    const EntryOutcome& out = outcomes[static_cast<std::size_t>(i)];
    if (!out.error.empty()) {
      errors.push_back({{"entry", i}, {"error", out.error}});
      continue;
    }
    mwp_results.insert(mwp_results.end(), out.mwp.begin(), out.mwp.end());
    cmwp_results.insert(cmwp_results.end(), out.cmwp.begin(), out.cmwp.end());
  }

  // the difficult subset keeps its own category list; hits are reused
  const DatasetManifest difficult = filter_difficult(manifest);
  std::vector<std::pair<std::string, bool>> mwp_diff, cmwp_diff;
  {
    std::map<std::string, const DatasetEntry*> by_image;
    for (const DatasetEntry& e : difficult.entries) by_image.emplace(e.image, &e);
    for (int i = 0; i < n; ++i) {
      const EntryOutcome& out = outcomes[static_cast<std::size_t>(i)];
      if (!out.error.empty()) continue;
      const auto it = by_image.find(manifest.entries[static_cast<std::size_t>(i)].image);
      if (it == by_image.end()) continue;
      for (const auto& [category, hit] : out.mwp) {
        if (std::find(it->second->categories.begin(), it->second->categories.end(), category) !=
            it->second->categories.end()) {
          mwp_diff.emplace_back(category, hit);
        }
      }
      for (const auto& [category, hit] : out.cmwp) {
        if (std::find(it->second->categories.begin(), it->second->categories.end(), category) !=
            it->second->categories.end()) {
          cmwp_diff.emplace_back(category, hit);
        }
      }
    }
  }
  std::vector<std::string> difficult_categories;
  for (const DatasetEntry& e : difficult.entries) {
    for (const std::string& c : e.categories) {
      if (std::find(difficult_categories.begin(), difficult_categories.end(), c) ==
          difficult_categories.end()) {
        difficult_categories.push_back(c);
      }
    }
  }

  json report;
  report["command"] = "point-game";
  report["model"] = cfg.model;
  report["manifest"] = cfg.manifest;
  report["layer"] = target;
  report["margin"] = cfg.margin_px;
  report["mwp"]["full"] = report_of(pointing_game(mwp_results, manifest.categories));
  report["cmwp"]["full"] = report_of(pointing_game(cmwp_results, manifest.categories));
  if (!difficult_categories.empty()) {
    report["mwp"]["difficult"] = report_of(pointing_game(mwp_diff, difficult_categories));
    report["cmwp"]["difficult"] = report_of(pointing_game(cmwp_diff, difficult_categories));
  } else {
    report["mwp"]["difficult"] = nullptr;
    report["cmwp"]["difficult"] = nullptr;
  }
  report["difficult_entries"] = difficult.entries.size();
  report["errors"] = errors;
  emit_report(report, cfg, "point_game.json");
  return errors.empty() ? 0 : 1;
}

// ---- locate -----------------------------------------------------------------

int cmd_locate(const RunConfig& cfg) {
  const ModelBundle model = load_model_files(cfg.model, cfg.weights);
  const DatasetManifest manifest = load_dataset_jsonl(cfg.manifest);
  const std::string target = resolve_target_layer(model, cfg);
  const int n = static_cast<int>(manifest.entries.size());

  std::vector<double> alphas = cfg.alphas;
  if (alphas.empty()) {
    for (int i = 0; i <= 20; ++i) alphas.push_back(0.5 * i);
  }

  struct EntryOutcome {
    std::vector<std::optional<BBox>> boxes;  // one per alpha
    std::vector<BBox> gt;
    std::string map_file;
    std::string error;
  };
  std::vector<EntryOutcome> outcomes(static_cast<std::size_t>(n));

  if (cfg.dump_maps && cfg.out.empty()) {
    throw IoError("--dump-maps needs --out");
  }
  if (!cfg.out.empty()) fs::create_directories(cfg.out);

  run_parallel(n, cfg.jobs, [&](int i) {
    EntryOutcome& out = outcomes[static_cast<std::size_t>(i)];
    const DatasetEntry& entry = manifest.entries[static_cast<std::size_t>(i)];
    try {
      if (entry.categories.size() != 1) {
        throw EmptyCategory("locate expects one dominant category, entry has " +
                            std::to_string(entry.categories.size()));
      }
      const Tensor raw = read_pnm(entry.image_path);
      const Tensor input = preprocess(model, raw, cfg.resize);
      const ActivationCache cache = forward(model, input);
      const int cls = class_index_for(manifest, model, entry.categories[0]);
      const TopDownSignal signal = class_signal(model, {cls});
      const AttentionMap map =
          attention_for(model, cache, signal, target, cfg.contrastive, cfg.shift_lambda,
                        entry.height, entry.width, entry.categories[0]);
      if (cfg.dump_maps) {
        char name[32];
        std::snprintf(name, sizeof name, "map_%04d.ebmap", i);
        out.map_file = (fs::path(cfg.out) / name).string();
        write_ebmap(out.map_file, map.values);
      }
      for (const GroundTruthRegion& r : entry.regions) out.gt.push_back(region_box(r));
      for (double alpha : alphas) {
        try {
          out.boxes.emplace_back(extract_bbox(map, alpha));
        } catch (const EmptyAttention&) {
          out.boxes.emplace_back(std::nullopt);
        }
      }
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });

  json errors = json::array();
  json entries = json::array();
  std::vector<std::int64_t> misses(alphas.size(), 0);
  std::int64_t evaluated = 0;
  for (int i = 0; i < n; ++i) {
    const EntryOutcome& out = outcomes[static_cast<std::size_t>(i)];
    if (!out.error.empty()) {
      errors.push_back({{"entry", i}, {"error", out.error}});
      continue;
    }
    ++evaluated;
    json boxes = json::array();
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      if (!out.boxes[a]) {
        boxes.push_back(nullptr);
        ++misses[a];
        continue;
      }
      boxes.push_back(bbox_json(*out.boxes[a]));
      bool hit = false;
      for (const BBox& g : out.gt) {
        if (iou(*out.boxes[a], g) >= 0.5) {
          hit = true;
          break;
        }
      }
      if (!hit) ++misses[a];
    }
    json gt = json::array();
    for (const BBox& g : out.gt) gt.push_back(bbox_json(g));
    json entry_json = {{"entry", i},
                       {"image", manifest.entries[static_cast<std::size_t>(i)].image},
                       {"gt", gt},
                       {"boxes", boxes}};
    if (!out.map_file.empty()) entry_json["map"] = out.map_file;
    entries.push_back(std::move(entry_json));
  }

  json rates = json::array();
  double best_rate = 2.0;
  double best_alpha = 0.0;
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    const double rate =
        evaluated == 0 ? 1.0 : static_cast<double>(misses[a]) / static_cast<double>(evaluated);
    rates.push_back(rate);
    if (rate < best_rate) {
      best_rate = rate;
      best_alpha = alphas[a];
    }
  }

  json report;
  report["command"] = "locate";
  report["model"] = cfg.model;
  report["manifest"] = cfg.manifest;
  report["layer"] = target;
  report["contrastive"] = cfg.contrastive;
  report["alphas"] = alphas;
  report["error_rates"] = rates;
  report["best_alpha"] = best_alpha;
  report["best_error_rate"] = best_rate;
  report["entries"] = entries;
  report["errors"] = errors;
  emit_report(report, cfg, "locate.json");
  return errors.empty() ? 0 : 1;
}

// ---- score-proposals ----------------------------------------------------------

int cmd_score_proposals(const RunConfig& cfg) {
  const ModelBundle model = load_model_files(cfg.model, cfg.weights);
  const DatasetManifest manifest = load_dataset_jsonl(cfg.manifest);
  const std::map<std::string, std::vector<Segment>> proposals =
      load_proposals_jsonl(cfg.proposals);
  const std::string target = resolve_target_layer(model, cfg);
  const int n = static_cast<int>(manifest.entries.size());
  const std::vector<int> ks = {1, 5, 10};

  struct EntryOutcome {
    std::vector<ScoredBox> boxes;
    std::vector<int> recall;
    std::string error;
  };
  std::vector<EntryOutcome> outcomes(static_cast<std::size_t>(n));

  run_parallel(n, cfg.jobs, [&](int i) {
    EntryOutcome& out = outcomes[static_cast<std::size_t>(i)];
    const DatasetEntry& entry = manifest.entries[static_cast<std::size_t>(i)];
    try {
      const auto found = proposals.find(entry.image);
      if (found == proposals.end() || found->second.empty()) {
        throw EmptyProposal("no proposals for image " + entry.image);
      }
      const Tensor raw = read_pnm(entry.image_path);
      const Tensor input = preprocess(model, raw, cfg.resize);
      const ActivationCache cache = forward(model, input);

      // one map per category present, averaged
      std::vector<AttentionMap> maps;
      std::vector<double> weights;
      for (const std::string& category : entry.categories) {
        const int cls = class_index_for(manifest, model, category);
        const TopDownSignal signal = class_signal(model, {cls});
        maps.push_back(attention_for(model, cache, signal, target, cfg.contrastive,
                                     cfg.shift_lambda, entry.height, entry.width, category));
        weights.push_back(1.0);
      }
      if (maps.empty()) throw EmptyCategory("entry lists no categories");
      const AttentionMap map = combine_maps(maps, weights);

      out.boxes = nms(score_segments(map, found->second, cfg.gamma), 0.7);
      std::vector<BBox> gt;
      for (const GroundTruthRegion& r : entry.regions) gt.push_back(region_box(r));
      for (int k : ks) out.recall.push_back(recall_at_k(out.boxes, gt, k, 0.5));
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });

  json errors = json::array();
  json entries = json::array();
  std::vector<std::int64_t> recall_sum(ks.size(), 0);
  std::int64_t evaluated = 0;
  for (int i = 0; i < n; ++i) {
    const EntryOutcome& out = outcomes[static_cast<std::size_t>(i)];
    if (!out.error.empty()) {
      errors.push_back({{"entry", i}, {"error", out.error}});
      continue;
    }
    ++evaluated;
    json boxes = json::array();
    const std::size_t shown = std::min<std::size_t>(out.boxes.size(), 10);
    for (std::size_t b = 0; b < shown; ++b) {
      boxes.push_back({{"bbox", bbox_json(out.boxes[b].box)}, {"score", out.boxes[b].score}});
    }
    json recalls;
    for (std::size_t k = 0; k < ks.size(); ++k) {
      recalls["recall@" + std::to_string(ks[k])] = out.recall[k];
      recall_sum[k] += out.recall[k];
    }
    entries.push_back({{"entry", i},
                       {"image", manifest.entries[static_cast<std::size_t>(i)].image},
                       {"boxes", boxes},
                       {"recall", recalls}});
  }

  json report;
  report["command"] = "score-proposals";
  report["model"] = cfg.model;
  report["manifest"] = cfg.manifest;
  report["proposals"] = cfg.proposals;
  report["layer"] = target;
  report["gamma"] = cfg.gamma;
  report["contrastive"] = cfg.contrastive;
  for (std::size_t k = 0; k < ks.size(); ++k) {
    report["mean_recall@" + std::to_string(ks[k])] =
        evaluated == 0 ? 0.0
                       : static_cast<double>(recall_sum[k]) / static_cast<double>(evaluated);
  }
  report["entries"] = entries;
  report["errors"] = errors;
  emit_report(report, cfg, "score_proposals.json");
  return errors.empty() ? 0 : 1;
}

}  // namespace ebnet
