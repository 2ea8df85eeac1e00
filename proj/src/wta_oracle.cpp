#include "ebnet/wta_oracle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace ebnet {

namespace {

bool layer_is_absorbing(const ModelBundle& model, const LayerSpec& L) {
  bool all_pixel = true, any_pixel = false;
  for (const std::string& in : L.inputs) {
    const bool pixel = model.layer(in).kind == LayerKind::Input;
    all_pixel = all_pixel && pixel;
    any_pixel = any_pixel || pixel;
  }
  if (any_pixel && !all_pixel) {
    throw UnsupportedLayerKind(L.id + ": mixes pixel inputs with layer inputs");
  }
  return any_pixel;
}

double unit_interval(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

ChainModel build_chain(const ModelBundle& model, const ActivationCache& cache,
                       double shift_lambda, int max_states) {
  std::vector<int> transient_layers, absorbing_layers;
  std::int64_t n_t = 0, n_a = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& L = model.layers[i];
    if (L.kind == LayerKind::Input || L.kind == LayerKind::Softmax) continue;
    if (layer_is_absorbing(model, L)) {
      absorbing_layers.push_back(static_cast<int>(i));
      n_a += shape_numel(L.out_shape);
    } else {
      transient_layers.push_back(static_cast<int>(i));
      n_t += shape_numel(L.out_shape);
    }
  }
  if (n_t + n_a > max_states) {
    throw TooLarge("chain needs " + std::to_string(n_t + n_a) + " states, cap is " +
                   std::to_string(max_states));
  }

  ChainModel chain;
  chain.n_transient = static_cast<int>(n_t);
  chain.n_absorbing = static_cast<int>(n_a);
  int next = 0;
  const auto assign_states = [&](const std::vector<int>& layer_ids) {
    for (int li : layer_ids) {
      const LayerSpec& L = model.layers[static_cast<std::size_t>(li)];
      const std::int64_t count = shape_numel(L.out_shape);
      chain.layer_span.emplace(L.id, std::make_pair(next, static_cast<int>(count)));
      for (std::int64_t o = 0; o < count; ++o) {
        chain.state_index.emplace(std::make_pair(L.id, o), next++);
      }
    }
  };
  assign_states(transient_layers);
  assign_states(absorbing_layers);

  const int cols_r = chain.n_absorbing + 1;
  chain.Q.assign(static_cast<std::size_t>(chain.n_transient) * chain.n_transient, 0.0);
  chain.R.assign(static_cast<std::size_t>(chain.n_transient) * cols_r, 0.0);
  const int sink = chain.n_transient + chain.n_absorbing;

  const auto state_of = [&](const std::string& layer, std::int64_t offset) {
    return chain.state_index.at(std::make_pair(layer, offset));
  };
  const auto set_prob = [&](int row, int child, double p) {
    if (child < chain.n_transient) {
      chain.Q[static_cast<std::size_t>(row) * chain.n_transient + child] += p;
    } else {
      chain.R[static_cast<std::size_t>(row) * cols_r + (child - chain.n_transient)] += p;
    }
  };

  // one (child state, shifted activation, weight) list per walk step
  struct Child {
    int state;
    double a;
    double w;
  };
  std::vector<Child> children;

  for (int li : transient_layers) {
    const LayerSpec& L = model.layers[static_cast<std::size_t>(li)];
    const int base = chain.layer_span.at(L.id).first;
    const std::int64_t count = shape_numel(L.out_shape);

    switch (L.kind) {
      case LayerKind::Relu:
      case LayerKind::Lrn:
      case LayerKind::DropoutIdentity:
      case LayerKind::Flatten: {
        // single-child pass-through; flat offsets survive reshapes
        for (std::int64_t i = 0; i < count; ++i) {
          set_prob(base + static_cast<int>(i), state_of(L.inputs[0], i), 1.0);
        }
        break;
      }
      case LayerKind::MaxPool: {
        const PoolMask& mask = cache.mask(L.id);
        for (std::int64_t i = 0; i < count; ++i) {
          set_prob(base + static_cast<int>(i),
                   state_of(L.inputs[0], mask.indices[static_cast<std::size_t>(i)]), 1.0);
        }
        break;
      }
      case LayerKind::Concat: {
        const std::int64_t plane =
            static_cast<std::int64_t>(L.out_shape[1]) * L.out_shape[2];
        std::int64_t channel_base = 0;
        for (const std::string& in : L.inputs) {
          const int c_in = model.layer(in).out_shape[0];
          for (std::int64_t c = 0; c < c_in; ++c) {
            for (std::int64_t p = 0; p < plane; ++p) {
              const std::int64_t i = (channel_base + c) * plane + p;
              set_prob(base + static_cast<int>(i), state_of(in, c * plane + p), 1.0);
            }
          }
          channel_base += c_in;
        }
        break;
      }
      case LayerKind::Conv: {
        const ConvParams& cp = model.conv_params(L.id);
        const Tensor& act = cache.response(L.inputs[0]);
        const int C = act.dim(0), H = act.dim(1), W = act.dim(2);
        const int KH = cp.kernel.dim(2), KW = cp.kernel.dim(3);
        const int OH = L.out_shape[1], OW = L.out_shape[2];
        for (int o = 0; o < L.out_shape[0]; ++o) {
          for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
              children.clear();
              double denom = 0.0;
              for (int ic = 0; ic < C; ++ic) {
                for (int ky = 0; ky < KH; ++ky) {
                  const int iy = oy * cp.stride_h - cp.pad_h + ky;
                  if (iy < 0 || iy >= H) continue;
                  for (int kx = 0; kx < KW; ++kx) {
                    const int ix = ox * cp.stride_w - cp.pad_w + kx;
                    if (ix < 0 || ix >= W) continue;
                    const std::int64_t off =
                        (static_cast<std::int64_t>(ic) * H + iy) * W + ix;
                    const double a = act[off] + shift_lambda;
                    if (a < 0.0) {
                      throw NegativeActivation(L.inputs[0] + ": activation " +
                                               std::to_string(act[off]) +
                                               " + lambda is negative");
                    }
                    const double w = cp.kernel.at4(o, ic, ky, kx);
                    if (w <= 0.0) continue;
                    children.push_back({state_of(L.inputs[0], off), a, w});
                    denom += a * w;
                  }
                }
              }
              const int row =
                  base + (static_cast<int>(o) * OH + oy) * OW + ox;
              if (denom == 0.0) {
                set_prob(row, sink, 1.0);
              } else {
                for (const Child& ch : children) set_prob(row, ch.state, ch.a * ch.w / denom);
              }
            }
          }
        }
        break;
      }
      case LayerKind::Fc: {
        const ConvParams& cp = model.conv_params(L.id);
        const Tensor& act = cache.response(L.inputs[0]);
        const std::int64_t in_n = act.numel();
        for (std::int64_t o = 0; o < count; ++o) {
          children.clear();
          double denom = 0.0;
          for (std::int64_t j = 0; j < in_n; ++j) {
            const double a = act[j] + shift_lambda;
            if (a < 0.0) {
              throw NegativeActivation(L.inputs[0] + ": activation " + std::to_string(act[j]) +
                                       " + lambda is negative");
            }
            const double w = cp.kernel[o * in_n + j];
            if (w <= 0.0) continue;
            children.push_back({state_of(L.inputs[0], j), a, w});
            denom += a * w;
          }
          const int row = base + static_cast<int>(o);
          if (denom == 0.0) {
            set_prob(row, sink, 1.0);
          } else {
            for (const Child& ch : children) set_prob(row, ch.state, ch.a * ch.w / denom);
          }
        }
        break;
      }
      case LayerKind::AvgPool: {
        const Tensor& act = cache.response(L.inputs[0]);
        const int H = act.dim(1), W = act.dim(2);
        const int OH = L.out_shape[1], OW = L.out_shape[2];
        const double w = 1.0 / (L.pool.window_h * L.pool.window_w);
        for (int c = 0; c < L.out_shape[0]; ++c) {
          for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
              children.clear();
              double denom = 0.0;
              for (int ky = 0; ky < L.pool.window_h; ++ky) {
                const int iy = oy * L.pool.stride_h - L.pool.pad_h + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < L.pool.window_w; ++kx) {
                  const int ix = ox * L.pool.stride_w - L.pool.pad_w + kx;
                  if (ix < 0 || ix >= W) continue;
                  const std::int64_t off = (static_cast<std::int64_t>(c) * H + iy) * W + ix;
                  const double a = act[off] + shift_lambda;
                  if (a < 0.0) {
                    throw NegativeActivation(L.inputs[0] + ": activation " +
                                             std::to_string(act[off]) + " + lambda is negative");
                  }
                  children.push_back({state_of(L.inputs[0], off), a, w});
                  denom += a * w;
                }
              }
              const int row = base + (static_cast<int>(c) * OH + oy) * OW + ox;
              if (denom == 0.0) {
                set_prob(row, sink, 1.0);
              } else {
                for (const Child& ch : children) set_prob(row, ch.state, ch.a * ch.w / denom);
              }
            }
          }
        }
        break;
      }
      case LayerKind::Input:
      case LayerKind::Softmax:
        break;  // never transient
    }
  }
  return chain;
}

std::vector<double> expected_visits(const ChainModel& chain,
                                    const std::vector<double>& start_distribution) {
  const int n_t = chain.n_transient;
  const int cols_r = chain.n_absorbing + 1;
  if (static_cast<int>(start_distribution.size()) != n_t) {
    throw ShapeMismatch("start distribution has " + std::to_string(start_distribution.size()) +
                        " entries, chain has " + std::to_string(n_t) + " transient states");
  }
  for (double v : start_distribution) {
    if (v < 0.0) throw NegativeWeight("start distribution must be non-negative");
  }

  std::vector<double> out(static_cast<std::size_t>(chain.n_states()), 0.0);
  if (n_t > 0) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n_t, n_t);
    for (int i = 0; i < n_t; ++i) {
      for (int j = 0; j < n_t; ++j) {
        A(i, j) -= chain.Q[static_cast<std::size_t>(j) * n_t + i];
      }
    }
    Eigen::VectorXd s(n_t);
    for (int i = 0; i < n_t; ++i) s(i) = start_distribution[static_cast<std::size_t>(i)];

    const Eigen::VectorXd v = Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(s);
    const double residual = (A * v - s).lpNorm<Eigen::Infinity>();
    const double scale = std::max(1.0, s.lpNorm<Eigen::Infinity>());
    if (!(residual <= 1e-8 * scale) || !v.allFinite()) {
      throw SingularSystem("visit system residual " + std::to_string(residual));
    }

    for (int i = 0; i < n_t; ++i) out[static_cast<std::size_t>(i)] = v(i);
    for (int k = 0; k < cols_r; ++k) {
      double mass = 0.0;
      for (int i = 0; i < n_t; ++i) {
        mass += chain.R[static_cast<std::size_t>(i) * cols_r + k] * v(i);
      }
      out[static_cast<std::size_t>(n_t + k)] = mass;
    }
  }
  return out;
}

std::vector<std::int64_t> sample_winner_paths(const ChainModel& chain,
                                              const std::vector<double>& start_distribution,
                                              std::int64_t n_samples, std::uint64_t seed) {
  const int n_t = chain.n_transient;
  const int n_states = chain.n_states();
  const int cols_r = chain.n_absorbing + 1;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_states), 0);
  if (static_cast<int>(start_distribution.size()) != n_t) {
    throw ShapeMismatch("start distribution length mismatches the chain");
  }

  std::vector<double> cstart(start_distribution.size());
  double total = 0.0;
  for (std::size_t i = 0; i < start_distribution.size(); ++i) {
    total += start_distribution[i];
    cstart[i] = total;
  }
  if (total <= 0.0 || n_samples < 1) return counts;

  // per-row cumulative distribution over [Q R]
  std::vector<double> cum(static_cast<std::size_t>(n_t) * n_states);
  for (int i = 0; i < n_t; ++i) {
    double run = 0.0;
    double* row = cum.data() + static_cast<std::size_t>(i) * n_states;
    for (int j = 0; j < n_t; ++j) {
      run += chain.Q[static_cast<std::size_t>(i) * n_t + j];
      row[j] = run;
    }
    for (int k = 0; k < cols_r; ++k) {
      run += chain.R[static_cast<std::size_t>(i) * cols_r + k];
      row[n_t + k] = run;
    }
  }

  std::mt19937_64 rng(seed);
  for (std::int64_t s = 0; s < n_samples; ++s) {
    const double u0 = unit_interval(rng) * total;
    int state = static_cast<int>(
        std::upper_bound(cstart.begin(), cstart.end(), u0) - cstart.begin());
    if (state >= n_t) state = n_t - 1;

    for (int step = 0; step <= n_t; ++step) {
      ++counts[static_cast<std::size_t>(state)];
      if (state >= n_t) break;
      const double* row = cum.data() + static_cast<std::size_t>(state) * n_states;
      const double u = unit_interval(rng) * row[n_states - 1];
      int next = static_cast<int>(std::upper_bound(row, row + n_states, u) - row);
      if (next >= n_states) next = n_states - 1;
      state = next;
    }
  }
  return counts;
}

std::vector<double> start_from_signal(const ChainModel& chain, const TopDownSignal& signal) {
  const auto it = chain.layer_span.find(signal.layer_id);
  if (it == chain.layer_span.end()) {
    throw UnknownLayer(signal.layer_id + " is not part of the oracle chain");
  }
  const auto [base, count] = it->second;
  if (base >= chain.n_transient) {
    throw SignalBelowTarget(signal.layer_id + " is absorbing in the oracle chain");
  }
  if (signal.values.numel() != count) {
    throw ShapeMismatch("signal has " + std::to_string(signal.values.numel()) +
                        " values, layer has " + std::to_string(count) + " states");
  }
  std::vector<double> start(static_cast<std::size_t>(chain.n_transient), 0.0);
  for (int i = 0; i < count; ++i) {
    start[static_cast<std::size_t>(base + i)] = signal.values[i];
  }
  return start;
}

std::vector<double> layer_visits(const ChainModel& chain, const std::vector<double>& visits,
                                 const std::string& layer_id) {
  if (static_cast<int>(visits.size()) != chain.n_states()) {
    throw ShapeMismatch("visit vector length mismatches the chain");
  }
  const auto it = chain.layer_span.find(layer_id);
  if (it == chain.layer_span.end()) {
    throw UnknownLayer(layer_id + " is not part of the oracle chain");
  }
  const auto [base, count] = it->second;
  return std::vector<double>(visits.begin() + base, visits.begin() + base + count);
}

std::string dump_chain(const ChainModel& chain) {
  std::ostringstream out;
  out.precision(17);
  const int cols_r = chain.n_absorbing + 1;
  out << "%% absorbing chain: " << chain.n_transient << " transient, " << chain.n_absorbing
      << "+1 absorbing\n";
  out << "%% Q (1-based row col value)\n";
  for (int i = 0; i < chain.n_transient; ++i) {
    for (int j = 0; j < chain.n_transient; ++j) {
      const double v = chain.Q[static_cast<std::size_t>(i) * chain.n_transient + j];
      if (v != 0.0) out << i + 1 << " " << j + 1 << " " << v << "\n";
    }
  }
  out << "%% R (1-based row col value, last col = sink)\n";
  for (int i = 0; i < chain.n_transient; ++i) {
    for (int k = 0; k < cols_r; ++k) {
      const double v = chain.R[static_cast<std::size_t>(i) * cols_r + k];
      if (v != 0.0) out << i + 1 << " " << k + 1 << " " << v << "\n";
    }
  }
  out << "%% states (state layer offset)\n";
  for (const auto& [key, state] : chain.state_index) {
    out << state << " " << key.first << " " << key.second << "\n";
  }
  return out.str();
}

}  // namespace ebnet
