#pragma once
// Corpus generation: sweep the drive axis for the oscillatory range of each
// time-constant pair, simulate screened recordings, window and standardize.
#include <numeric>
#include <optional>

#include "nmtrack/dataset.hpp"
#include "nmtrack/stats.hpp"

namespace nmtrack {

struct SweepConfig {
  std::vector<std::pair<double, double>> tau_grid;  // (tau_e, tau_i) pairs
  // drive sweep: u <- u*u_mult + u_add, starting at u_start, capped at u_max
  double u_start = 10.0;
  double u_mult = 1.25;
  double u_add = 2.0;
  double u_max = 30000.0;
  int max_failures = 15;     // consecutive failed screens before abandoning
  double screen_len = 2.0;   // seconds screened per drive value
  double record_len = 10.0;  // seconds kept per recording
  int inputs_per_pair = 8;   // recordings drawn per time-constant pair
  int max_draw_retries = 8;  // re-draws when a sampled recording fails the screen
  double gain_jitter = 0.3;  // relative half-width of per-recording gain scaling
  double gain_scale = 1.0;   // global scale on default gains (test hook)
  double alpha = 1e-4;       // screen significance level
  std::uint64_t seed = 0;
  ModelParams base;  // taus and drive get overwritten per pair/draw

  static std::vector<std::pair<double, double>> square_grid(
      const std::vector<double>& tau_e, const std::vector<double>& tau_i) {
    std::vector<std::pair<double, double>> g;
    for (double te : tau_e)
      for (double ti : tau_i) g.emplace_back(te, ti);
    return g;
  }
};

struct InputRange {
  double tau_e = 0, tau_i = 0;
  double u_lo = 0, u_hi = 0;  // lowest/highest drive that passed the screen
};

// One sweep step: the drive value tried and whether the screen passed.
struct SweepAttempt {
  double u = 0;
  bool passed = false;
  bool diverged = false;
};

struct SweepLog {
  std::vector<SweepAttempt> attempts;
  bool abandoned = false;          // stopped on consecutive failures
  int failures_at_stop = 0;        // consecutive-failure count when stopping
};

inline void scale_gains(ModelParams& p, double s) {
  p.alpha_pe *= s;
  p.alpha_pi *= s;
  p.alpha_ip *= s;
  p.alpha_ep *= s;
}

// Screens a short noisy recording at the given parameters.
inline bool screen_passes(const ModelParams& p, double seconds, double alpha,
                          std::uint64_t seed) {
  try {
    Trajectory t = simulate(p, seconds, seed);
    std::vector<double> y(t.obs.data(), t.obs.data() + t.obs.size());
    return detect_oscillation(y, alpha, /*quiet=*/true);
  } catch (const divergence_error&) {
    return false;
  }
}

// Sweep driver over an arbitrary screen predicate (u -> passed). Walks the
// drive axis upward and returns the lowest/highest passing value. The
// consecutive-failure counter resets on every success; after max_failures
// consecutive failures the sweep stops. Returns nullopt when nothing passed.
template <class Screen>
inline std::optional<std::pair<double, double>> sweep_drive_axis(
    const SweepConfig& cfg, Screen&& screen, SweepLog* log = nullptr) {
  std::optional<double> lo, hi;
  int consecutive_failures = 0;
  int attempt = 0;
  for (double u = cfg.u_start; u <= cfg.u_max;
       u = u * cfg.u_mult + cfg.u_add, ++attempt) {
    bool ok = screen(u, attempt);
    if (log) log->attempts.push_back({u, ok, false});
    if (ok) {
      if (!lo) lo = u;
      hi = u;
      consecutive_failures = 0;
    } else {
      ++consecutive_failures;
      if (consecutive_failures >= cfg.max_failures) {
        if (log) {
          log->abandoned = true;
          log->failures_at_stop = consecutive_failures;
        }
        break;
      }
    }
  }
  if (!lo) return std::nullopt;
  return std::make_pair(*lo, *hi);
}

inline std::optional<InputRange> find_input_range(double tau_e, double tau_i,
                                                  const SweepConfig& cfg,
                                                  SweepLog* log = nullptr) {
  ModelParams p = cfg.base;
  p.tau_e = tau_e;
  p.tau_i = tau_i;
  scale_gains(p, cfg.gain_scale);
  p.validate();
  auto screen = [&](double u, int attempt) {
    p.u = u;
    std::uint64_t s = derive_seed(cfg.seed, 0x5EEDu + attempt * 7919u +
                                                std::uint64_t(tau_e * 1e6) * 31u +
                                                std::uint64_t(tau_i * 1e6));
    return screen_passes(p, cfg.screen_len, cfg.alpha, s);
  };
  auto r = sweep_drive_axis(cfg, screen, log);
  if (!r) return std::nullopt;
  return InputRange{tau_e, tau_i, r->first, r->second};
}

struct RawRecording {
  Trajectory traj;
  double tau_e = 0, tau_i = 0, u = 0;
  int rec_id = -1;
};

// Simulates screened recordings across the grid. Each draw samples a drive
// from the pair's oscillatory range and jitters the synaptic gains; the
// recording's opening segment is screened, and the draw is retried with fresh
// values when the screen rejects it.
inline std::vector<RawRecording> generate_recordings(
    const SweepConfig& cfg, std::vector<InputRange>* ranges_out = nullptr) {
  std::vector<RawRecording> recs;
  int rec_id = 0;
  const int screen_samples =
      static_cast<int>(std::lround(cfg.screen_len / cfg.base.dt));
  for (size_t pi = 0; pi < cfg.tau_grid.size(); ++pi) {
    auto [te, ti] = cfg.tau_grid[pi];
    auto range = find_input_range(te, ti, cfg);
    if (!range) continue;  // pair never oscillates: contributes nothing
    if (ranges_out) ranges_out->push_back(*range);
    rng draw_rng(derive_seed(cfg.seed, 0xA110C000u + pi));
    for (int j = 0; j < cfg.inputs_per_pair; ++j) {
      for (int attempt = 0; attempt < cfg.max_draw_retries; ++attempt) {
        ModelParams p = cfg.base;
        p.tau_e = te;
        p.tau_i = ti;
        p.u = draw_rng.uniform(range->u_lo, range->u_hi);
        scale_gains(p, cfg.gain_scale);
        p.alpha_pe *= 1.0 + cfg.gain_jitter * (2.0 * draw_rng.uniform() - 1.0);
        p.alpha_pi *= 1.0 + cfg.gain_jitter * (2.0 * draw_rng.uniform() - 1.0);
        p.alpha_ip *= 1.0 + cfg.gain_jitter * (2.0 * draw_rng.uniform() - 1.0);
        p.alpha_ep *= 1.0 + cfg.gain_jitter * (2.0 * draw_rng.uniform() - 1.0);
        p.validate();
        std::uint64_t s =
            derive_seed(cfg.seed, 0x7EC0u + pi * 4096u + j * 64u + attempt);
        Trajectory t;
        try {
          t = simulate(p, cfg.record_len, s);
        } catch (const divergence_error&) {
          continue;  // jittered gains blew up; redraw
        }
        const int head_n = std::min<int>(screen_samples, int(t.obs.size()));
        std::vector<double> head(t.obs.data(), t.obs.data() + head_n);
        if (!detect_oscillation(head, cfg.alpha, /*quiet=*/true)) continue;
        recs.push_back({std::move(t), te, ti, p.u, rec_id++});
        break;
      }
    }
  }
  return recs;
}

namespace detail {

// Cuts one recording into non-overlapping windows. The observation is
// standardized with the recording's own mean/std; targets stay raw here and
// are standardized later with training-split statistics.
inline void window_recording(const RawRecording& r,
                             std::vector<DataWindow>& out) {
  const int n = static_cast<int>(r.traj.n());
  const int n_win = n / window_len;
  if (n_win == 0) return;
  double mu = 0;
  for (double y : r.traj.obs) mu += y;
  mu /= n;
  double var = 0;
  for (double y : r.traj.obs) var += (y - mu) * (y - mu);
  double sd = std::sqrt(var / n);
  if (sd < 1e-12) sd = 1e-12;  // degenerate recordings never pass the screen
  Mat tg = r.traj.targets();
  for (int w = 0; w < n_win; ++w) {
    DataWindow win;
    win.obs.resize(window_len);
    win.targets = tg.block(w * window_len, 0, window_len, n_targets);
    for (int t = 0; t < window_len; ++t)
      win.obs[t] = (r.traj.obs[w * window_len + t] - mu) / sd;
    win.rec_mu = mu;
    win.rec_sd = sd;
    win.tau_e = r.tau_e;
    win.tau_i = r.tau_i;
    win.u = r.u;
    win.rec_id = r.rec_id;
    out.push_back(std::move(win));
  }
}

inline StandardStats stats_from_train(const std::vector<DataWindow>& pool,
                                      const std::vector<int>& train_idx) {
  StandardStats s;
  Vec sum = Vec::Zero(n_targets), sumsq = Vec::Zero(n_targets);
  double osum = 0, osumsq = 0;
  std::int64_t n = 0;
  for (int i : train_idx) {
    const DataWindow& w = pool[i];
    for (int t = 0; t < window_len; ++t) {
      sum += w.targets.row(t).transpose();
      sumsq += w.targets.row(t).array().square().matrix();
      double yraw = w.obs[t] * w.rec_sd + w.rec_mu;
      osum += yraw;
      osumsq += yraw * yraw;
      ++n;
    }
  }
  if (n == 0) throw config_error("empty training split");
  s.mean = sum / double(n);
  for (int v = 0; v < n_targets; ++v) {
    double var = sumsq[v] / double(n) - s.mean[v] * s.mean[v];
    s.stdev[v] = std::sqrt(std::max(var, 0.0));
    if (s.stdev[v] < 1e-9) s.stdev[v] = 1.0;  // constant target: leave unscaled
  }
  s.obs_mean = osum / double(n);
  double ovar = osumsq / double(n) - s.obs_mean * s.obs_mean;
  s.obs_std = std::sqrt(std::max(ovar, 1e-18));
  return s;
}

}  // namespace detail

struct GeneratedCorpus {
  Dataset train, val, test;
  std::vector<InputRange> ranges;
  std::vector<std::vector<int>> split_indices;  // pool indices per split
};

// Full pipeline: screened recordings -> windows -> shuffled exact 80:10:10
// split -> training-split target standardization applied to all splits.
inline GeneratedCorpus generate_dataset(const SweepConfig& cfg) {
  GeneratedCorpus out;
  std::vector<RawRecording> recs = generate_recordings(cfg, &out.ranges);
  std::vector<DataWindow> pool;
  for (const auto& r : recs) detail::window_recording(r, pool);
  if (pool.empty()) throw config_error("no recording passed the screen");

  const int n = static_cast<int>(pool.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng shuffle_rng(derive_seed(cfg.seed, 0xD5));
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(shuffle_rng.uniform() * (i + 1));
    if (j > i) j = i;
    std::swap(order[i], order[j]);
  }
  const int n_train = (n * 8) / 10;  // floor(0.8 n)
  const int n_val = n / 10;          // floor(0.1 n)
  out.split_indices.resize(3);
  out.split_indices[0].assign(order.begin(), order.begin() + n_train);
  out.split_indices[1].assign(order.begin() + n_train,
                              order.begin() + n_train + n_val);
  out.split_indices[2].assign(order.begin() + n_train + n_val, order.end());

  StandardStats stats = detail::stats_from_train(pool, out.split_indices[0]);
  auto standardize = [&](DataWindow w) {
    for (int t = 0; t < window_len; ++t)
      for (int v = 0; v < n_targets; ++v)
        w.targets(t, v) = (w.targets(t, v) - stats.mean[v]) / stats.stdev[v];
    return w;
  };
  Dataset* splits[3] = {&out.train, &out.val, &out.test};
  const char* names[3] = {"train", "val", "test"};
  for (int k = 0; k < 3; ++k) {
    splits[k]->split = names[k];
    splits[k]->stats = stats;
    for (int i : out.split_indices[k])
      splits[k]->windows.push_back(standardize(pool[i]));
  }
  return out;
}

// Builds an evaluation set on a caller-chosen grid, standardized with the
// statistics of an existing training corpus.
inline Dataset generate_heldout_set(const SweepConfig& cfg,
                                    const StandardStats& train_stats,
                                    const std::string& name = "heldout") {
  std::vector<RawRecording> recs = generate_recordings(cfg);
  Dataset d;
  d.split = name;
  d.stats = train_stats;
  std::vector<DataWindow> pool;
  for (const auto& r : recs) detail::window_recording(r, pool);
  for (auto& w : pool) {
    for (int t = 0; t < window_len; ++t)
      for (int v = 0; v < n_targets; ++v)
        w.targets(t, v) = (w.targets(t, v) - train_stats.mean[v]) /
                          train_stats.stdev[v];
    d.windows.push_back(std::move(w));
  }
  return d;
}

// Midpoints between consecutive grid values on each axis; used for held-out
// generalization grids that interleave the training lattice.
inline std::vector<double> axis_midpoints(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> mid;
  for (size_t i = 0; i + 1 < v.size(); ++i)
    mid.push_back(0.5 * (v[i] + v[i + 1]));
  return mid;
}

}  // namespace nmtrack
