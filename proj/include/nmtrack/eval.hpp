#pragma once
// Evaluation harness: standardized RMSE reports, (tau_e, tau_i) heat grids,
// estimator comparisons across the time-constant grid, noise-robustness
// deltas, and the time-varying tracking scenario.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nmtrack/akf.hpp"
#include "nmtrack/datagen.hpp"
#include "nmtrack/infer.hpp"
#include "nmtrack/train.hpp"

namespace nmtrack {

struct degenerate_variable_error : config_error {
  using config_error::config_error;
};

// ---------------------------------------------------------------------------
// Scalar metrics
// ---------------------------------------------------------------------------

// Per-variable standardized RMSE between two aligned (time x variables)
// matrices: sqrt(mean(((x - xhat) / sigma)^2)) per column. The mean of the
// reference data cancels inside the difference, so only sigma is needed.
inline Vec rmse_standardized(const Mat& truth, const Mat& pred,
                             const Vec& sigma) {
  if (truth.rows() != pred.rows() || truth.cols() != pred.cols() ||
      sigma.size() != truth.cols())
    throw config_error("rmse: mismatched shapes");
  if (truth.rows() == 0) throw sample_size_error("rmse: empty sequence");
  Vec out(truth.cols());
  for (int j = 0; j < truth.cols(); ++j) {
    if (!(sigma[j] > 0))
      throw degenerate_variable_error("rmse: variable " + std::to_string(j) +
                                      " has non-positive std");
    const double acc =
        ((truth.col(j) - pred.col(j)) / sigma[j]).squaredNorm();
    out[j] = std::sqrt(acc / double(truth.rows()));
  }
  return out;
}

// Squared Pearson correlation between two pooled sequences.
inline double r_squared(const Vec& x, const Vec& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw sample_size_error("r_squared: need two aligned samples");
  const double mx = x.mean(), my = y.mean();
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  const double sxx = (x.array() - mx).square().sum();
  const double syy = (y.array() - my).square().sum();
  if (sxx <= 0 || syy <= 0)
    throw degenerate_variable_error("r_squared: constant input");
  return (sxy * sxy) / (sxx * syy);
}

// Adds zero-mean Gaussian noise with std = fraction * std(y).
inline Vec add_observation_noise(const Vec& y, double fraction,
                                 std::uint64_t seed) {
  if (fraction < 0) throw config_error("noise fraction must be >= 0");
  if (fraction == 0) return y;
  const double m = y.mean();
  const double s = std::sqrt((y.array() - m).square().sum() /
                             std::max<Eigen::Index>(y.size(), 1));
  rng r(seed);
  Vec out = y;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] += fraction * s * r.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Long-format RMSE report
// ---------------------------------------------------------------------------

struct RmseRow {
  std::string method;
  double tau_e = 0, tau_i = 0, u = 0;
  std::string variable;
  double rmse = 0;
  std::int64_t n = 0;
  bool diverged = false;
};

struct RmseReport {
  std::vector<RmseRow> rows;
};

inline void write_rmse_report(const std::string& path,
                              const RmseReport& report) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot open " + path);
  f << "method,tau_e,tau_i,u,variable,rmse,n,diverged\n";
  char buf[256];
  for (const RmseRow& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%s,%.17g,%lld,%d\n",
                  r.method.c_str(), r.tau_e, r.tau_i, r.u, r.variable.c_str(),
                  r.rmse, static_cast<long long>(r.n), r.diverged ? 1 : 0);
    f << buf;
  }
}

// ---------------------------------------------------------------------------
// Heat grids
// ---------------------------------------------------------------------------

struct HeatGrid {
  std::string label;
  std::vector<double> tau_es, tau_is;  // sorted axes
  Mat cells;  // tau_es.size() x tau_is.size(); NaN marks a missing cell
  double scale_lo = 0.0, scale_hi = 1.0;  // color-scale metadata

  bool missing(int i, int j) const { return !std::isfinite(cells(i, j)); }
};

// Cellwise difference a - b on identical axes; scale bounds [-1, 1].
inline HeatGrid diff_grid(const HeatGrid& a, const HeatGrid& b,
                          const std::string& label) {
  if (a.tau_es != b.tau_es || a.tau_is != b.tau_is)
    throw config_error("diff_grid: mismatched axes");
  HeatGrid g = a;
  g.label = label;
  g.cells = a.cells - b.cells;
  g.scale_lo = -1.0;
  g.scale_hi = 1.0;
  return g;
}

// CSV matrix with axis header row/column; the top-left cell carries the
// label and the scale bounds so renderers need no side channel.
inline void write_grid_csv(const std::string& path, const HeatGrid& g) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot open " + path);
  char buf[64];
  f << g.label << "|scale " << g.scale_lo << ".." << g.scale_hi;
  for (double ti : g.tau_is) {
    std::snprintf(buf, sizeof buf, ",%.17g", ti);
    f << buf;
  }
  f << "\n";
  for (size_t i = 0; i < g.tau_es.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", g.tau_es[i]);
    f << buf;
    for (size_t j = 0; j < g.tau_is.size(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", g.cells(int(i), int(j)));
      f << buf;
    }
    f << "\n";
  }
}

// Optional rendering helper; evaluation itself only emits data.
inline void write_plot_stub(const std::string& dir) {
  std::ofstream f(std::filesystem::path(dir) / "plot_grids.py");
  f << R"PY(#!/usr/bin/env python3
"""Render heat-grid CSVs produced by the evaluation harness.

Usage: python3 plot_grids.py grid_*.csv
Each file's top-left cell is "<label>|scale <lo>..<hi>".
"""
import csv, sys
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

for path in sys.argv[1:]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    head = rows[0][0].split("|scale ")
    label, (lo, hi) = head[0], map(float, head[1].split(".."))
    tau_i = [float(v) for v in rows[0][1:]]
    tau_e = [float(r[0]) for r in rows[1:]]
    cells = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    fig, ax = plt.subplots()
    im = ax.imshow(cells, vmin=lo, vmax=hi, origin="lower",
                   cmap="RdBu_r" if lo < 0 else "viridis", aspect="auto",
                   extent=[tau_i[0], tau_i[-1], tau_e[0], tau_e[-1]])
    ax.set_xlabel("tau_i (s)"); ax.set_ylabel("tau_e (s)"); ax.set_title(label)
    fig.colorbar(im)
    out = path.rsplit(".", 1)[0] + ".png"
    fig.savefig(out, dpi=120); plt.close(fig)
    print(out)
)PY";
}

// ---------------------------------------------------------------------------
// Held-out split metrics (trained network vs a standardized dataset)
// ---------------------------------------------------------------------------

struct SplitEval {
  double obs_r2 = 0;  // pooled reconstruction vs observation, standardized
  Vec rmse;           // per-variable RMSE standardized by the split's raw std
  Vec sigma;          // per-variable raw std of the split's truth
};

// Runs the network over every window of a dataset split and reports the
// pooled observation-reconstruction R^2 plus per-variable standardized RMSE
// in raw units (standardized by the split's own per-variable std).
inline SplitEval evaluate_split(const Network<float>& net, const Dataset& d,
                                int batch = 64) {
  if (d.size() == 0) throw sample_size_error("evaluate_split: empty dataset");
  const int T = window_len;
  const Vec& mu = d.stats.mean;
  const Vec& sd = d.stats.stdev;

  Vec sum = Vec::Zero(n_targets), sumsq = Vec::Zero(n_targets);
  Vec sse = Vec::Zero(n_targets);
  std::vector<double> yh_all, yo_all;
  yh_all.reserve(size_t(d.size()) * T);
  yo_all.reserve(size_t(d.size()) * T);

  detail::BatchBuffers buf;
  FwdCache<float> cache;
  std::vector<int> ids;
  std::int64_t n_obs = 0;
  for (int start = 0; start < d.size(); start += batch) {
    ids.clear();
    for (int i = start; i < std::min(d.size(), start + batch); ++i)
      ids.push_back(i);
    const int B = int(ids.size());
    buf.fill(d, ids);
    MatX<float> y = forward(net, buf.x, T, B, cache);
    for (int b = 0; b < B; ++b) {
      const DataWindow& w = d.windows[ids[b]];
      for (int t = 0; t < T; ++t) {
        const int col = t * B + b;
        double yhat_raw = 0;
        for (int j = 0; j < n_targets; ++j) {
          const double pr = double(y(j, col)) * sd[j] + mu[j];
          const double tr = buf.truth(j, col) * sd[j] + mu[j];
          sse[j] += (pr - tr) * (pr - tr);
          sum[j] += tr;
          sumsq[j] += tr * tr;
        }
        for (int i : obs_indices)
          yhat_raw += double(y(i, col)) * sd[i] + mu[i];
        yh_all.push_back((yhat_raw - w.rec_mu) / w.rec_sd);
        yo_all.push_back(buf.obs(0, col));
        ++n_obs;
      }
    }
  }

  SplitEval out;
  out.sigma = Vec(n_targets);
  out.rmse = Vec(n_targets);
  for (int j = 0; j < n_targets; ++j) {
    const double m = sum[j] / double(n_obs);
    const double var = std::max(0.0, sumsq[j] / double(n_obs) - m * m);
    out.sigma[j] = std::sqrt(var);
    out.rmse[j] = out.sigma[j] > 1e-9
                      ? std::sqrt(sse[j] / double(n_obs)) / out.sigma[j]
                      : std::numeric_limits<double>::quiet_NaN();
  }
  Eigen::Map<Vec> yh(yh_all.data(), Eigen::Index(yh_all.size()));
  Eigen::Map<Vec> yo(yo_all.data(), Eigen::Index(yo_all.size()));
  out.obs_r2 = r_squared(yh, yo);
  return out;
}

// ---------------------------------------------------------------------------
// Grid evaluation: network vs belief filters across the tau grid
// ---------------------------------------------------------------------------

constexpr int param_coords[5] = {idx::th_u, idx::th_a_pe, idx::th_a_pi,
                                 idx::th_a_ip, idx::th_a_ep};

struct GridEvalConfig {
  std::vector<double> tau_es, tau_is;  // evaluation grid axes
  int inputs_per_cell = 4;             // drive draws per grid cell
  double record_len = 6.0;             // seconds per evaluation recording
  double noise_fraction = 0.0;         // extra observation noise (of std)
  std::uint64_t seed = 20;

  AkfConfig akf;                          // shared filter knobs (q, r, dt)
  double fixed_tau_e = 0.010, fixed_tau_i = 0.020;  // pinned-filter values
  double perfect_p0_v = 0.01, perfect_p0_z = 1.0, perfect_p0_theta = 1.0;

  bool run_lstm = true, run_akf_perfect = true, run_akf_fixed = true;
  std::string out_dir;  // when set, persists tracks, report, and grids
};

struct GridEvalResult {
  RmseReport report;            // one row per (method, recording, variable)
  std::vector<HeatGrid> grids;  // median-over-drive grids and differences
  Vec sigma;                    // per-variable std of pooled eval truth
  int n_recordings = 0;

  const HeatGrid* grid(const std::string& label) const {
    for (const HeatGrid& g : grids)
      if (g.label == label) return &g;
    return nullptr;
  }
};

namespace detail {

inline double median_ignoring_nan(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(),
                         [](double x) { return !std::isfinite(x); }),
          v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// RMSE rows for one estimate track against a trajectory's targets. The
// track may be truncated (divergence); a truncated run is flagged and its
// values are left out of downstream medians.
inline void append_track_rows(RmseReport& rep, const std::string& method,
                              const RawRecording& rec, const EstimateTrack& tr,
                              const Vec& sigma) {
  Mat targets = rec.traj.targets();
  const int n_vars = int(tr.mean.cols());
  const int n = std::min<int>(int(targets.rows()), tr.n());
  const bool diverged = tr.truncated;
  for (int j = 0; j < n_vars; ++j) {
    RmseRow row;
    row.method = method;
    row.tau_e = rec.tau_e;
    row.tau_i = rec.tau_i;
    row.u = rec.u;
    row.variable = target_names[j];
    row.n = n;
    row.diverged = diverged;
    if (diverged || sigma[j] <= 1e-9) {
      row.rmse = std::numeric_limits<double>::quiet_NaN();
    } else {
      const double acc =
          (targets.col(j).head(n) - tr.mean.col(j).head(n)).squaredNorm();
      row.rmse = std::sqrt(acc / double(n)) / sigma[j];
      if (!std::isfinite(row.rmse)) {
        row.rmse = std::numeric_limits<double>::quiet_NaN();
        row.diverged = true;
      }
    }
    rep.rows.push_back(row);
  }
}

}  // namespace detail

// Generates a screened evaluation corpus on the configured grid, runs the
// selected estimators on every recording, and aggregates standardized RMSE
// into long-format rows plus median-over-drive heat grids. All aggregation
// reads the persisted per-recording rows; estimates are never recomputed.
inline GridEvalResult run_grid_eval(const Network<float>& net,
                                    const StandardStats& stats,
                                    const GridEvalConfig& cfg) {
  if (cfg.tau_es.empty() || cfg.tau_is.empty())
    throw config_error("grid eval: empty axes");

  SweepConfig sweep;
  sweep.tau_grid = SweepConfig::square_grid(cfg.tau_es, cfg.tau_is);
  sweep.inputs_per_pair = cfg.inputs_per_cell;
  sweep.record_len = cfg.record_len;
  sweep.seed = cfg.seed;
  std::vector<RawRecording> recs = generate_recordings(sweep);

  GridEvalResult out;
  out.n_recordings = int(recs.size());
  if (recs.empty()) throw config_error("grid eval: no surviving recordings");

  // Pooled per-variable std of the evaluation truth (the reference scale
  // for every standardized RMSE in this evaluation).
  Vec sum = Vec::Zero(n_targets), sumsq = Vec::Zero(n_targets);
  std::int64_t n_all = 0;
  for (const RawRecording& rec : recs) {
    Mat targets = rec.traj.targets();
    for (int j = 0; j < n_targets; ++j) {
      sum[j] += targets.col(j).sum();
      sumsq[j] += targets.col(j).squaredNorm();
    }
    n_all += targets.rows();
  }
  out.sigma = Vec(n_targets);
  for (int j = 0; j < n_targets; ++j) {
    const double m = sum[j] / double(n_all);
    out.sigma[j] = std::sqrt(std::max(0.0, sumsq[j] / double(n_all) - m * m));
  }

  const bool persist = !cfg.out_dir.empty();
  if (persist) std::filesystem::create_directories(cfg.out_dir);

  for (size_t i = 0; i < recs.size(); ++i) {
    const RawRecording& rec = recs[i];
    Vec y = rec.traj.obs;
    if (cfg.noise_fraction > 0)
      y = add_observation_noise(y, cfg.noise_fraction,
                                derive_seed(cfg.seed, 0xAD015E00 + rec.rec_id));
    const std::vector<double> yv(y.data(), y.data() + y.size());

    if (cfg.run_lstm) {
      EstimateTrack tr = run_lstm(yv, net, stats);
      detail::append_track_rows(out.report, "lstm", rec, tr, out.sigma);
      if (persist)
        write_track(std::filesystem::path(cfg.out_dir) /
                        ("track_lstm_" + std::to_string(rec.rec_id) + ".csv"),
                    tr);
    }
    if (cfg.run_akf_perfect) {
      AkfConfig a = cfg.akf;
      a.tau_e = rec.tau_e;
      a.tau_i = rec.tau_i;
      a.p0_v = cfg.perfect_p0_v;
      a.p0_z = cfg.perfect_p0_z;
      a.p0_theta = cfg.perfect_p0_theta;
      GaussianBelief b;
      b.mean = rec.traj.states.row(0).transpose();
      b.cov = Mat::Zero(n_aug, n_aug);
      for (int k = 0; k < n_state; ++k)
        b.cov(k, k) = (k % 2 == 0) ? a.p0_v : a.p0_z;
      for (int k = n_state; k < n_aug; ++k) b.cov(k, k) = a.p0_theta;
      EstimateTrack tr = run_akf(yv, b, a);
      detail::append_track_rows(out.report, "akf-perfect", rec, tr, out.sigma);
      if (persist)
        write_track(std::filesystem::path(cfg.out_dir) /
                        ("track_akfp_" + std::to_string(rec.rec_id) + ".csv"),
                    tr);
    }
    if (cfg.run_akf_fixed) {
      AkfConfig a = cfg.akf;
      a.tau_e = cfg.fixed_tau_e;
      a.tau_i = cfg.fixed_tau_i;
      ModelParams defaults;
      GaussianBelief b = make_belief(defaults, a);
      EstimateTrack tr = run_akf(yv, b, a);
      detail::append_track_rows(out.report, "akf-fixed", rec, tr, out.sigma);
      if (persist)
        write_track(std::filesystem::path(cfg.out_dir) /
                        ("track_akff_" + std::to_string(rec.rec_id) + ".csv"),
                    tr);
    }
  }

  // Median-over-drive grids per method and parameter variable, plus a pooled
  // mean grid per method and difference grids network-minus-filter.
  std::vector<std::string> methods;
  if (cfg.run_lstm) methods.push_back("lstm");
  if (cfg.run_akf_perfect) methods.push_back("akf-perfect");
  if (cfg.run_akf_fixed) methods.push_back("akf-fixed");

  const int ne = int(cfg.tau_es.size()), ni = int(cfg.tau_is.size());
  auto cell_of = [&](double te, double ti) {
    int ie = -1, ii = -1;
    for (int k = 0; k < ne; ++k)
      if (std::abs(cfg.tau_es[k] - te) < 1e-12) ie = k;
    for (int k = 0; k < ni; ++k)
      if (std::abs(cfg.tau_is[k] - ti) < 1e-12) ii = k;
    return std::pair<int, int>(ie, ii);
  };

  for (const std::string& m : methods) {
    HeatGrid pooled;
    pooled.label = m + " params";
    pooled.tau_es = cfg.tau_es;
    pooled.tau_is = cfg.tau_is;
    pooled.cells = Mat::Zero(ne, ni);
    Mat pooled_n = Mat::Zero(ne, ni);

    for (int pc : param_coords) {
      const std::string var = target_names[pc];
      HeatGrid g;
      g.label = m + " " + var;
      g.tau_es = cfg.tau_es;
      g.tau_is = cfg.tau_is;
      g.cells.resize(ne, ni);
      for (int ie = 0; ie < ne; ++ie)
        for (int ii = 0; ii < ni; ++ii) {
          std::vector<double> vals;
          for (const RmseRow& r : out.report.rows) {
            if (r.method != m || r.variable != var) continue;
            auto [re, ri] = cell_of(r.tau_e, r.tau_i);
            if (re == ie && ri == ii) vals.push_back(r.rmse);
          }
          g.cells(ie, ii) = detail::median_ignoring_nan(vals);
          if (std::isfinite(g.cells(ie, ii))) {
            pooled.cells(ie, ii) += g.cells(ie, ii);
            pooled_n(ie, ii) += 1.0;
          }
        }
      out.grids.push_back(g);
    }
    for (int ie = 0; ie < ne; ++ie)
      for (int ii = 0; ii < ni; ++ii)
        pooled.cells(ie, ii) =
            pooled_n(ie, ii) > 0
                ? pooled.cells(ie, ii) / pooled_n(ie, ii)
                : std::numeric_limits<double>::quiet_NaN();
    out.grids.push_back(pooled);
  }

  if (cfg.run_lstm) {
    std::vector<std::string> labels;
    for (const HeatGrid& g : out.grids) labels.push_back(g.label);
    for (const std::string& other : {std::string("akf-perfect"),
                                     std::string("akf-fixed")}) {
      for (const std::string& lbl : labels) {
        if (lbl.rfind("lstm ", 0) != 0) continue;
        const std::string suffix = lbl.substr(5);
        const HeatGrid* a = out.grid(lbl);
        const HeatGrid* b = out.grid(other + " " + suffix);
        if (a && b)
          out.grids.push_back(
              diff_grid(*a, *b, "diff lstm-minus-" + other + " " + suffix));
      }
    }
  }

  if (persist) {
    write_rmse_report(
        (std::filesystem::path(cfg.out_dir) / "rmse_report.csv").string(),
        out.report);
    int gi = 0;
    for (const HeatGrid& g : out.grids) {
      std::string name = g.label;
      for (char& c : name)
        if (c == ' ' || c == '/') c = '_';
      write_grid_csv((std::filesystem::path(cfg.out_dir) /
                      ("grid_" + std::to_string(gi++) + "_" + name + ".csv"))
                         .string(),
                     g);
    }
    write_plot_stub(cfg.out_dir);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Time-varying scenario
// ---------------------------------------------------------------------------

struct TimevaryingScenario {
  Trajectory traj;
  Mat held_taus;  // n_segments x 2 drawn (tau_e, tau_i) per held segment
  int n_segments = 0;
  double hold_len = 5.0, ramp_len = 5.0;

  double duration() const {
    return n_segments * hold_len + (n_segments - 1) * ramp_len;
  }
};

// Piecewise parameter profile: n_segments constant 5 s holds with the time
// constants redrawn uniformly in [0.01, 0.06] per segment, joined by 5 s
// linear ramps. Drive and gains stay at their defaults; total duration is
// (2 n - 1) * 5 s.
inline TimevaryingScenario timevarying_scenario(std::uint64_t seed,
                                                int n_segments,
                                                ModelParams base = {}) {
  if (n_segments < 2)
    throw config_error("timevarying scenario: need at least 2 segments");
  TimevaryingScenario sc;
  sc.n_segments = n_segments;
  sc.held_taus.resize(n_segments, 2);
  rng r(derive_seed(seed, 0x7A05C));
  for (int k = 0; k < n_segments; ++k) {
    sc.held_taus(k, 0) = r.uniform(0.01, 0.06);
    sc.held_taus(k, 1) = r.uniform(0.01, 0.06);
  }
  const double discard = 1.0;
  const double period = sc.hold_len + sc.ramp_len;
  const Mat held = sc.held_taus;
  const int n = n_segments;
  const double hold = sc.hold_len;
  // The schedule clock includes the discarded warm-up; the profile starts
  // after it so segment 1 is stationary from the first kept sample.
  ParamSchedule sched = [held, n, period, hold, discard](double t,
                                                        ModelParams& p) {
    const double s = std::max(0.0, t - discard);
    int seg = int(s / period);
    if (seg >= n - 1) seg = n - 1;
    const double local = s - seg * period;
    if (seg == n - 1 || local < hold) {
      p.tau_e = held(seg, 0);
      p.tau_i = held(seg, 1);
    } else {
      const double w = (local - hold) / (period - hold);
      p.tau_e = (1 - w) * held(seg, 0) + w * held(seg + 1, 0);
      p.tau_i = (1 - w) * held(seg, 1) + w * held(seg + 1, 1);
    }
  };
  base.tau_e = sc.held_taus(0, 0);
  base.tau_i = sc.held_taus(0, 1);
  sc.traj = simulate_schedule(base, sc.duration(), derive_seed(seed, 0x51B),
                              sched, discard);
  return sc;
}

struct TimevaryingReport {
  std::vector<std::string> variables;   // the five drive/gain parameters
  Vec lstm_whole, akf_whole;            // per-variable standardized RMSE
  Mat lstm_seg, akf_seg;                // variables x held segments
  std::vector<int> winner;              // per variable: 0 network, 1 filter
  double lstm_param_rmse = 0, akf_param_rmse = 0;  // mean over variables
};

// Whole-run and per-held-segment standardized parameter RMSE for both
// estimators on a scenario. A truncated filter run contributes only its
// surviving samples; segments it never reached report NaN.
inline TimevaryingReport compare_timevarying(const TimevaryingScenario& sc,
                                             const EstimateTrack& lstm,
                                             const EstimateTrack& akf,
                                             const Vec& sigma) {
  Mat targets = sc.traj.targets();
  const int n = int(targets.rows());
  const double dt = sc.traj.base.dt;
  TimevaryingReport rep;
  rep.lstm_whole = Vec::Zero(5);
  rep.akf_whole = Vec::Zero(5);
  rep.lstm_seg = Mat::Zero(5, sc.n_segments);
  rep.akf_seg = Mat::Zero(5, sc.n_segments);

  auto seg_of = [&](int i) {
    // Held-segment index for sample i, or -1 during a ramp.
    const double s = (i + 1) * dt;
    const double period = sc.hold_len + sc.ramp_len;
    int seg = int(s / period);
    if (seg >= sc.n_segments) seg = sc.n_segments - 1;
    const double local = s - seg * period;
    return (seg == sc.n_segments - 1 || local < sc.hold_len) ? seg : -1;
  };

  for (int v = 0; v < 5; ++v) {
    const int j = param_coords[v];
    rep.variables.push_back(target_names[j]);
    const double sig = sigma[j] > 1e-9 ? sigma[j] : 1.0;
    double acc_l = 0, acc_a = 0;
    std::int64_t n_l = 0, n_a = 0;
    std::vector<double> seg_l(sc.n_segments, 0), seg_a(sc.n_segments, 0);
    std::vector<std::int64_t> seg_nl(sc.n_segments, 0),
        seg_na(sc.n_segments, 0);
    for (int i = 0; i < n; ++i) {
      const int seg = seg_of(i);
      if (i < lstm.n()) {
        const double e = (lstm.mean(i, j) - targets(i, j)) / sig;
        acc_l += e * e;
        ++n_l;
        if (seg >= 0) {
          seg_l[seg] += e * e;
          ++seg_nl[seg];
        }
      }
      if (i < akf.n()) {
        const double e = (akf.mean(i, j) - targets(i, j)) / sig;
        acc_a += e * e;
        ++n_a;
        if (seg >= 0) {
          seg_a[seg] += e * e;
          ++seg_na[seg];
        }
      }
    }
    rep.lstm_whole[v] =
        n_l ? std::sqrt(acc_l / double(n_l))
            : std::numeric_limits<double>::quiet_NaN();
    rep.akf_whole[v] = n_a ? std::sqrt(acc_a / double(n_a))
                           : std::numeric_limits<double>::quiet_NaN();
    for (int s = 0; s < sc.n_segments; ++s) {
      rep.lstm_seg(v, s) =
          seg_nl[s] ? std::sqrt(seg_l[s] / double(seg_nl[s]))
                    : std::numeric_limits<double>::quiet_NaN();
      rep.akf_seg(v, s) =
          seg_na[s] ? std::sqrt(seg_a[s] / double(seg_na[s]))
                    : std::numeric_limits<double>::quiet_NaN();
    }
    rep.winner.push_back(
        !(rep.akf_whole[v] < rep.lstm_whole[v]) ? 0 : 1);
  }
  rep.lstm_param_rmse = rep.lstm_whole.mean();
  rep.akf_param_rmse =
      rep.akf_whole.allFinite()
          ? rep.akf_whole.mean()
          : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace nmtrack
