#pragma once
// Command-line orchestration: per-subcommand configs with strict key
// checking, resolved-config snapshots written next to every artifact set,
// and machine-readable error reporting on stderr.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "akf.hpp"
#include "datagen.hpp"
#include "eval.hpp"
#include "infer.hpp"
#include "io.hpp"
#include "train.hpp"

namespace nmtrack {
namespace cli {

// Exit codes, grouped by who has to act on the failure.
enum exit_code : int {
  exit_ok = 0,
  exit_internal = 1,
  exit_config = 2,   // bad flags, bad config keys/values
  exit_io = 3,       // unreadable/malformed inputs, unwritable outputs
  exit_numeric = 4,  // non-finite values where finite ones are required
  exit_data = 5,     // statistically unusable data (too short, degenerate)
};

namespace detail {

// Overrides an explicit default set; any key outside it is a hard error so
// typos cannot silently fall back to defaults.
inline json resolve(json defaults, const json& user, const std::string& where) {
  if (!user.is_object())
    throw config_error(where + ": config must be a JSON object");
  for (auto& [k, v] : user.items()) {
    if (!defaults.contains(k))
      throw config_error("unknown config key: " + where + "." + k);
    defaults[k] = v;
  }
  return defaults;
}

// Applies one "key=value" patch; the value is parsed as JSON when possible
// (numbers, arrays, booleans) and kept as a string otherwise.
inline void apply_set(json& cfg, const std::string& kv,
                      const std::string& where) {
  auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw config_error("--set expects key=value, got: " + kv);
  const std::string key = kv.substr(0, eq);
  const std::string val = kv.substr(eq + 1);
  if (!cfg.contains(key))
    throw config_error("unknown config key: " + where + "." + key);
  json parsed = json::parse(val, nullptr, false);
  cfg[key] = parsed.is_discarded() ? json(val) : parsed;
}

inline json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config: " + path);
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw config_error("config is not valid JSON: " + path);
  return j;
}

inline void write_snapshot(const std::string& out_dir, const json& resolved) {
  std::ofstream f(out_dir + "/resolved_config.json");
  f << resolved.dump(1) << "\n";
  if (!f) throw io_error("write failed: " + out_dir + "/resolved_config.json");
}

inline std::vector<double> get_grid(const json& cfg, const char* key) {
  auto v = cfg.at(key).get<std::vector<double>>();
  if (v.empty()) throw config_error(std::string(key) + " must be non-empty");
  return v;
}

inline std::string require_path(const json& cfg, const char* key,
                                const std::string& where) {
  std::string s = cfg.at(key).get<std::string>();
  if (s.empty())
    throw config_error(where + "." + std::string(key) + " is required");
  return s;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string describe_recording(const Recording& r) {
  std::string s = "channel '" + r.label + "', " +
                  std::to_string(r.samples.size()) + " samples @400 Hz";
  if (r.repaired > 0)
    s += ", " + std::to_string(r.repaired) + " non-finite samples repaired";
  if (r.resampled)
    s += ", resampled from " + std::to_string(r.orig_rate) + " Hz";
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Per-subcommand defaults. These are the single source of truth for the key
// sets; the resolved snapshot written to each out-dir echoes them verbatim.
// ---------------------------------------------------------------------------

inline json simulate_defaults() {
  ModelParams p;
  return json{{"seed", 0},          {"duration", 10.0},
              {"discard", 1.0},     {"tau_e", p.tau_e},
              {"tau_i", p.tau_i},   {"u", p.u},
              {"alpha_pe", p.alpha_pe}, {"alpha_pi", p.alpha_pi},
              {"alpha_ip", p.alpha_ip}, {"alpha_ep", p.alpha_ep},
              {"q_process", p.q_process}, {"r_obs", p.r_obs}};
}

inline json datagen_defaults() {
  std::vector<double> taus;
  for (int i = 0; i <= 10; ++i) taus.push_back(0.01 + 0.005 * i);
  SweepConfig c;
  return json{{"seed", 0},
              {"tau_es", taus},
              {"tau_is", taus},
              {"record_len", c.record_len},
              {"inputs_per_pair", c.inputs_per_pair},
              {"screen_len", c.screen_len},
              {"u_start", c.u_start},
              {"u_mult", c.u_mult},
              {"u_add", c.u_add},
              {"u_max", c.u_max},
              {"max_failures", c.max_failures},
              {"max_draw_retries", c.max_draw_retries},
              {"gain_jitter", c.gain_jitter},
              {"alpha", c.alpha}};
}

inline json train_defaults() {
  TrainConfig c;
  return json{{"seed", 1},
              {"dataset", ""},
              {"hidden1", 128},
              {"hidden2", 32},
              {"batch", c.batch},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"lr", c.lr},
              {"clip", c.clip},
              {"k", c.k},
              {"lr_decay", c.lr_decay},
              {"lr_patience", c.lr_patience},
              {"min_lr", c.min_lr},
              {"max_seconds", c.max_seconds},
              {"log_every", c.log_every}};
}

inline json akf_defaults() {
  AkfConfig a;
  ModelParams p;
  return json{{"seed", 0},           {"input", ""},
              {"format", ""},        {"channel", ""},
              {"tau_e", a.tau_e},    {"tau_i", a.tau_i},
              {"u", p.u},            {"alpha_pe", p.alpha_pe},
              {"alpha_pi", p.alpha_pi}, {"alpha_ip", p.alpha_ip},
              {"alpha_ep", p.alpha_ep}, {"q_z", a.q_z},
              {"q_theta", a.q_theta},   {"r", a.r},
              {"p0_v", a.p0_v},      {"p0_z", a.p0_z},
              {"p0_theta", a.p0_theta}};
}

inline json infer_defaults() {
  return json{{"seed", 0},          {"input", ""},
              {"format", ""},       {"channel", ""},
              {"weights", ""},      {"batch", 64},
              {"stability_window", 2.0}, {"stability_stride", 1.0}};
}

inline json eval_defaults() {
  GridEvalConfig g;
  return json{{"seed", g.seed},
              {"weights", ""},
              {"tau_es", std::vector<double>{0.010, 0.0225, 0.035, 0.0475, 0.060}},
              {"tau_is", std::vector<double>{0.010, 0.0225, 0.035, 0.0475, 0.060}},
              {"inputs_per_cell", g.inputs_per_cell},
              {"record_len", g.record_len},
              {"noise_fraction", g.noise_fraction},
              {"fixed_tau_e", g.fixed_tau_e},
              {"fixed_tau_i", g.fixed_tau_i},
              {"perfect_p0_v", g.perfect_p0_v},
              {"perfect_p0_z", g.perfect_p0_z},
              {"perfect_p0_theta", g.perfect_p0_theta},
              {"run_lstm", g.run_lstm},
              {"run_akf_perfect", g.run_akf_perfect},
              {"run_akf_fixed", g.run_akf_fixed}};
}

inline json scenario_defaults() {
  AkfConfig a;
  return json{{"seed", 0},        {"weights", ""},
              {"n_segments", 3},  {"q_z", a.q_z},
              {"q_theta", a.q_theta}, {"r", a.r}};
}

// ---------------------------------------------------------------------------
// Subcommand handlers. Each receives its fully resolved config and an
// existing out-dir that already holds the resolved_config.json snapshot.
// ---------------------------------------------------------------------------

inline void cmd_simulate(const json& cfg, const std::string& out_dir,
                         std::ostream& out) {
  ModelParams p;
  p.tau_e = cfg.at("tau_e");
  p.tau_i = cfg.at("tau_i");
  p.u = cfg.at("u");
  p.alpha_pe = cfg.at("alpha_pe");
  p.alpha_pi = cfg.at("alpha_pi");
  p.alpha_ip = cfg.at("alpha_ip");
  p.alpha_ep = cfg.at("alpha_ep");
  p.q_process = cfg.at("q_process");
  p.r_obs = cfg.at("r_obs");
  p.validate();
  Trajectory tr = simulate(p, cfg.at("duration").get<double>(),
                           cfg.at("seed").get<std::uint64_t>(),
                           cfg.at("discard").get<double>());
  write_trajectory(out_dir + "/trajectory.csv", tr);
  out << "simulate: " << tr.n() << " samples -> " << out_dir
      << "/trajectory.csv\n";
}

inline void cmd_datagen(const json& cfg, const std::string& out_dir,
                        std::ostream& out) {
  SweepConfig c;
  c.tau_grid = SweepConfig::square_grid(detail::get_grid(cfg, "tau_es"),
                                        detail::get_grid(cfg, "tau_is"));
  c.record_len = cfg.at("record_len");
  c.inputs_per_pair = cfg.at("inputs_per_pair");
  c.screen_len = cfg.at("screen_len");
  c.u_start = cfg.at("u_start");
  c.u_mult = cfg.at("u_mult");
  c.u_add = cfg.at("u_add");
  c.u_max = cfg.at("u_max");
  c.max_failures = cfg.at("max_failures");
  c.max_draw_retries = cfg.at("max_draw_retries");
  c.gain_jitter = cfg.at("gain_jitter");
  c.alpha = cfg.at("alpha");
  c.seed = cfg.at("seed").get<std::uint64_t>();

  GeneratedCorpus corpus = generate_dataset(c);
  save_dataset_dir(out_dir, {&corpus.train, &corpus.val, &corpus.test}, cfg,
                   corpus.split_indices);

  // Drive bands that survived the oscillation screen, one row per pair.
  Mat ranges(corpus.ranges.size(), 4);
  for (size_t i = 0; i < corpus.ranges.size(); ++i)
    ranges.row(i) << corpus.ranges[i].tau_e, corpus.ranges[i].tau_i,
        corpus.ranges[i].u_lo, corpus.ranges[i].u_hi;
  write_csv(out_dir + "/input_ranges.csv", {"tau_e", "tau_i", "u_lo", "u_hi"},
            ranges);

  out << "datagen: " << corpus.ranges.size() << "/" << c.tau_grid.size()
      << " pairs oscillatory; windows train/val/test = " << corpus.train.size()
      << "/" << corpus.val.size() << "/" << corpus.test.size() << " -> "
      << out_dir << "\n";
}

inline void cmd_train(const json& cfg, const std::string& out_dir,
                      std::ostream& out) {
  const std::string ds_dir = detail::require_path(cfg, "dataset", "train");
  std::vector<Dataset> splits = load_dataset_dir(ds_dir);
  if (splits.size() < 2 || splits[0].split != "train" ||
      splits[1].split != "val")
    throw io_error("dataset dir lacks train/val splits: " + ds_dir);

  Network<float> net;
  net.setup(1, cfg.at("hidden1"), cfg.at("hidden2"), n_targets);
  init_weights(net, cfg.at("seed").get<std::uint64_t>());

  TrainConfig tc;
  tc.batch = cfg.at("batch");
  tc.max_epochs = cfg.at("max_epochs");
  tc.patience = cfg.at("patience");
  tc.lr = cfg.at("lr");
  tc.clip = cfg.at("clip");
  tc.k = cfg.at("k");
  tc.lr_decay = cfg.at("lr_decay");
  tc.lr_patience = cfg.at("lr_patience");
  tc.min_lr = cfg.at("min_lr");
  tc.max_seconds = cfg.at("max_seconds");
  tc.log_every = cfg.at("log_every");
  tc.seed = cfg.at("seed").get<std::uint64_t>();

  TrainResult res = train(net, splits[0], splits[1], tc, &out);
  if (res.aborted)
    throw divergence_error(
        "training aborted on non-finite values; no weights saved");

  WeightsMeta meta;
  meta.stats = splits[0].stats;
  meta.extra = json{{"config", cfg},
                    {"best_epoch", res.best_epoch},
                    {"best_val", res.best_val},
                    {"epochs_run", res.log.size()}};
  save_weights(out_dir + "/weights.nmlw", res.best, meta);
  write_training_log(out_dir + "/training_log.csv", res.log);

  json metrics{{"best_epoch", res.best_epoch}, {"best_val", res.best_val}};
  if (splits.size() >= 3 && splits[2].split == "test") {
    SplitEval ev = evaluate_split(res.best, splits[2], tc.batch);
    std::vector<double> gain_rmse;
    for (int j : {idx::th_a_pe, idx::th_a_pi, idx::th_a_ip, idx::th_a_ep})
      gain_rmse.push_back(ev.rmse[j]);
    metrics["test_obs_r2"] = ev.obs_r2;
    metrics["test_median_gain_rmse"] = detail::median_of(gain_rmse);
    out << "train: test obs r2 " << ev.obs_r2 << ", median gain rmse "
        << metrics["test_median_gain_rmse"].get<double>() << "\n";
  }
  std::ofstream mf(out_dir + "/metrics.json");
  mf << metrics.dump(1) << "\n";
  out << "train: best epoch " << res.best_epoch << " (val "
      << res.best_val << ") -> " << out_dir << "/weights.nmlw\n";
}

inline void cmd_akf(const json& cfg, const std::string& out_dir,
                    std::ostream& out) {
  const std::string input = detail::require_path(cfg, "input", "akf");
  Recording rec = ingest(input, cfg.at("format"), cfg.at("channel"));

  AkfConfig a;
  a.tau_e = cfg.at("tau_e");
  a.tau_i = cfg.at("tau_i");
  a.q_z = cfg.at("q_z");
  a.q_theta = cfg.at("q_theta");
  a.r = cfg.at("r");
  a.p0_v = cfg.at("p0_v");
  a.p0_z = cfg.at("p0_z");
  a.p0_theta = cfg.at("p0_theta");

  ModelParams p;
  p.tau_e = a.tau_e;
  p.tau_i = a.tau_i;
  p.u = cfg.at("u");
  p.alpha_pe = cfg.at("alpha_pe");
  p.alpha_pi = cfg.at("alpha_pi");
  p.alpha_ip = cfg.at("alpha_ip");
  p.alpha_ep = cfg.at("alpha_ep");
  p.validate();

  EstimateTrack tk = run_akf(rec.samples, make_belief(p, a), a);
  write_track(out_dir + "/track_akf.csv", tk);
  out << "akf: " << detail::describe_recording(rec) << "; " << tk.n()
      << " steps";
  if (tk.truncated) out << " (truncated at step " << tk.fail_step << ")";
  out << " -> " << out_dir << "/track_akf.csv\n";
}

inline void cmd_infer(const json& cfg, const std::string& out_dir,
                      std::ostream& out) {
  const std::string input = detail::require_path(cfg, "input", "infer");
  const std::string wpath = detail::require_path(cfg, "weights", "infer");
  Recording rec = ingest(input, cfg.at("format"), cfg.at("channel"));
  WeightsMeta meta;
  Network<float> net = load_weights(wpath, &meta);

  InferConfig ic;
  ic.batch = cfg.at("batch");
  EstimateTrack tk = run_lstm(rec.samples, net, meta.stats, ic);
  write_track(out_dir + "/track_lstm.csv", tk);

  // Rolling parameter stability: trailing standard deviation of each of the
  // seven parameter tracks, emitted on a fixed stride. Quiet parameters read
  // as small values; re-organizations show up as spikes.
  const int w =
      std::max(2, int(std::lround(cfg.at("stability_window").get<double>() * 400)));
  const int stride =
      std::max(1, int(std::lround(cfg.at("stability_stride").get<double>() * 400)));
  const int first_param = idx::th_u;
  const int n_params = n_targets - first_param;
  std::vector<std::string> names{"time"};
  for (int j = first_param; j < n_targets; ++j)
    names.push_back(std::string("std_") + target_names[j]);
  std::vector<Vec> rows;
  for (int end = w; end <= tk.n(); end += stride) {
    Vec row(1 + n_params);
    row[0] = tk.t[end - 1];
    for (int j = 0; j < n_params; ++j) {
      auto seg = tk.mean.col(first_param + j).segment(end - w, w);
      const double mu = seg.mean();
      row[1 + j] = std::sqrt((seg.array() - mu).square().sum() / w);
    }
    rows.push_back(row);
  }
  Mat stab(rows.size(), 1 + n_params);
  for (size_t i = 0; i < rows.size(); ++i) stab.row(i) = rows[i].transpose();
  write_csv(out_dir + "/stability.csv", names, stab);

  out << "infer: " << detail::describe_recording(rec) << "; " << tk.n()
      << " steps -> " << out_dir << "/track_lstm.csv\n";
  if (stab.rows() > 0) {
    out << "infer: mean rolling std over " << stab.rows() << " windows:";
    for (int j = 0; j < n_params; ++j)
      out << " " << target_names[first_param + j] << "="
          << stab.col(1 + j).mean();
    out << "\n";
  }
}

inline void cmd_eval(const json& cfg, const std::string& out_dir,
                     std::ostream& out) {
  const std::string wpath = detail::require_path(cfg, "weights", "eval");
  WeightsMeta meta;
  Network<float> net = load_weights(wpath, &meta);

  GridEvalConfig g;
  g.tau_es = detail::get_grid(cfg, "tau_es");
  g.tau_is = detail::get_grid(cfg, "tau_is");
  g.inputs_per_cell = cfg.at("inputs_per_cell");
  g.record_len = cfg.at("record_len");
  g.noise_fraction = cfg.at("noise_fraction");
  g.seed = cfg.at("seed").get<std::uint64_t>();
  g.fixed_tau_e = cfg.at("fixed_tau_e");
  g.fixed_tau_i = cfg.at("fixed_tau_i");
  g.perfect_p0_v = cfg.at("perfect_p0_v");
  g.perfect_p0_z = cfg.at("perfect_p0_z");
  g.perfect_p0_theta = cfg.at("perfect_p0_theta");
  g.run_lstm = cfg.at("run_lstm");
  g.run_akf_perfect = cfg.at("run_akf_perfect");
  g.run_akf_fixed = cfg.at("run_akf_fixed");
  g.out_dir = out_dir;

  GridEvalResult res = run_grid_eval(net, meta.stats, g);

  // Headline numbers: per-method median standardized RMSE over the five
  // drive/gain parameters, pooled across the whole grid.
  std::vector<std::string> methods;
  for (const RmseRow& r : res.report.rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
  out << "eval: " << res.n_recordings << " recordings -> " << out_dir << "\n";
  for (const std::string& m : methods) {
    std::vector<double> vals;
    for (const RmseRow& r : res.report.rows) {
      if (r.method != m || r.diverged) continue;
      for (int j : param_coords)
        if (r.variable == target_names[j] && std::isfinite(r.rmse))
          vals.push_back(r.rmse);
    }
    out << "eval: " << m << " median parameter rmse "
        << detail::median_of(vals) << " over " << vals.size() << " rows\n";
  }
}

inline void cmd_scenario(const json& cfg, const std::string& out_dir,
                         std::ostream& out) {
  const std::string wpath = detail::require_path(cfg, "weights", "scenario");
  WeightsMeta meta;
  Network<float> net = load_weights(wpath, &meta);

  TimevaryingScenario sc =
      timevarying_scenario(cfg.at("seed").get<std::uint64_t>(),
                           cfg.at("n_segments"));
  write_trajectory(out_dir + "/trajectory.csv", sc.traj);
  const std::vector<double> yv(sc.traj.obs.data(),
                               sc.traj.obs.data() + sc.traj.n());

  EstimateTrack lstm = run_lstm(yv, net, meta.stats);
  write_track(out_dir + "/track_lstm.csv", lstm);

  // The filter benchmark starts from the truth of segment 1: true initial
  // state, true parameters, and the first segment's time constants.
  AkfConfig a;
  a.q_z = cfg.at("q_z");
  a.q_theta = cfg.at("q_theta");
  a.r = cfg.at("r");
  a.tau_e = sc.held_taus(0, 0);
  a.tau_i = sc.held_taus(0, 1);
  GaussianBelief b = make_belief(sc.traj.base, a);
  b.mean = sc.traj.states.row(0).transpose();
  EstimateTrack akf = run_akf(yv, b, a);
  write_track(out_dir + "/track_akf_perfect.csv", akf);

  // Parameter errors are scaled by the training corpus' per-variable spread
  // so constant-in-truth parameters still compare on a meaningful scale.
  TimevaryingReport rep = compare_timevarying(sc, lstm, akf, meta.stats.stdev);

  std::ofstream cf(out_dir + "/comparison.csv");
  cf << "variable,lstm_whole,akf_whole,winner";
  for (int s = 0; s < sc.n_segments; ++s) cf << ",lstm_seg" << s + 1;
  for (int s = 0; s < sc.n_segments; ++s) cf << ",akf_seg" << s + 1;
  cf << "\n";
  for (size_t v = 0; v < rep.variables.size(); ++v) {
    cf << rep.variables[v] << "," << nmtrack::detail::fmt17(rep.lstm_whole[v]) << ","
       << nmtrack::detail::fmt17(rep.akf_whole[v]) << ","
       << (rep.winner[v] == 0 ? "network" : "filter");
    for (int s = 0; s < sc.n_segments; ++s)
      cf << "," << nmtrack::detail::fmt17(rep.lstm_seg(v, s));
    for (int s = 0; s < sc.n_segments; ++s)
      cf << "," << nmtrack::detail::fmt17(rep.akf_seg(v, s));
    cf << "\n";
  }
  if (!cf) throw io_error("write failed: " + out_dir + "/comparison.csv");

  json cj{{"variables", rep.variables},
          {"winner", rep.winner},
          {"lstm_param_rmse", rep.lstm_param_rmse},
          {"akf_param_rmse", rep.akf_param_rmse},
          {"held_tau_e", std::vector<double>(
                             sc.held_taus.col(0).data(),
                             sc.held_taus.col(0).data() + sc.n_segments)},
          {"held_tau_i", std::vector<double>(
                             sc.held_taus.col(1).data(),
                             sc.held_taus.col(1).data() + sc.n_segments)},
          {"sigma_source", "training-corpus target stdev"}};
  std::ofstream jf(out_dir + "/comparison.json");
  jf << cj.dump(1) << "\n";

  out << "scenario-timevarying: " << sc.n_segments << " segments over "
      << sc.duration() << " s; whole-run parameter rmse network "
      << rep.lstm_param_rmse << " vs filter " << rep.akf_param_rmse << " -> "
      << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// Entry point. Args exclude the program name.
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"nmtrack: neural-mass state and parameter tracking toolkit"};
  app.require_subcommand(1);

  struct SubSpec {
    const char* name;
    const char* help;
    json defaults;
    void (*handler)(const json&, const std::string&, std::ostream&);
  };
  const std::vector<SubSpec> specs = {
      {"simulate", "integrate the cortical-column model and export a trajectory",
       simulate_defaults(), &cmd_simulate},
      {"datagen", "sweep the time-constant grid into a screened training corpus",
       datagen_defaults(), &cmd_datagen},
      {"train", "fit the bidirectional network on a generated corpus",
       train_defaults(), &cmd_train},
      {"akf", "run the analytic Kalman filter over a recording",
       akf_defaults(), &cmd_akf},
      {"infer", "run the trained network over a recording (CSV or EDF)",
       infer_defaults(), &cmd_infer},
      {"eval", "benchmark estimators over a time-constant grid",
       eval_defaults(), &cmd_eval},
      {"scenario-timevarying", "track a scenario whose time constants move",
       scenario_defaults(), &cmd_scenario},
  };

  struct SubState {
    CLI::App* cmd = nullptr;
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    std::optional<std::string> input, weights, dataset;
  };
  std::vector<SubState> states(specs.size());

  for (size_t i = 0; i < specs.size(); ++i) {
    SubState& st = states[i];
    st.cmd = app.add_subcommand(specs[i].name, specs[i].help);
    st.cmd->add_option("--config", st.config_path,
                       "JSON config file (keys for this subcommand only)");
    st.cmd->add_option("--out-dir", st.out_dir, "artifact directory");
    st.cmd->add_option("--seed", st.seed, "master seed override");
    st.cmd->add_option("--set", st.sets,
                       "key=value config override (repeatable)");
    const json& d = specs[i].defaults;
    if (d.contains("input"))
      st.cmd->add_option("--input", st.input, "recording to ingest");
    if (d.contains("weights"))
      st.cmd->add_option("--weights", st.weights, "trained weights file");
    if (d.contains("dataset"))
      st.cmd->add_option("--dataset", st.dataset, "generated corpus directory");
  }

  try {
    std::vector<const char*> argv{"nmtrack"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
      app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      throw config_error(std::string("usage: ") + e.what());
    }

    size_t pick = 0;
    while (pick < specs.size() && !states[pick].cmd->parsed()) ++pick;
    const SubSpec& spec = specs[pick];
    SubState& st = states[pick];

    json cfg = detail::resolve(spec.defaults,
                               detail::load_config_file(st.config_path),
                               spec.name);
    for (const std::string& kv : st.sets)
      detail::apply_set(cfg, kv, spec.name);
    if (st.seed) cfg["seed"] = *st.seed;
    if (st.input) cfg["input"] = *st.input;
    if (st.weights) cfg["weights"] = *st.weights;
    if (st.dataset) cfg["dataset"] = *st.dataset;

    std::string out_dir =
        st.out_dir.empty() ? std::string("out/") + spec.name : st.out_dir;
    std::filesystem::create_directories(out_dir);

    json resolved = cfg;
    resolved["subcommand"] = spec.name;
    resolved["out_dir"] = out_dir;
    detail::write_snapshot(out_dir, resolved);

    spec.handler(cfg, out_dir, out);
    return exit_ok;
  } catch (const std::exception& e) {
    const char* category = "internal";
    int code = exit_internal;
    if (dynamic_cast<const degenerate_variable_error*>(&e)) {
      category = "degenerate";
      code = exit_data;
    } else if (dynamic_cast<const config_error*>(&e)) {
      category = "config";
      code = exit_config;
    } else if (dynamic_cast<const edf_format_error*>(&e)) {
      category = "format";
      code = exit_io;
    } else if (dynamic_cast<const missing_channel_error*>(&e)) {
      category = "missing-channel";
      code = exit_io;
    } else if (dynamic_cast<const empty_file_error*>(&e)) {
      category = "empty-input";
      code = exit_io;
    } else if (dynamic_cast<const io_error*>(&e)) {
      category = "io";
      code = exit_io;
    } else if (dynamic_cast<const loss_numeric_error*>(&e) ||
               dynamic_cast<const divergence_error*>(&e)) {
      category = "numeric";
      code = exit_numeric;
    } else if (dynamic_cast<const sample_size_error*>(&e) ||
               dynamic_cast<const degenerate_sample_error*>(&e)) {
      category = "sample-size";
      code = exit_data;
    } else if (dynamic_cast<const json::exception*>(&e)) {
      category = "config";
      code = exit_config;
    }
    err << json{{"error", {{"category", category}, {"message", e.what()}}}}
               .dump()
        << "\n";
    return code;
  }
}

}  // namespace cli
}  // namespace nmtrack
