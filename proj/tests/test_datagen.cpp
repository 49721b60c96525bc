// Corpus generation: drive-axis sweep semantics, screening, windowing,
// split exactness, standardization invariants, and directory round trips.
#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "nmtrack/datagen.hpp"

using namespace nmtrack;

namespace {

SweepConfig small_config() {
  SweepConfig cfg;
  cfg.tau_grid = {{0.010, 0.020}, {0.015, 0.030}};
  cfg.record_len = 10.0;
  cfg.inputs_per_pair = 4;
  cfg.seed = 42;
  return cfg;
}

template <class A, class B>
bool bits_equal(const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_CASE("drive sweep: failure counter resets on success, abandons after the "
          "configured consecutive-failure run") {
  SweepConfig cfg;
  cfg.u_start = 10.0;
  cfg.u_mult = 1.25;
  cfg.u_add = 2.0;
  cfg.u_max = 1e12;  // scripted screen decides when to stop
  cfg.max_failures = 15;

  // fail x3, pass, fail x14, pass, then fail forever
  auto script = [](double, int attempt) {
    if (attempt == 3 || attempt == 18) return true;
    return false;
  };
  SweepLog log;
  auto r = sweep_drive_axis(cfg, script, &log);
  REQUIRE(r.has_value());
  // 3 failures + pass + 14 failures + pass + exactly 15 more = 34 attempts
  CHECK(log.attempts.size() == 34);
  CHECK(log.abandoned);
  CHECK(log.failures_at_stop == 15);
  CHECK(log.attempts[3].passed);
  CHECK(log.attempts[18].passed);
  // the returned range spans first to last passing drive value
  CHECK(r->first == Catch::Approx(log.attempts[3].u));
  CHECK(r->second == Catch::Approx(log.attempts[18].u));
  // drive values follow u <- u*1.25 + 2 exactly
  CHECK(log.attempts[0].u == 10.0);
  CHECK(log.attempts[1].u == 14.5);
  CHECK(log.attempts[2].u == Catch::Approx(20.125).margin(1e-12));

  SECTION("no pass at all stops after exactly max_failures attempts") {
    SweepLog log2;
    auto r2 = sweep_drive_axis(
        cfg, [](double, int) { return false; }, &log2);
    CHECK_FALSE(r2.has_value());
    CHECK(log2.attempts.size() == 15);
    CHECK(log2.abandoned);
  }
  SECTION("ceiling ends the sweep without the abandoned flag") {
    SweepConfig c2 = cfg;
    c2.u_max = 30.0;  // admits 10, 14.5, 20.125, 27.16
    SweepLog log3;
    auto r3 = sweep_drive_axis(
        c2, [](double, int) { return true; }, &log3);
    REQUIRE(r3.has_value());
    CHECK(log3.attempts.size() == 4);
    CHECK_FALSE(log3.abandoned);
    CHECK(r3->first == 10.0);
    CHECK(r3->second == Catch::Approx(27.15625));
  }
}

TEST_CASE("find_input_range on the default operating point brackets the "
          "known oscillatory drive") {
  SweepConfig cfg;
  cfg.seed = 7;
  SweepLog log;
  auto r = find_input_range(0.010, 0.020, cfg, &log);
  REQUIRE(r.has_value());
  CHECK(r->u_lo < r->u_hi);
  // the default drive (900) sits well inside the oscillatory band
  CHECK(r->u_lo < 900.0);
  CHECK(r->u_hi > 900.0);
  CHECK(log.attempts.size() >= 10);

  SECTION("a dead model (zero gains) never passes and is abandoned after "
          "exactly the configured failure run") {
    SweepConfig dead = cfg;
    dead.gain_scale = 0.0;
    SweepLog dlog;
    auto rd = find_input_range(0.010, 0.020, dead, &dlog);
    CHECK_FALSE(rd.has_value());
    CHECK(dlog.abandoned);
    CHECK(int(dlog.attempts.size()) == dead.max_failures);
    for (const auto& a : dlog.attempts) CHECK_FALSE(a.passed);
  }
}

TEST_CASE("generated corpus: split exactness, disjoint indices, "
          "standardization invariants") {
  SweepConfig cfg = small_config();
  GeneratedCorpus c = generate_dataset(cfg);

  const int n = c.train.size() + c.val.size() + c.test.size();
  REQUIRE(n > 0);
  CHECK(c.train.size() == (n * 8) / 10);
  CHECK(c.val.size() == n / 10);
  CHECK(c.test.size() == n - (n * 8) / 10 - n / 10);

  // indices partition the pool
  std::vector<int> all;
  for (const auto& s : c.split_indices)
    all.insert(all.end(), s.begin(), s.end());
  std::sort(all.begin(), all.end());
  REQUIRE(int(all.size()) == n);
  for (int i = 0; i < n; ++i) CHECK(all[i] == i);

  // training split: every target variable standardized to mean 0, std 1
  Vec sum = Vec::Zero(n_targets), sumsq = Vec::Zero(n_targets);
  std::int64_t cnt = 0;
  for (const auto& w : c.train.windows)
    for (int t = 0; t < window_len; ++t) {
      sum += w.targets.row(t).transpose();
      sumsq += w.targets.row(t).array().square().matrix();
      ++cnt;
    }
  for (int v = 0; v < n_targets; ++v) {
    double mean = sum[v] / double(cnt);
    double sd = std::sqrt(std::max(sumsq[v] / double(cnt) - mean * mean, 0.0));
    INFO("variable " << target_names[v]);
    CHECK(std::abs(mean) < 0.05);
    if (v == idx::z_pu) {
      // The drive channel's derivative settles to ~0 under constant input:
      // its raw variance sits below the scaling floor, so it stays unscaled.
      CHECK(sd < 1e-6);
      CHECK(c.train.stats.stdev[v] == 1.0);
    } else {
      CHECK(std::abs(sd - 1.0) < 0.05);
    }
  }

  // val/test reuse the training statistics verbatim
  CHECK(bits_equal(c.val.stats.mean, c.train.stats.mean));
  CHECK(bits_equal(c.test.stats.stdev, c.train.stats.stdev));
  CHECK(c.val.stats.obs_std == c.train.stats.obs_std);

  // de-standardizing the time-constant tracks recovers the window provenance
  for (const Dataset* d : {&c.val, &c.test})
    for (const auto& w : d->windows) {
      double te_raw =
          w.targets(100, 15) * d->stats.stdev[15] + d->stats.mean[15];
      double ti_raw =
          w.targets(250, 16) * d->stats.stdev[16] + d->stats.mean[16];
      CHECK(te_raw == Catch::Approx(w.tau_e).epsilon(1e-9));
      CHECK(ti_raw == Catch::Approx(w.tau_i).epsilon(1e-9));
    }

  // per-recording input standardization: pooled over a recording's windows,
  // the standardized observation has mean 0 and std 1 to rounding
  std::map<int, std::vector<const DataWindow*>> by_rec;
  for (const Dataset* d : {&c.train, &c.val, &c.test})
    for (const auto& w : d->windows) by_rec[w.rec_id].push_back(&w);
  int full_recs = 0;
  const int wins_per_rec = int(cfg.record_len * 400) / window_len;
  for (const auto& [rid, ws] : by_rec) {
    if (int(ws.size()) != wins_per_rec) continue;  // safety; all should match
    ++full_recs;
    double s = 0, s2 = 0;
    for (const auto* w : ws)
      for (int t = 0; t < window_len; ++t) {
        s += w->obs[t];
        s2 += w->obs[t] * w->obs[t];
      }
    double m = s / (ws.size() * window_len);
    double sd = std::sqrt(s2 / (ws.size() * window_len) - m * m);
    CHECK(std::abs(m) < 1e-9);
    CHECK(sd == Catch::Approx(1.0).epsilon(1e-9));
  }
  CHECK(full_recs == int(by_rec.size()));

  SECTION("generation is deterministic in the seed") {
    GeneratedCorpus c2 = generate_dataset(cfg);
    REQUIRE(c2.train.size() == c.train.size());
    CHECK(c2.split_indices == c.split_indices);
    for (int i : {0, c.train.size() / 2, c.train.size() - 1}) {
      CHECK(bits_equal(c2.train.windows[i].obs, c.train.windows[i].obs));
      CHECK(bits_equal(c2.train.windows[i].targets, c.train.windows[i].targets));
    }
    SweepConfig other = cfg;
    other.seed = 43;
    GeneratedCorpus c3 = generate_dataset(other);
    bool identical = c3.train.size() == c.train.size() &&
                     bits_equal(c3.train.windows[0].obs, c.train.windows[0].obs);
    CHECK_FALSE(identical);
  }
}

TEST_CASE("dataset directory round trip is bit exact and version checked") {
  SweepConfig cfg = small_config();
  cfg.tau_grid = {{0.010, 0.020}};
  cfg.inputs_per_pair = 2;
  GeneratedCorpus c = generate_dataset(cfg);

  std::string dir = std::filesystem::temp_directory_path() /
                    "nmtrack_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset_dir(dir, {&c.train, &c.val, &c.test},
                   json{{"seed", cfg.seed}}, c.split_indices);

  auto loaded = load_dataset_dir(dir);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].split == "train");
  CHECK(loaded[1].split == "val");
  CHECK(loaded[2].split == "test");
  REQUIRE(loaded[0].size() == c.train.size());
  for (int i = 0; i < c.train.size(); ++i) {
    const auto& a = c.train.windows[i];
    const auto& b = loaded[0].windows[i];
    REQUIRE(std::memcmp(a.obs.data(), b.obs.data(), 8 * window_len) == 0);
    REQUIRE(std::memcmp(a.targets.data(), b.targets.data(),
                        8 * window_len * n_targets) == 0);
    CHECK(a.rec_mu == b.rec_mu);
    CHECK(a.rec_sd == b.rec_sd);
    CHECK(a.tau_e == b.tau_e);
    CHECK(a.u == b.u);
    CHECK(a.rec_id == b.rec_id);
  }
  CHECK(bits_equal(loaded[0].stats.mean, c.train.stats.mean));
  CHECK(loaded[0].stats.obs_mean == c.train.stats.obs_mean);

  SECTION("loader rejects a format-version mismatch") {
    std::ifstream in(dir + "/meta.json");
    json meta = json::parse(in);
    in.close();
    meta["format_version"] = "nmtrack-dataset-v999";
    std::ofstream out(dir + "/meta.json");
    out << meta.dump(1);
    out.close();
    CHECK_THROWS_AS(load_dataset_dir(dir), io_error);
  }
  SECTION("loader rejects a truncated tensor file") {
    auto path = dir + "/val.bin";
    auto sz = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, sz / 2);
    CHECK_THROWS_AS(load_dataset_dir(dir), io_error);
  }
}

TEST_CASE("held-out generation reuses supplied statistics") {
  SweepConfig cfg = small_config();
  cfg.tau_grid = {{0.010, 0.020}};
  cfg.inputs_per_pair = 2;
  GeneratedCorpus c = generate_dataset(cfg);

  SweepConfig held = cfg;
  held.tau_grid = {{0.0125, 0.025}};
  held.inputs_per_pair = 1;
  held.seed = 99;
  Dataset d = generate_heldout_set(held, c.train.stats, "offgrid");
  REQUIRE(d.size() > 0);
  CHECK(d.split == "offgrid");
  CHECK(bits_equal(d.stats.mean, c.train.stats.mean));
  for (const auto& w : d.windows) {
    double te_raw = w.targets(0, 15) * d.stats.stdev[15] + d.stats.mean[15];
    CHECK(te_raw == Catch::Approx(0.0125).epsilon(1e-9));
  }
}

TEST_CASE("axis midpoints interleave a sorted unique axis") {
  auto m = axis_midpoints({0.03, 0.01, 0.02, 0.02});
  REQUIRE(m.size() == 2);
  CHECK(m[0] == Catch::Approx(0.015));
  CHECK(m[1] == Catch::Approx(0.025));
  CHECK(axis_midpoints({0.5}).empty());
}
