#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nmtrack/cli.hpp>

using namespace nmtrack;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult call(const std::vector<std::string>& args) {
  std::ostringstream o, e;
  CliResult r;
  r.code = cli::run(args, o, e);
  r.out = o.str();
  r.err = e.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

json err_json(const CliResult& r) { return json::parse(r.err); }

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("nmtrack_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// A one-pair corpus plus a small trained weights file, built once and shared
// by the subcommand round-trip tests.
struct SharedArtifacts {
  fs::path root, corpus, weights, recording;
};

const SharedArtifacts& shared() {
  static SharedArtifacts a = [] {
    SharedArtifacts s;
    s.root = fresh_dir("shared");
    s.corpus = s.root / "corpus";
    CliResult dg = call({"datagen", "--out-dir", s.corpus.string(), "--set",
                         "tau_es=[0.01]", "--set", "tau_is=[0.02]", "--set",
                         "inputs_per_pair=2", "--set", "record_len=6"});
    if (dg.code != 0) throw std::runtime_error("fixture datagen: " + dg.err);

    fs::path tr = s.root / "train";
    CliResult t = call({"train", "--dataset", s.corpus.string(), "--out-dir",
                        tr.string(), "--set", "hidden1=8", "--set", "hidden2=6",
                        "--set", "max_epochs=2", "--set", "batch=8"});
    if (t.code != 0) throw std::runtime_error("fixture train: " + t.err);
    s.weights = tr / "weights.nmlw";

    fs::path sim = s.root / "sim";
    CliResult sm = call({"simulate", "--out-dir", sim.string(), "--set",
                         "duration=3", "--seed", "11"});
    if (sm.code != 0) throw std::runtime_error("fixture simulate: " + sm.err);
    // trajectory.csv has a t column plus one column per track; the ingest
    // path picks the observation by its header name
    s.recording = sim / "trajectory.csv";
    return s;
  }();
  return a;
}

}  // namespace

TEST_CASE("cli help and usage errors exit with their documented codes") {
  CliResult h = call({"--help"});
  CHECK(h.code == 0);
  CHECK(h.out.find("simulate") != std::string::npos);
  CHECK(h.out.find("scenario-timevarying") != std::string::npos);

  CliResult none = call({});
  CHECK(none.code == cli::exit_config);
  CHECK(err_json(none).at("error").at("category") == "config");

  CliResult bad = call({"simulate", "--no-such-flag"});
  CHECK(bad.code == cli::exit_config);
  CHECK(err_json(bad).at("error").at("category") == "config");
}

TEST_CASE("cli rejects unknown config keys from files and --set alike") {
  fs::path dir = fresh_dir("badkey");
  fs::path cfgp = dir / "cfg.json";
  std::ofstream(cfgp) << R"({"duratoin": 2.0})";

  CliResult r = call({"simulate", "--config", cfgp.string(), "--out-dir",
                      (dir / "out").string()});
  CHECK(r.code == cli::exit_config);
  CHECK(r.err.find("unknown config key: simulate.duratoin") !=
        std::string::npos);
  CHECK(err_json(r).at("error").at("category") == "config");

  CliResult s = call({"datagen", "--out-dir", (dir / "out2").string(), "--set",
                      "tau_grid=[0.01]"});
  CHECK(s.code == cli::exit_config);
  CHECK(s.err.find("unknown config key: datagen.tau_grid") !=
        std::string::npos);

  CliResult m = call({"simulate", "--set", "notanassignment"});
  CHECK(m.code == cli::exit_config);
  fs::remove_all(dir);
}

TEST_CASE("cli simulate emits a deterministic trajectory and its snapshot") {
  fs::path a = fresh_dir("sim_a"), b = fresh_dir("sim_b");
  CliResult r1 = call({"simulate", "--out-dir", a.string(), "--set",
                       "duration=2", "--seed", "5"});
  REQUIRE(r1.code == 0);

  auto [names, data] = read_csv((a / "trajectory.csv").string());
  CHECK(data.rows() == 800);
  CHECK(names.size() == size_t(2 + n_targets));

  json snap = json::parse(slurp(a / "resolved_config.json"));
  CHECK(snap.at("subcommand") == "simulate");
  CHECK(snap.at("seed") == 5);
  CHECK(snap.at("duration") == 2);
  CHECK(snap.at("u") == 900.0);

  CliResult r2 = call({"simulate", "--out-dir", b.string(), "--set",
                       "duration=2", "--seed", "5"});
  REQUIRE(r2.code == 0);
  CHECK(slurp(a / "trajectory.csv") == slurp(b / "trajectory.csv"));

  CliResult r3 = call({"simulate", "--out-dir", b.string(), "--set",
                       "duration=1.5", "--seed", "5"});
  REQUIRE(r3.code == 0);
  auto [n3, d3] = read_csv((b / "trajectory.csv").string());
  CHECK(d3.rows() == 600);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("cli datagen writes a loadable corpus that echoes its config") {
  const SharedArtifacts& s = shared();
  std::vector<Dataset> splits = load_dataset_dir(s.corpus.string());
  REQUIRE(splits.size() == 3);
  // 2 recordings x 6 windows -> 12 windows split 9/1/2
  CHECK(splits[0].size() == 9);
  CHECK(splits[1].size() == 1);
  CHECK(splits[2].size() == 2);

  json meta = json::parse(slurp(s.corpus / "meta.json"));
  CHECK(meta.at("config").at("record_len") == 6);
  CHECK(meta.at("config").at("tau_es") == json::array({0.01}));

  auto [rn, rd] = read_csv((s.corpus / "input_ranges.csv").string());
  REQUIRE(rd.rows() == 1);
  CHECK(rd(0, 0) == 0.01);
  CHECK(rd(0, 3) >= rd(0, 2));
  CHECK(fs::exists(s.corpus / "resolved_config.json"));
}

TEST_CASE("cli train persists weights, a log, and test metrics") {
  const SharedArtifacts& s = shared();
  fs::path tr = s.weights.parent_path();
  REQUIRE(fs::exists(s.weights));

  WeightsMeta meta;
  Network<float> net = load_weights(s.weights.string(), &meta);
  CHECK(net.l1.hidden == 8);
  CHECK(net.l2.hidden == 6);
  CHECK(meta.extra.at("config").at("max_epochs") == 2);
  CHECK(meta.stats.stdev.size() == n_targets);

  auto [ln, ld] = read_csv((tr / "training_log.csv").string());
  CHECK(ld.rows() == 2);

  json metrics = json::parse(slurp(tr / "metrics.json"));
  CHECK(metrics.contains("test_obs_r2"));
  CHECK(std::isfinite(metrics.at("best_val").get<double>()));
}

TEST_CASE("cli infer tracks a csv recording and reports stability") {
  const SharedArtifacts& s = shared();
  fs::path dir = fresh_dir("infer");
  CliResult r = call({"infer", "--input", s.recording.string(), "--weights",
                      s.weights.string(), "--out-dir", dir.string(), "--set",
                      "channel=y"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("1200 samples") != std::string::npos);

  EstimateTrack tk = read_track((dir / "track_lstm.csv").string());
  CHECK(tk.n() == 1200);
  REQUIRE(tk.mean.cols() == n_targets);
  CHECK(tk.mean.allFinite());

  // 3 s at a 2 s window and 1 s stride -> rolling-std rows at t = 2 s, 3 s
  auto [sn, sd] = read_csv((dir / "stability.csv").string());
  REQUIRE(sn.size() == 8);
  CHECK(sn[1] == "std_u");
  CHECK(sn[7] == "std_tau_i");
  CHECK(sd.rows() == 2);
  CHECK(sd.allFinite());
  fs::remove_all(dir);
}

TEST_CASE("cli akf tracks the same recording from the default belief") {
  const SharedArtifacts& s = shared();
  fs::path dir = fresh_dir("akf");
  CliResult r = call({"akf", "--input", s.recording.string(), "--out-dir",
                      dir.string(), "--set", "channel=y"});
  REQUIRE(r.code == 0);
  EstimateTrack tk = read_track((dir / "track_akf.csv").string());
  CHECK(tk.n() == 1200);
  CHECK(tk.mean.cols() == n_aug);
  CHECK(fs::exists(dir / "resolved_config.json"));
  fs::remove_all(dir);
}

TEST_CASE("cli error categories map to exit codes and json stderr") {
  const SharedArtifacts& s = shared();
  fs::path dir = fresh_dir("errors");

  // required path missing from config entirely
  CliResult noweights =
      call({"infer", "--input", s.recording.string(), "--out-dir",
            (dir / "a").string()});
  CHECK(noweights.code == cli::exit_config);
  CHECK(err_json(noweights).at("error").at("category") == "config");

  CliResult noinput = call({"akf", "--input", "/no/such/file.csv", "--out-dir",
                            (dir / "b").string()});
  CHECK(noinput.code == cli::exit_io);
  CHECK(err_json(noinput).at("error").at("category") == "io");

  CliResult badfmt = call({"akf", "--input", s.recording.string(), "--out-dir",
                           (dir / "c").string(), "--set", "format=xyz"});
  CHECK(badfmt.code == cli::exit_io);

  CliResult nochan = call({"akf", "--input", s.recording.string(), "--out-dir",
                           (dir / "d").string(), "--set", "channel=zzz"});
  CHECK(nochan.code == cli::exit_io);
  CHECK(err_json(nochan).at("error").at("category") == "missing-channel");

  fs::path empty = dir / "empty.csv";
  std::ofstream(empty) << "t,y\n";
  CliResult emptyr = call({"akf", "--input", empty.string(), "--out-dir",
                           (dir / "e").string()});
  CHECK(emptyr.code == cli::exit_io);
  CHECK(err_json(emptyr).at("error").at("category") == "empty-input");
  fs::remove_all(dir);
}

TEST_CASE("cli eval writes reports, grids, and a plotting stub") {
  const SharedArtifacts& s = shared();
  fs::path dir = fresh_dir("eval");
  CliResult r = call({"eval", "--weights", s.weights.string(), "--out-dir",
                      dir.string(), "--set", "tau_es=[0.01,0.03]", "--set",
                      "tau_is=[0.02,0.04]", "--set", "inputs_per_cell=1",
                      "--set", "record_len=3", "--seed", "77"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("median parameter rmse") != std::string::npos);
  CHECK(fs::exists(dir / "rmse_report.csv"));
  CHECK(fs::exists(dir / "plot_grids.py"));
  int n_grids = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind("grid_", 0) == 0) ++n_grids;
  CHECK(n_grids == 30);
  json snap = json::parse(slurp(dir / "resolved_config.json"));
  CHECK(snap.at("seed") == 77);
  fs::remove_all(dir);
}

TEST_CASE("cli scenario compares both estimators on moving time constants") {
  const SharedArtifacts& s = shared();
  fs::path dir = fresh_dir("scenario");
  CliResult r = call({"scenario-timevarying", "--weights", s.weights.string(),
                      "--out-dir", dir.string(), "--set", "n_segments=2",
                      "--seed", "3"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "trajectory.csv"));
  CHECK(fs::exists(dir / "track_lstm.csv"));
  CHECK(fs::exists(dir / "track_akf_perfect.csv"));

  json cj = json::parse(slurp(dir / "comparison.json"));
  REQUIRE(cj.at("variables").size() == 5);
  CHECK(cj.at("winner").size() == 5);
  CHECK(cj.at("held_tau_e").size() == 2);

  std::string csv = slurp(dir / "comparison.csv");
  CHECK(csv.find("variable,lstm_whole,akf_whole,winner,lstm_seg1,lstm_seg2,"
                 "akf_seg1,akf_seg2") == 0);
  CHECK(csv.find("\nu,") != std::string::npos);
  fs::remove_all(dir);
}
