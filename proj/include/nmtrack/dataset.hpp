#pragma once
// Windowed training data with standardization statistics and a versioned
// on-disk format (meta.json + per-split binary tensors).
#include <array>
#include <filesystem>
#include <fstream>

#include "nmtrack/io.hpp"

namespace nmtrack {

inline constexpr int window_len = 400;
inline constexpr const char* dataset_format_version = "nmtrack-dataset-v1";

struct StandardStats {
  Vec mean = Vec::Zero(n_targets);
  Vec stdev = Vec::Ones(n_targets);
  double obs_mean = 0.0;  // raw training observations (loss scaling)
  double obs_std = 1.0;

  json to_json() const {
    return json{{"mean", std::vector<double>(mean.data(), mean.data() + n_targets)},
                {"stdev", std::vector<double>(stdev.data(), stdev.data() + n_targets)},
                {"obs_mean", obs_mean},
                {"obs_std", obs_std}};
  }
  static StandardStats from_json(const json& j) {
    StandardStats s;
    auto m = j.at("mean").get<std::vector<double>>();
    auto d = j.at("stdev").get<std::vector<double>>();
    if (int(m.size()) != n_targets || int(d.size()) != n_targets)
      throw io_error("stats with wrong target count");
    s.mean = Eigen::Map<Vec>(m.data(), n_targets);
    s.stdev = Eigen::Map<Vec>(d.data(), n_targets);
    s.obs_mean = j.at("obs_mean");
    s.obs_std = j.at("obs_std");
    return s;
  }
};

struct DataWindow {
  Vec obs;      // window_len, standardized per recording
  Mat targets;  // window_len x n_targets, standardized with training stats
  double rec_mu = 0.0, rec_sd = 1.0;  // the per-recording input scaling
  double tau_e = 0.0, tau_i = 0.0, u = 0.0;  // provenance
  int rec_id = -1;
};

struct Dataset {
  std::vector<DataWindow> windows;
  StandardStats stats;
  std::string split;

  int size() const { return static_cast<int>(windows.size()); }
};

namespace detail {

inline void write_split_bin(const std::string& path, const Dataset& d) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for write: " + path);
  const char magic[4] = {'N', 'M', 'D', 'S'};
  std::uint32_t ver = 1, wl = window_len, nt = n_targets;
  std::uint64_t n = d.windows.size();
  f.write(magic, 4);
  f.write(reinterpret_cast<char*>(&ver), 4);
  f.write(reinterpret_cast<char*>(&n), 8);
  f.write(reinterpret_cast<char*>(&wl), 4);
  f.write(reinterpret_cast<char*>(&nt), 4);
  for (const auto& w : d.windows) {
    f.write(reinterpret_cast<const char*>(w.obs.data()), 8 * window_len);
    // targets stored row-major (time, variable)
    for (int t = 0; t < window_len; ++t)
      for (int v = 0; v < n_targets; ++v) {
        double x = w.targets(t, v);
        f.write(reinterpret_cast<const char*>(&x), 8);
      }
  }
  if (!f) throw io_error("write failed: " + path);
}

inline void read_split_bin(const std::string& path, Dataset& d) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open: " + path);
  char magic[4];
  std::uint32_t ver, wl, nt;
  std::uint64_t n;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&ver), 4);
  f.read(reinterpret_cast<char*>(&n), 8);
  f.read(reinterpret_cast<char*>(&wl), 4);
  f.read(reinterpret_cast<char*>(&nt), 4);
  if (!f || std::memcmp(magic, "NMDS", 4) != 0)
    throw io_error("not a dataset tensor file: " + path);
  if (ver != 1 || wl != window_len || nt != n_targets)
    throw io_error("dataset tensor version/shape mismatch: " + path);
  if (n != d.windows.size())
    throw io_error("tensor count disagrees with meta: " + path);
  for (auto& w : d.windows) {
    w.obs.resize(window_len);
    w.targets.resize(window_len, n_targets);
    f.read(reinterpret_cast<char*>(w.obs.data()), 8 * window_len);
    for (int t = 0; t < window_len; ++t)
      for (int v = 0; v < n_targets; ++v) {
        double x;
        f.read(reinterpret_cast<char*>(&x), 8);
        w.targets(t, v) = x;
      }
    if (!f) throw io_error("truncated tensor file: " + path);
  }
}

inline json window_meta(const Dataset& d) {
  json mu = json::array(), sd = json::array(), te = json::array(),
       ti = json::array(), u = json::array(), rid = json::array();
  for (const auto& w : d.windows) {
    mu.push_back(w.rec_mu);
    sd.push_back(w.rec_sd);
    te.push_back(w.tau_e);
    ti.push_back(w.tau_i);
    u.push_back(w.u);
    rid.push_back(w.rec_id);
  }
  return json{{"rec_mu", mu}, {"rec_sd", sd},   {"tau_e", te},
              {"tau_i", ti},  {"u", u},         {"rec_id", rid}};
}

inline void apply_window_meta(Dataset& d, const json& j) {
  auto mu = j.at("rec_mu"), sd = j.at("rec_sd"), te = j.at("tau_e"),
       ti = j.at("tau_i"), uu = j.at("u"), rid = j.at("rec_id");
  d.windows.resize(mu.size());
  for (size_t i = 0; i < d.windows.size(); ++i) {
    d.windows[i].rec_mu = mu[i];
    d.windows[i].rec_sd = sd[i];
    d.windows[i].tau_e = te[i];
    d.windows[i].tau_i = ti[i];
    d.windows[i].u = uu[i];
    d.windows[i].rec_id = rid[i];
  }
}

}  // namespace detail

// Saves train/val/test (+ optional extra splits) into a directory.
inline void save_dataset_dir(const std::string& dir,
                             const std::vector<const Dataset*>& splits,
                             const json& config_echo,
                             const std::vector<std::vector<int>>& split_indices = {}) {
  std::filesystem::create_directories(dir);
  json meta{{"format_version", dataset_format_version},
            {"window_len", window_len},
            {"n_targets", n_targets},
            {"config", config_echo}};
  meta["stats"] = splits.empty() ? StandardStats().to_json()
                                 : splits.front()->stats.to_json();
  json splits_meta = json::object();
  for (const Dataset* d : splits) {
    detail::write_split_bin(dir + "/" + d->split + ".bin", *d);
    json sm = detail::window_meta(*d);
    sm["count"] = d->size();
    splits_meta[d->split] = sm;
  }
  meta["splits"] = splits_meta;
  if (!split_indices.empty()) {
    json si = json::object();
    const char* names[] = {"train", "val", "test"};
    for (size_t i = 0; i < split_indices.size() && i < 3; ++i)
      si[names[i]] = split_indices[i];
    meta["split_indices"] = si;
  }
  std::ofstream f(dir + "/meta.json");
  f << meta.dump(1) << "\n";
  if (!f) throw io_error("write failed: " + dir + "/meta.json");
}

inline std::vector<Dataset> load_dataset_dir(const std::string& dir) {
  std::ifstream f(dir + "/meta.json");
  if (!f) throw io_error("cannot open: " + dir + "/meta.json");
  json meta = json::parse(f);
  if (meta.value("format_version", "") != dataset_format_version)
    throw io_error("dataset format version mismatch in " + dir);
  if (meta.value("window_len", 0) != window_len ||
      meta.value("n_targets", 0) != n_targets)
    throw io_error("dataset shape mismatch in " + dir);
  StandardStats stats = StandardStats::from_json(meta.at("stats"));
  std::vector<Dataset> out;
  for (auto& [name, sm] : meta.at("splits").items()) {
    Dataset d;
    d.split = name;
    d.stats = stats;
    detail::apply_window_meta(d, sm);
    detail::read_split_bin(dir + "/" + name + ".bin", d);
    out.push_back(std::move(d));
  }
  // canonical order when present: train, val, test, extras
  auto rank = [](const std::string& s) {
    if (s == "train") return 0;
    if (s == "val") return 1;
    if (s == "test") return 2;
    return 3;
  };
  std::sort(out.begin(), out.end(), [&](const Dataset& a, const Dataset& b) {
    return rank(a.split) < rank(b.split);
  });
  return out;
}

}  // namespace nmtrack
