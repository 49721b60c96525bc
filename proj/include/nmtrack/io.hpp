#pragma once
// File formats: CSV exports (17-significant-digit round trips), trajectory
// and track persistence with JSON sidecars, recording ingestion (CSV / EDF)
// with NaN repair and resampling, and a minimal EDF reader/writer.
#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "nmtrack/simulate.hpp"
#include "nmtrack/track.hpp"

namespace nmtrack {

using json = nlohmann::json;

struct edf_format_error : io_error {
  using io_error::io_error;
};
struct missing_channel_error : io_error {
  using io_error::io_error;
};
struct empty_file_error : io_error {
  using io_error::io_error;
};

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s) {
  if (s.empty()) return std::nan("");
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) return std::nan("");
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------- CSV tables

// Writes a named-column table; every value at 17 significant digits.
inline void write_csv(const std::string& path,
                      const std::vector<std::string>& names, const Mat& data) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot open for write: " + path);
  for (size_t i = 0; i < names.size(); ++i)
    f << names[i] << (i + 1 < names.size() ? "," : "\n");
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    for (Eigen::Index c = 0; c < data.cols(); ++c)
      f << detail::fmt17(data(r, c)) << (c + 1 < data.cols() ? "," : "\n");
  if (!f) throw io_error("write failed: " + path);
}

inline std::pair<std::vector<std::string>, Mat> read_csv(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw empty_file_error("empty file: " + path);
  std::vector<std::string> names = detail::split_csv_line(line);
  std::vector<double> vals;
  size_t rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != names.size())
      throw io_error("ragged csv row in " + path);
    for (auto& c : cells) vals.push_back(detail::parse_double(c));
    ++rows;
  }
  Mat m(rows, names.size());
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < names.size(); ++c)
      m(r, c) = vals[r * names.size() + c];
  return {names, m};
}

// ------------------------------------------------------- trajectory persist

inline json params_to_json(const ModelParams& p) {
  return json{{"tau_e", p.tau_e},       {"tau_i", p.tau_i},
              {"alpha_pe", p.alpha_pe}, {"alpha_pi", p.alpha_pi},
              {"alpha_ip", p.alpha_ip}, {"alpha_ep", p.alpha_ep},
              {"u", p.u},               {"v0", p.v0},
              {"sigma_s", p.sigma_s},   {"dt", p.dt},
              {"q_process", p.q_process}, {"r_obs", p.r_obs}};
}

inline ModelParams params_from_json(const json& j) {
  ModelParams p;
  p.tau_e = j.at("tau_e");
  p.tau_i = j.at("tau_i");
  p.alpha_pe = j.at("alpha_pe");
  p.alpha_pi = j.at("alpha_pi");
  p.alpha_ip = j.at("alpha_ip");
  p.alpha_ep = j.at("alpha_ep");
  p.u = j.at("u");
  p.v0 = j.at("v0");
  p.sigma_s = j.at("sigma_s");
  p.dt = j.at("dt");
  p.q_process = j.at("q_process");
  p.r_obs = j.at("r_obs");
  return p;
}

inline void write_trajectory(const std::string& path, const Trajectory& tr) {
  std::vector<std::string> names{"time", "y"};
  for (const char* n : target_names) names.push_back(n);
  Mat data(tr.n(), 2 + n_targets);
  data.col(0) = tr.times;
  data.col(1) = tr.obs;
  data.middleCols(2, n_aug) = tr.states;
  data.rightCols(2) = tr.tau_track;
  write_csv(path, names, data);
  json side{{"params", params_to_json(tr.base)},
            {"seed", tr.seed},
            {"dt", tr.base.dt},
            {"n", tr.n()}};
  std::ofstream sf(path + ".json");
  sf << side.dump(2) << "\n";
  if (!sf) throw io_error("write failed: " + path + ".json");
}

inline Trajectory read_trajectory(const std::string& path) {
  auto [names, data] = read_csv(path);
  if (names.size() != size_t(2 + n_targets) || names[0] != "time")
    throw io_error("not a trajectory file: " + path);
  Trajectory tr;
  tr.times = data.col(0);
  tr.obs = data.col(1);
  tr.states = data.middleCols(2, n_aug);
  tr.tau_track = data.rightCols(2);
  std::ifstream sf(path + ".json");
  if (sf) {
    json side = json::parse(sf);
    tr.base = params_from_json(side.at("params"));
    tr.seed = side.at("seed");
  }
  return tr;
}

// ------------------------------------------------------------ track persist

inline void write_track(const std::string& path, const EstimateTrack& tk) {
  const int ncols = int(tk.mean.cols());
  std::vector<std::string> names{"t", "y", "yhat"};
  for (int i = 0; i < ncols; ++i)
    names.push_back(std::string("m_") + target_names[i]);
  if (tk.has_cov())
    for (int i = 0; i < ncols; ++i)
      names.push_back(std::string("s_") + target_names[i]);
  if (tk.innovation.size() > 0) names.push_back("innovation");
  Mat data(tk.n(), names.size());
  data.col(0) = tk.t;
  data.col(1) = tk.y;
  data.col(2) = tk.yhat;
  data.middleCols(3, ncols) = tk.mean;
  int at = 3 + ncols;
  if (tk.has_cov()) {
    data.middleCols(at, ncols) = tk.std_dev;
    at += ncols;
  }
  if (tk.innovation.size() > 0) data.col(at) = tk.innovation;
  write_csv(path, names, data);
  json side{{"truncated", tk.truncated}, {"fail_step", tk.fail_step},
            {"columns", ncols}};
  std::ofstream sf(path + ".json");
  sf << side.dump(2) << "\n";
}

inline EstimateTrack read_track(const std::string& path) {
  auto [names, data] = read_csv(path);
  EstimateTrack tk;
  tk.t = data.col(0);
  tk.y = data.col(1);
  tk.yhat = data.col(2);
  int ncols = 0;
  for (const auto& n : names)
    if (n.rfind("m_", 0) == 0) ++ncols;
  tk.mean = data.middleCols(3, ncols);
  int at = 3 + ncols;
  int nstd = 0;
  for (const auto& n : names)
    if (n.rfind("s_", 0) == 0) ++nstd;
  if (nstd > 0) {
    tk.std_dev = data.middleCols(at, nstd);
    at += nstd;
  }
  if (names.back() == "innovation") tk.innovation = data.col(at);
  std::ifstream sf(path + ".json");
  if (sf) {
    json side = json::parse(sf);
    tk.truncated = side.value("truncated", false);
    tk.fail_step = side.value("fail_step", -1);
  }
  return tk;
}

// -------------------------------------------------------------- recordings

struct Recording {
  std::vector<double> samples;  // physical units (mV unless noted in source)
  double rate = 400.0;          // Hz
  std::string label;
  std::string source;
  int repaired = 0;       // non-finite samples fixed by interpolation
  bool resampled = false;
  double orig_rate = 400.0;
};

// Linear interpolation across non-finite runs; edges take the nearest finite
// value. Returns the repair count.
inline int repair_nonfinite(std::vector<double>& s) {
  const int n = static_cast<int>(s.size());
  int fixed = 0;
  int i = 0;
  while (i < n) {
    if (std::isfinite(s[i])) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n && !std::isfinite(s[j])) ++j;
    double left = (i > 0) ? s[i - 1] : (j < n ? s[j] : 0.0);
    double right = (j < n) ? s[j] : left;
    for (int k = i; k < j; ++k) {
      double f = double(k - i + 1) / double(j - i + 1);
      s[k] = left + f * (right - left);
      ++fixed;
    }
    i = j;
  }
  return fixed;
}

inline void resample_to(Recording& r, double target_rate) {
  if (r.rate == target_rate || r.samples.size() < 2) return;
  const double ratio = r.rate / target_rate;
  const int n_new =
      static_cast<int>(std::floor(double(r.samples.size() - 1) / ratio)) + 1;
  std::vector<double> out(n_new);
  for (int i = 0; i < n_new; ++i) {
    double pos = i * ratio;
    int lo = static_cast<int>(pos);
    int hi = std::min<int>(lo + 1, int(r.samples.size()) - 1);
    double f = pos - lo;
    out[i] = (1.0 - f) * r.samples[lo] + f * r.samples[hi];
  }
  r.samples = std::move(out);
  r.orig_rate = r.rate;
  r.rate = target_rate;
  r.resampled = true;
}

// ---------------------------------------------------------------------- EDF

struct EdfSignal {
  std::string label, transducer, phys_dim, prefilter;
  double phys_min = -1000.0, phys_max = 1000.0;
  int dig_min = -32768, dig_max = 32767;
  int samples_per_record = 400;
};

struct EdfHeader {
  std::string patient = "X X X X";
  std::string recording = "Startdate X X X X";
  std::string startdate = "01.01.20", starttime = "00.00.00";
  int n_records = 0;
  double record_duration = 1.0;
  std::vector<EdfSignal> signals;
};

namespace detail {

inline std::string pad_field(const std::string& s, size_t w) {
  std::string out = s.substr(0, w);
  out.resize(w, ' ');
  return out;
}
inline std::string read_field(std::istream& f, size_t w) {
  std::string s(w, '\0');
  f.read(s.data(), std::streamsize(w));
  if (!f) throw edf_format_error("truncated header");
  size_t end = s.find_last_not_of(' ');
  return end == std::string::npos ? std::string() : s.substr(0, end + 1);
}
inline double field_num(const std::string& s, const char* what) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw edf_format_error(std::string("bad numeric field: ") + what);
  return v;
}

}  // namespace detail

inline EdfHeader read_edf_header(std::istream& f) {
  using detail::read_field;
  std::string version = read_field(f, 8);
  if (version != "0") throw edf_format_error("unsupported version: " + version);
  EdfHeader h;
  h.patient = read_field(f, 80);
  h.recording = read_field(f, 80);
  h.startdate = read_field(f, 8);
  h.starttime = read_field(f, 8);
  long header_bytes = long(detail::field_num(read_field(f, 8), "header size"));
  read_field(f, 44);  // reserved
  h.n_records = int(detail::field_num(read_field(f, 8), "record count"));
  h.record_duration = detail::field_num(read_field(f, 8), "record duration");
  int ns = int(detail::field_num(read_field(f, 4), "signal count"));
  if (ns <= 0 || ns > 4096) throw edf_format_error("bad signal count");
  if (header_bytes != 256 + 256 * ns)
    throw edf_format_error("header size mismatch");
  h.signals.resize(ns);
  // per-signal headers are grouped by field, not by signal
  for (auto& s : h.signals) s.label = read_field(f, 16);
  for (auto& s : h.signals) s.transducer = read_field(f, 80);
  for (auto& s : h.signals) s.phys_dim = read_field(f, 8);
  for (auto& s : h.signals) s.phys_min = detail::field_num(read_field(f, 8), "phys min");
  for (auto& s : h.signals) s.phys_max = detail::field_num(read_field(f, 8), "phys max");
  for (auto& s : h.signals) s.dig_min = int(detail::field_num(read_field(f, 8), "dig min"));
  for (auto& s : h.signals) s.dig_max = int(detail::field_num(read_field(f, 8), "dig max"));
  for (auto& s : h.signals) s.prefilter = read_field(f, 80);
  for (auto& s : h.signals)
    s.samples_per_record = int(detail::field_num(read_field(f, 8), "samples per record"));
  for (auto& s : h.signals) read_field(f, 32);  // reserved
  for (const auto& s : h.signals) {
    if (s.dig_max <= s.dig_min) throw edf_format_error("bad digital range");
    if (s.samples_per_record <= 0) throw edf_format_error("bad record length");
  }
  return h;
}

inline Recording read_edf_channel(const std::string& path,
                                  const std::string& channel) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open: " + path);
  f.seekg(0, std::ios::end);
  if (f.tellg() == 0) throw empty_file_error("empty file: " + path);
  f.seekg(0);
  EdfHeader h = read_edf_header(f);
  int pick = -1;
  if (channel.empty()) {
    pick = 0;
  } else {
    for (size_t i = 0; i < h.signals.size(); ++i)
      if (h.signals[i].label == channel) pick = int(i);
    if (pick < 0)
      throw missing_channel_error("channel not found: " + channel);
  }
  const EdfSignal& sig = h.signals[pick];
  const double gain =
      (sig.phys_max - sig.phys_min) / double(sig.dig_max - sig.dig_min);
  Recording rec;
  rec.label = sig.label;
  rec.source = path;
  rec.rate = sig.samples_per_record / h.record_duration;
  rec.orig_rate = rec.rate;
  rec.samples.reserve(size_t(h.n_records) * sig.samples_per_record);
  // skip to this signal inside each record
  long pre = 0, post = 0;
  for (int i = 0; i < int(h.signals.size()); ++i) {
    if (i < pick) pre += h.signals[i].samples_per_record;
    if (i > pick) post += h.signals[i].samples_per_record;
  }
  std::vector<std::int16_t> buf(sig.samples_per_record);
  for (int r = 0; r < h.n_records; ++r) {
    f.seekg(2 * pre, std::ios::cur);
    f.read(reinterpret_cast<char*>(buf.data()), 2 * buf.size());
    if (!f) throw edf_format_error("truncated data record");
    f.seekg(2 * post, std::ios::cur);
    for (std::int16_t d : buf)
      rec.samples.push_back((d - sig.dig_min) * gain + sig.phys_min);
  }
  rec.repaired = repair_nonfinite(rec.samples);
  return rec;
}

// Writes an EDF file; fill(record, signal) must return samples_per_record
// digital values for that signal in that record.
template <class Fill>
inline void write_edf(const std::string& path, const EdfHeader& h,
                      Fill&& fill) {
  using detail::pad_field;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for write: " + path);
  const int ns = int(h.signals.size());
  char num[32];
  f << pad_field("0", 8) << pad_field(h.patient, 80)
    << pad_field(h.recording, 80) << pad_field(h.startdate, 8)
    << pad_field(h.starttime, 8);
  std::snprintf(num, sizeof num, "%d", 256 + 256 * ns);
  f << pad_field(num, 8) << pad_field("", 44);
  std::snprintf(num, sizeof num, "%d", h.n_records);
  f << pad_field(num, 8);
  std::snprintf(num, sizeof num, "%g", h.record_duration);
  f << pad_field(num, 8);
  std::snprintf(num, sizeof num, "%d", ns);
  f << pad_field(num, 4);
  for (const auto& s : h.signals) f << pad_field(s.label, 16);
  for (const auto& s : h.signals) f << pad_field(s.transducer, 80);
  for (const auto& s : h.signals) f << pad_field(s.phys_dim, 8);
  for (const auto& s : h.signals) {
    std::snprintf(num, sizeof num, "%g", s.phys_min);
    f << pad_field(num, 8);
  }
  for (const auto& s : h.signals) {
    std::snprintf(num, sizeof num, "%g", s.phys_max);
    f << pad_field(num, 8);
  }
  for (const auto& s : h.signals) {
    std::snprintf(num, sizeof num, "%d", s.dig_min);
    f << pad_field(num, 8);
  }
  for (const auto& s : h.signals) {
    std::snprintf(num, sizeof num, "%d", s.dig_max);
    f << pad_field(num, 8);
  }
  for (const auto& s : h.signals) f << pad_field(s.prefilter, 80);
  for (const auto& s : h.signals) {
    std::snprintf(num, sizeof num, "%d", s.samples_per_record);
    f << pad_field(num, 8);
  }
  for (int i = 0; i < ns; ++i) f << pad_field("", 32);
  for (int r = 0; r < h.n_records; ++r)
    for (int s = 0; s < ns; ++s) {
      std::vector<std::int16_t> v = fill(r, s);
      if (int(v.size()) != h.signals[s].samples_per_record)
        throw io_error("edf fill returned wrong sample count");
      f.write(reinterpret_cast<const char*>(v.data()), 2 * v.size());
    }
  if (!f) throw io_error("write failed: " + path);
}

// ----------------------------------------------------------------- ingest

inline Recording ingest_csv(const std::string& path,
                            const std::string& channel) {
  auto [names, data] = read_csv(path);
  if (data.rows() == 0) throw empty_file_error("no rows: " + path);
  int ycol = -1, tcol = -1;
  std::string want = channel.empty() ? "y" : channel;
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == want) ycol = int(i);
    if (names[i] == "t" || names[i] == "time") tcol = int(i);
  }
  if (ycol < 0) throw missing_channel_error("column not found: " + want);
  Recording rec;
  rec.label = want;
  rec.source = path;
  rec.samples.assign(data.col(ycol).data(), data.col(ycol).data() + data.rows());
  if (tcol >= 0 && data.rows() > 1) {
    // median spacing -> rate (robust against a few bad stamps)
    std::vector<double> dts;
    for (Eigen::Index i = 1; i < data.rows(); ++i)
      dts.push_back(data(i, tcol) - data(i - 1, tcol));
    std::nth_element(dts.begin(), dts.begin() + dts.size() / 2, dts.end());
    double dt = dts[dts.size() / 2];
    if (dt > 0.0) rec.rate = 1.0 / dt;
  }
  rec.orig_rate = rec.rate;
  rec.repaired = repair_nonfinite(rec.samples);
  return rec;
}

// Format by extension when `format` is empty ("csv" / "edf"). Always returns
// a 400 Hz recording; resampling is recorded in the flags.
inline Recording ingest(const std::string& path, std::string format = "",
                        const std::string& channel = "") {
  if (format.empty()) {
    auto dot = path.rfind('.');
    format = dot == std::string::npos ? "" : path.substr(dot + 1);
    for (char& c : format) c = char(std::tolower(c));
  }
  Recording rec;
  if (format == "csv")
    rec = ingest_csv(path, channel);
  else if (format == "edf")
    rec = read_edf_channel(path, channel);
  else
    throw io_error("unknown recording format: " + format);
  if (rec.samples.empty()) throw empty_file_error("no samples: " + path);
  // genuine rate differences are whole hertz apart; timestamp rounding is not
  if (std::fabs(rec.rate - 400.0) > 0.5) resample_to(rec, 400.0);
  return rec;
}

}  // namespace nmtrack
