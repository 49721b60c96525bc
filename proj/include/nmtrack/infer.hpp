#pragma once
// Applying a trained network to an arbitrary-length 400 Hz signal: the
// recording is standardized with its own mean/std, cut into consecutive
// 400-sample windows (plus one overlapping window covering the tail), and
// the batched predictions are de-standardized back to physical units.
#include "nmtrack/lstm.hpp"
#include "nmtrack/track.hpp"

namespace nmtrack {

struct InferConfig {
  int batch = 64;
  double dt = 1.0 / 400.0;
};

inline EstimateTrack run_lstm(const std::vector<double>& y,
                              const Network<float>& net,
                              const StandardStats& stats,
                              const InferConfig& cfg = {}) {
  const int n = static_cast<int>(y.size());
  if (n < window_len)
    throw sample_size_error("inference needs at least one full window (" +
                            std::to_string(window_len) + " samples)");
  double mu = 0;
  for (double v : y) mu += v;
  mu /= n;
  double var = 0;
  for (double v : y) var += (v - mu) * (v - mu);
  double sd = std::sqrt(var / n);
  if (sd < 1e-12) sd = 1e-12;

  // window start offsets; the final window backs up to cover the tail
  std::vector<int> starts;
  for (int s = 0; s + window_len <= n; s += window_len) starts.push_back(s);
  const int covered = int(starts.size()) * window_len;
  if (covered < n) starts.push_back(n - window_len);

  EstimateTrack tr;
  tr.t.resize(n);
  tr.y = Eigen::Map<const Vec>(y.data(), n);
  tr.yhat.resize(n);
  tr.mean.resize(n, n_targets);
  for (int i = 0; i < n; ++i) tr.t[i] = (i + 1) * cfg.dt;

  FwdCache<float> cache;
  const int W = int(starts.size());
  for (int w0 = 0; w0 < W; w0 += cfg.batch) {
    const int B = std::min(cfg.batch, W - w0);
    MatX<float> x(1, window_len * B);
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < window_len; ++t)
        x(0, t * B + b) = float((y[starts[w0 + b] + t] - mu) / sd);
    MatX<float> out = forward(net, x, window_len, B, cache);
    for (int b = 0; b < B; ++b) {
      const int s = starts[w0 + b];
      // the tail window only contributes samples not already written
      const int from = (w0 + b == W - 1 && covered < n) ? covered - s : 0;
      for (int t = from; t < window_len; ++t) {
        const int col = t * B + b;
        double yhat = 0;
        for (int j = 0; j < n_targets; ++j) {
          const double raw =
              double(out(j, col)) * stats.stdev[j] + stats.mean[j];
          tr.mean(s + t, j) = raw;
        }
        for (int i : obs_indices) yhat += tr.mean(s + t, i);
        tr.yhat[s + t] = yhat;
      }
    }
  }
  return tr;
}

}  // namespace nmtrack
