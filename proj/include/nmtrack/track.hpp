#pragma once
// Per-timestep estimator output shared by both filters.
#include "nmtrack/common.hpp"

namespace nmtrack {

inline const char* target_names[n_targets] = {
    "v_pe", "z_pe", "v_pi", "z_pi", "v_ep", "z_ep", "v_ip", "z_ip", "v_pu",
    "z_pu", "u",    "a_pe", "a_pi", "a_ip", "a_ep", "tau_e", "tau_i"};

struct EstimateTrack {
  Vec t;           // seconds
  Vec y;           // observed input
  Vec yhat;        // reconstructed observation H xi_hat
  Mat mean;        // n x 15 (belief filter) or n x 17 (network), physical units
  Mat std_dev;     // n x 15 marginal stds (belief filter) or 0 x 0
  Vec innovation;  // belief filter only, else empty
  bool truncated = false;  // the run diverged early
  int fail_step = -1;

  int n() const { return static_cast<int>(t.size()); }
  bool has_cov() const { return std_dev.size() > 0; }
};

}  // namespace nmtrack
