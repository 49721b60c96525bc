#pragma once
// Shared aliases, the augmented-state layout, and a portable RNG.
#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace nmtrack {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr int n_state = 10;   // five synaptic channels, (v, z) each
inline constexpr int n_theta = 5;    // [u, a_pe, a_pi, a_ip, a_ep]
inline constexpr int n_aug = n_state + n_theta;
inline constexpr int n_targets = n_aug + 2;  // augmented entries + tau_e, tau_i

// Fixed index layout of the augmented state vector.
// Channels in order [pe, pi, ep, ip, pu]; each owns (v, z) at (2c, 2c+1).
struct idx {
  enum : int {
    v_pe = 0, z_pe, v_pi, z_pi, v_ep, z_ep, v_ip, z_ip, v_pu, z_pu,
    th_u = 10, th_a_pe, th_a_pi, th_a_ip, th_a_ep
  };
};

// Pyramidal membrane potential = v_pe + v_pi + v_pu; the observed quantity.
inline constexpr std::array<int, 3> obs_indices{idx::v_pe, idx::v_pi, idx::v_pu};

inline double pyramidal_potential(const Vec& xi) {
  return xi[idx::v_pe] + xi[idx::v_pi] + xi[idx::v_pu];
}

// Observation row over the augmented state.
inline Vec observation_row() {
  Vec h = Vec::Zero(n_aug);
  for (int i : obs_indices) h[i] = 1.0;
  return h;
}

// Deterministic RNG: mt19937_64 stream + explicit Box-Muller so draws are
// bit-identical across standard libraries.
struct rng {
  std::uint64_t s;
  explicit rng(std::uint64_t seed) : gen_(seed), s(seed) {}
  // uniform in [0, 1)
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  std::uint64_t raw() { return gen_(); }
 private:
  std::mt19937_64 gen_;
};

// Stable per-task sub-seed derivation (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct divergence_error : std::runtime_error {
  int channel;
  explicit divergence_error(const std::string& what, int ch = -1)
      : std::runtime_error(what), channel(ch) {}
};
struct degenerate_sample_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct sample_size_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nmtrack
