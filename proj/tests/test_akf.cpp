// Belief filter: closed-form sigmoid moments, the product-rule drive term,
// one full predict/update step against frozen references, covariance repair,
// tracking behavior, and divergence truncation.
#include <catch2/catch_amalgamated.hpp>

#include "nmtrack/akf.hpp"
#include "nmtrack/simulate.hpp"

using namespace nmtrack;

TEST_CASE("gaussian sigmoid moments match frozen references") {
  struct Row {
    double mu, var, e_phi, e_phi_deriv;
  };
  const Row rows[] = {
      {8.0, 4.0, 0.753641661386456, 0.10814679815668049},
      {2.0, 0.25, 0.03322871000846561, 0.03397190673070312},
      {6.0, 9.0, 0.5, 0.10857833597842666},
      {-3.0, 16.0, 0.023418706541819267, 0.012219029683326955},
      {10.0, 0.0, 0.9703267806040401, 0.031785184010991334},
  };
  for (const Row& r : rows) {
    auto m = gaussian_sigmoid_moments(r.mu, r.var, 6.0, 3.0);
    CHECK(m.e_phi == Catch::Approx(r.e_phi).epsilon(1e-14));
    CHECK(m.e_phi_deriv == Catch::Approx(r.e_phi_deriv).epsilon(1e-14));
  }

  SECTION("zero variance reduces to the plain sigmoid and its derivative") {
    auto m = gaussian_sigmoid_moments(4.2, 0.0, 6.0, 3.0);
    CHECK(m.e_phi == Catch::Approx(sigmoid(4.2, 6.0, 3.0)).epsilon(1e-15));
    CHECK(m.e_phi_deriv ==
          Catch::Approx(sigmoid_deriv(4.2, 6.0, 3.0)).epsilon(1e-15));
  }
  SECTION("expectation stays in (0,1), increases with mu, flattens with var") {
    double prev = -1.0;
    // below mu ~ -15 the expectation underflows to an exact 0 in double
    for (double mu = -12; mu <= 20; mu += 0.5) {
      auto m = gaussian_sigmoid_moments(mu, 5.0, 6.0, 3.0);
      CHECK(m.e_phi > 0.0);
      CHECK(m.e_phi < 1.0);
      CHECK(m.e_phi > prev);
      prev = m.e_phi;
    }
    // larger variance pulls the expectation toward 1/2
    auto tight = gaussian_sigmoid_moments(9.0, 1.0, 6.0, 3.0);
    auto wide = gaussian_sigmoid_moments(9.0, 100.0, 6.0, 3.0);
    CHECK(std::abs(wide.e_phi - 0.5) < std::abs(tight.e_phi - 0.5));
  }
  SECTION("negative variance input is clamped, not propagated") {
    auto a = gaussian_sigmoid_moments(3.0, -1e-12, 6.0, 3.0);
    auto b = gaussian_sigmoid_moments(3.0, 0.0, 6.0, 3.0);
    CHECK(a.e_phi == b.e_phi);
  }
}

TEST_CASE("product rule for a gain times the sigmoid of a correlated sum") {
  // frozen: mu_a=1650, mu_v=4, var_v=6, cov=35 -> E[a phi(V)]
  CHECK(gaussian_product_mean(1650.0, 4.0, 6.0, 35.0, 6.0, 3.0) ==
        Catch::Approx(446.6642598193633).epsilon(1e-13));
  // uncorrelated case factorizes
  auto m = gaussian_sigmoid_moments(4.0, 6.0, 6.0, 3.0);
  CHECK(gaussian_product_mean(1650.0, 4.0, 6.0, 0.0, 6.0, 3.0) ==
        Catch::Approx(1650.0 * m.e_phi).epsilon(1e-14));
}

namespace {

GaussianBelief oracle_belief() {
  GaussianBelief b;
  b.mean << 1.5, -20.0, 0.8, 11.0, 0.3, -1.5, 2.6, 6.0, 1.4, -9.0, 300.0,
      1700.0, -3600.0, 520.0, 2150.0;
  Vec d(n_aug);
  d << 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 100, 400, 400, 40, 40;
  Mat G(n_aug, n_aug);
  for (int a = 0; a < n_aug; ++a)
    for (int c = 0; c < n_aug; ++c)
      G(a, c) = 0.02 * std::sin(1.3 * a + 0.7 * c + 0.2);
  b.cov = Mat(d.asDiagonal()) + 0.5 * (G + G.transpose()) +
          0.3 * Mat::Identity(n_aug, n_aug);
  return b;
}

}  // namespace

TEST_CASE("one predict/update step reproduces the frozen filter state") {
  GaussianBelief b = oracle_belief();
  AkfConfig cfg;  // tau (0.01, 0.02), q_z 1e-3, q_theta 1e-5, r 1
  akf_predict(b, cfg);

  const double prior_mean[] = {1.45, -43.647536168983351, 0.82750000000000001,
                               -32.245946912816436, 0.29625000000000001,
                               106.49491135854109, 2.6150000000000002,
                               -34.248172191366322, 1.3774999999999999, 35.5,
                               300, 1700, -3600, 520, 2150};
  for (int i = 0; i < n_aug; ++i)
    CHECK(b.mean[i] == Catch::Approx(prior_mean[i]).epsilon(1e-12));

  UpdateInfo ui = akf_update(b, 3.7, cfg);
  CHECK(ui.innovation == Catch::Approx(0.045000000000000373).margin(1e-12));
  CHECK(ui.s == Catch::Approx(4.8823332961567898).epsilon(1e-12));

  const double post_mean[] = {
      1.4620144393862498,  -43.948009860250011, 0.83947307836568885,
      -32.326006207822978, 0.296155697327739,   108.50687861304991,
      2.6152184227001762,  -33.767605175978773, 1.3892955776923193,
      35.205080221156571,  300.00008481809368,  1700.0001191025408,
      -3600.0000580026217, 519.99984127298376,  2149.9999968432517};
  const double post_diag[] = {
      0.95604647495634276, 604.01380178918384, 0.93686011861064244,
      746.90438830671394,  1.3188225008715226, 3338.5131675973912,
      1.2927852005429163,  951.47926544959807, 0.9550043070851123,
      604.08461505407899,  100.31950906515138, 400.29582907014338,
      400.28393677403193,  40.317466877496358, 40.301495284885647};
  for (int i = 0; i < n_aug; ++i) {
    CHECK(b.mean[i] == Catch::Approx(post_mean[i]).epsilon(1e-12));
    CHECK(b.cov(i, i) == Catch::Approx(post_diag[i]).epsilon(1e-11));
  }
  CHECK(b.cov.trace() == Catch::Approx(7231.9729938707405).epsilon(1e-12));
  CHECK(b.cov(0, 2) == Catch::Approx(-0.33348514257849848).epsilon(1e-10));
  CHECK(b.cov(10, 11) == Catch::Approx(0.01356360898337307).epsilon(1e-9));
  CHECK(b.cov(3, 9) == Catch::Approx(-46.847815938838821).epsilon(1e-11));
  CHECK(b.cov(0, 14) == Catch::Approx(-0.0097120799236658159).epsilon(1e-9));

  SECTION("posterior covariance is symmetric with positive diagonal") {
    CHECK((b.cov - b.cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(b.cov.diagonal().minCoeff() > 0.0);
  }
  SECTION("gain vector weights observed potentials most") {
    // recompute K from the prior for the frozen probe values
    GaussianBelief b2 = oracle_belief();
    akf_predict(b2, cfg);
    Vec h = observation_row();
    Vec k = (b2.cov * h) / (h.dot(b2.cov * h) + cfg.r);
    CHECK(k[0] == Catch::Approx(0.26698754191666157).epsilon(1e-12));
    CHECK(k[10] == Catch::Approx(0.00188484652668843).epsilon(1e-10));
  }
}

TEST_CASE("prediction is exact for the linear drive channel") {
  // with all gains' sources at zero influence, v_pu/z_pu follow the
  // deterministic critically damped filter toward tau_e * u
  GaussianBelief b;
  b.mean.setZero();
  b.mean[idx::th_u] = 900.0;
  b.cov = 1e-12 * Mat::Identity(n_aug, n_aug);
  AkfConfig cfg;
  cfg.q_z = 0.0;
  cfg.q_theta = 0.0;
  for (int k = 0; k < 4000; ++k) akf_predict(b, cfg);
  CHECK(b.mean[idx::v_pu] == Catch::Approx(cfg.tau_e * 900.0).epsilon(1e-6));
  CHECK(std::abs(b.mean[idx::z_pu]) < 1e-6);
}

TEST_CASE("covariance repair clips negative eigenvalues and keeps symmetry") {
  Mat P = Mat::Identity(n_aug, n_aug);
  P(0, 0) = -0.5;  // indefinite
  P(3, 7) = P(7, 3) = 0.9;
  nearest_psd(P);
  Eigen::SelfAdjointEigenSolver<Mat> es(P);
  CHECK(es.eigenvalues().minCoeff() >= 0.0);
  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-14);

  // an already-PSD matrix passes through unchanged
  Mat Q = 2.0 * Mat::Identity(n_aug, n_aug);
  Mat Q0 = Q;
  nearest_psd(Q);
  CHECK((Q - Q0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("perfectly initialized filter tracks the default operating point") {
  ModelParams p;  // defaults: oscillatory alpha-band regime
  Trajectory traj = simulate(p, 4.0, 2024);
  std::vector<double> y(traj.obs.data(), traj.obs.data() + traj.obs.size());

  AkfConfig cfg;
  cfg.tau_e = p.tau_e;
  cfg.tau_i = p.tau_i;
  GaussianBelief b;
  b.mean = traj.states.row(0).transpose();
  Vec d(n_aug);
  d << 0.01, 1, 0.01, 1, 0.01, 1, 0.01, 1, 0.01, 1, 1, 1, 1, 1, 1;
  b.cov = d.asDiagonal();

  EstimateTrack tr = run_akf(y, b, cfg);
  REQUIRE_FALSE(tr.truncated);
  REQUIRE(tr.n() == traj.n());

  // parameters must stay near the truth they started at
  const Vec th = p.theta();
  for (int j = 0; j < n_theta; ++j) {
    double err = std::abs(tr.mean(tr.n() - 1, n_state + j) - th[j]);
    CHECK(err / std::abs(th[j]) < 0.1);
  }
  // reconstructed observation correlates highly with the noise-free truth
  const int half = tr.n() / 2;
  double sxy = 0, sxx = 0, syy = 0, sx = 0, sy = 0;
  int cnt = 0;
  for (int k = half; k < tr.n(); ++k) {
    double truth = traj.states(k, idx::v_pe) + traj.states(k, idx::v_pi) +
                   traj.states(k, idx::v_pu);
    double est = tr.yhat[k];
    sx += truth;
    sy += est;
    sxx += truth * truth;
    syy += est * est;
    sxy += truth * est;
    ++cnt;
  }
  double cov = sxy / cnt - (sx / cnt) * (sy / cnt);
  double corr = cov / std::sqrt((sxx / cnt - sx / cnt * (sx / cnt)) *
                                (syy / cnt - sy / cnt * (sy / cnt)));
  CHECK(corr > 0.95);
  // hidden-state recovery: pyramidal potential correlation
  double pxy = 0, pxx = 0, pyy = 0, px = 0, py = 0;
  for (int k = half; k < tr.n(); ++k) {
    double a = traj.states(k, idx::v_pe);
    double e = tr.mean(k, idx::v_pe);
    px += a;
    py += e;
    pxx += a * a;
    pyy += e * e;
    pxy += a * e;
  }
  double pc = (pxy / cnt - px / cnt * (py / cnt)) /
              std::sqrt((pxx / cnt - px / cnt * (px / cnt)) *
                        (pyy / cnt - py / cnt * (py / cnt)));
  CHECK(pc > 0.9);

  SECTION("track bookkeeping: time axis, yhat consistency, positive stds") {
    CHECK(tr.t[0] == Catch::Approx(cfg.dt));
    CHECK(tr.t[tr.n() - 1] == Catch::Approx(tr.n() * cfg.dt));
    CHECK(tr.has_cov());
    CHECK(tr.std_dev.minCoeff() >= 0.0);
    CHECK(tr.innovation.size() == tr.n());
  }
}

TEST_CASE("estimate_obs_variance recovers noise variance from differences") {
  rng r(99);
  std::vector<double> y(20000);
  const double sd = 0.8;
  for (size_t i = 0; i < y.size(); ++i)
    y[i] = 5.0 * std::sin(2 * M_PI * 10.0 * i / 400.0) + sd * r.normal();
  double rhat = estimate_obs_variance(y);
  // differencing the smooth part adds a small positive bias
  CHECK(rhat > 0.8 * sd * sd);
  CHECK(rhat < 1.5 * sd * sd);
  CHECK_THROWS_AS(estimate_obs_variance({1.0, 2.0}), sample_size_error);
}

TEST_CASE("a non-finite observation truncates the run instead of throwing") {
  ModelParams p;
  Trajectory traj = simulate(p, 1.0, 7);
  std::vector<double> y(traj.obs.data(), traj.obs.data() + traj.obs.size());
  y[57] = std::numeric_limits<double>::quiet_NaN();

  AkfConfig cfg;
  GaussianBelief b = make_belief(p, cfg);
  EstimateTrack tr = run_akf(y, b, cfg);
  CHECK(tr.truncated);
  CHECK(tr.fail_step == 57);
  CHECK(tr.n() == 57);
  CHECK(tr.mean.allFinite());
}
