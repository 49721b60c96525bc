#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "nmtrack/datagen.hpp"
#include "nmtrack/io.hpp"
#include "nmtrack/train.hpp"

using namespace nmtrack;

namespace {

GeneratedCorpus& tiny_corpus() {
  static GeneratedCorpus c = [] {
    SweepConfig cfg;
    cfg.tau_grid = {{0.010, 0.020}, {0.015, 0.030}};
    cfg.record_len = 10.0;
    cfg.inputs_per_pair = 4;
    cfg.seed = 42;
    return generate_dataset(cfg);
  }();
  return c;
}

bool same_weights(Network<float>& a, Network<float>& b) {
  std::vector<std::pair<const float*, std::int64_t>> ba, bb;
  detail::for_each_block(a, [&](const char*, auto& m) {
    ba.emplace_back(m.data(), m.size());
  });
  detail::for_each_block(b, [&](const char*, auto& m) {
    bb.emplace_back(m.data(), m.size());
  });
  bool ok = ba.size() == bb.size();
  for (size_t i = 0; ok && i < ba.size(); ++i)
    ok = ba[i].second == bb[i].second &&
         std::memcmp(ba[i].first, bb[i].first,
                     sizeof(float) * ba[i].second) == 0;
  return ok;
}

}  // namespace

TEST_CASE("gradient clipping helpers compute and rescale the global norm") {
  Network<float> g;
  g.setup(1, 2, 2, 3);
  detail::for_each_block(g, [&](const char*, auto& m) { m.setConstant(0.5f); });
  std::int64_t n = 0;
  detail::for_each_block(g, [&](const char*, auto& m) { n += m.size(); });
  const double norm = detail::grad_norm(g);
  CHECK(norm == Catch::Approx(0.5 * std::sqrt(double(n))).epsilon(1e-6));
  detail::scale_grads(g, 0.25f);
  CHECK(detail::grad_norm(g) == Catch::Approx(norm * 0.25).epsilon(1e-6));
}

TEST_CASE("first optimizer step moves each weight by about the learning rate") {
  // With zero moment history the first update is -lr * sign(gradient) up to
  // the epsilon regularizer, independent of the gradient magnitude.
  Network<float> net, grad;
  net.setup(1, 2, 2, 3);
  detail::zero_like(grad, net);
  Network<float> before = net;
  detail::for_each_block(grad, [&](const char*, auto& m) {
    m.setConstant(2.0f);
  });
  grad.fc.b.setConstant(-3.0f);

  TrainConfig cfg;
  detail::AdamState st;
  detail::zero_like(st.m, net);
  detail::zero_like(st.v, net);
  detail::adam_step(net, grad, st, cfg, 1e-3);
  CHECK(st.step == 1);

  const float dW = net.l1.fwd.W(0, 0) - before.l1.fwd.W(0, 0);
  CHECK(dW == Catch::Approx(-1e-3).epsilon(1e-3));
  const float db = net.fc.b(2, 0) - before.fc.b(2, 0);
  CHECK(db == Catch::Approx(1e-3).epsilon(1e-3));
}

TEST_CASE("validation loss is a per-window mean independent of batch size") {
  GeneratedCorpus& c = tiny_corpus();
  REQUIRE(c.val.size() >= 5);
  Network<float> net;
  net.setup(1, 8, 6, n_targets);
  init_weights(net, 4);
  LossConfig lcfg;
  LossTerms a = evaluate_loss(net, c.val, lcfg, 64);
  LossTerms b = evaluate_loss(net, c.val, lcfg, 3);
  CHECK(a.term1 == Catch::Approx(b.term1).epsilon(1e-11));
  CHECK(a.term2 == Catch::Approx(b.term2).epsilon(1e-11));
  CHECK(a.term3 == Catch::Approx(b.term3).epsilon(1e-11));
}

TEST_CASE("short training run improves validation loss deterministically") {
  GeneratedCorpus& c = tiny_corpus();
  REQUIRE(c.train.size() >= 20);

  Network<float> net;
  net.setup(1, 12, 8, n_targets);
  init_weights(net, 7);

  TrainConfig cfg;
  cfg.batch = 16;
  cfg.max_epochs = 4;
  cfg.patience = 10;
  cfg.lr = 3e-3;
  cfg.seed = 9;

  TrainResult r1 = train(net, c.train, c.val, cfg, nullptr);
  REQUIRE(!r1.aborted);
  REQUIRE(r1.log.size() == 4);
  CHECK(r1.best_epoch >= 0);
  CHECK(r1.best_val <= r1.log.front().val_loss);
  CHECK(r1.best_val < std::numeric_limits<double>::infinity());
  for (const EpochLog& e : r1.log) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.val_loss));
    CHECK(e.term1 >= 0.0);
    CHECK(e.term2 >= 0.0);
    CHECK(e.term3 >= 0.0);
    CHECK(e.lr > 0.0);
  }
  // Learning actually happens: the final train loss beats the first epoch.
  CHECK(r1.log.back().train_loss < r1.log.front().train_loss);

  TrainResult r2 = train(net, c.train, c.val, cfg, nullptr);
  REQUIRE(r2.log.size() == r1.log.size());
  for (size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].val_loss == r2.log[i].val_loss);
  }
  CHECK(same_weights(r1.best, r2.best));

  TrainConfig other = cfg;
  other.seed = 10;
  TrainResult r3 = train(net, c.train, c.val, other, nullptr);
  CHECK(!same_weights(r1.best, r3.best));
}

TEST_CASE("wall-clock budget stops before an epoch that would overshoot") {
  GeneratedCorpus& c = tiny_corpus();

  Network<float> net;
  net.setup(1, 12, 8, n_targets);
  init_weights(net, 7);

  TrainConfig cfg;
  cfg.batch = 16;
  cfg.max_epochs = 3;
  cfg.lr = 3e-3;
  cfg.seed = 9;

  // A vanishing budget refuses even the first epoch: the caller gets the
  // initial weights back rather than a partial, unvalidated update.
  TrainConfig capped = cfg;
  capped.max_seconds = 1e-9;
  TrainResult r0 = train(net, c.train, c.val, capped, nullptr);
  CHECK(!r0.aborted);
  CHECK(r0.log.empty());
  CHECK(same_weights(r0.best, net));

  // A generous budget changes nothing relative to the uncapped run.
  TrainConfig roomy = cfg;
  roomy.max_seconds = 1e9;
  TrainResult ra = train(net, c.train, c.val, cfg, nullptr);
  TrainResult rb = train(net, c.train, c.val, roomy, nullptr);
  REQUIRE(ra.log.size() == rb.log.size());
  for (size_t i = 0; i < ra.log.size(); ++i)
    CHECK(ra.log[i].train_loss == rb.log[i].train_loss);
  CHECK(same_weights(ra.best, rb.best));
}

TEST_CASE("non-finite data aborts training instead of corrupting weights") {
  GeneratedCorpus& c = tiny_corpus();
  Dataset poisoned = c.train;
  poisoned.windows[2].obs[5] = std::numeric_limits<double>::quiet_NaN();

  Network<float> net;
  net.setup(1, 8, 6, n_targets);
  init_weights(net, 11);

  TrainConfig cfg;
  cfg.batch = 16;
  cfg.max_epochs = 2;
  TrainResult r = train(net, poisoned, c.val, cfg, nullptr);
  CHECK(r.aborted);
  // The snapshot still holds finite weights.
  bool finite = true;
  detail::for_each_block(r.best, [&](const char*, auto& m) {
    finite = finite && m.allFinite();
  });
  CHECK(finite);
}

TEST_CASE("training log round trips through the csv writer") {
  std::vector<EpochLog> log(2);
  log[0] = {0, 1.5, 1.25, 1.0, 0.4, 0.1, 1e-3, 2.5};
  log[1] = {1, 1.2, 1.05, 0.8, 0.3, 0.1, 1e-3, 2.4};
  const std::string path =
      (std::filesystem::temp_directory_path() / "nmtrack_train_log.csv")
          .string();
  write_training_log(path, log);
  auto [names, data] = read_csv(path);
  REQUIRE(names.size() == 8);
  CHECK(names[0] == "epoch");
  CHECK(names[2] == "val_loss");
  REQUIRE(data.rows() == 2);
  CHECK(data(0, 1) == 1.5);
  CHECK(data(1, 2) == 1.05);
  CHECK(data(1, 6) == 1e-3);
  std::filesystem::remove(path);
}
