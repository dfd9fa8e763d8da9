#include <gtest/gtest.h>

#include <numeric>

#include "lorafed/experiment.hpp"
#include "lorafed/federation.hpp"
#include "oracles.hpp"

using namespace lorafed;

namespace {

ExperimentConfig small_config(std::size_t clients, std::size_t rounds = 2) {
  ExperimentConfig c;
  c.samples = 600;
  c.clients = clients;
  c.rounds = rounds;
  c.local_epochs = 1;
  c.dirichlet_alpha = 1.0;
  c.seed = 11;
  return c;
}

ClientUpdate update_with(std::size_t id, std::size_t n, double score, AdapterSet params = {}) {
  ClientUpdate u;
  u.client_id = id;
  u.n_k = n;
  u.val_score = score;
  u.params = std::move(params);
  return u;
}

AdapterSet scalar_set(double b) {
  RandomSource rs(1, 1);
  AdapterSet s = init_adapter_set({{"l", 1, 1, Modality::kFusion}}, 1, 1.0, 0, rs);
  s.at("l").A[0] = 1.0;
  s.at("l").B[0] = b;
  return s;
}

}  // namespace

TEST(Weights, SingleClientIsOne) {
  for (bool q : {false, true}) {
    const auto w = compute_weights({update_with(0, 17, 0.3)}, q);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0], 1.0);
  }
}

TEST(Weights, SizeProportional) {
  const auto w = compute_weights({update_with(0, 100, 0.9), update_with(1, 300, 0.1)}, false);
  EXPECT_DOUBLE_EQ(w[0], 0.25);
  EXPECT_DOUBLE_EQ(w[1], 0.75);
}

TEST(Weights, QualityFactor) {
  // Equal sizes, scores 0.2 and 0.5: factors (0.21 / 0.36) and (0.51 / 0.36).
  const auto w = compute_weights({update_with(0, 50, 0.2), update_with(1, 50, 0.5)}, true);
  EXPECT_NEAR(w[0], 0.21 / 0.72, 1e-15);
  EXPECT_NEAR(w[1], 0.51 / 0.72, 1e-15);
  // A zero score still receives weight through epsilon.
  const auto z = compute_weights({update_with(0, 50, 0.0), update_with(1, 50, 1.0)}, true);
  EXPECT_GT(z[0], 0.0);
  EXPECT_NEAR(z[0], 0.01 / 1.02, 1e-15);
}

TEST(Weights, AlwaysOnTheSimplex) {
  RandomSource rs(5, StreamRole::kTest);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<ClientUpdate> ups;
    const std::size_t k = 1 + rs.uniform_index(16);
    for (std::size_t i = 0; i < k; ++i) ups.push_back(update_with(i, 1 + rs.uniform_index(5000), rs.uniform()));
    const auto w = compute_weights(ups, trial % 2 == 0);
    double sum = 0.0;
    for (double x : w) {
      ASSERT_GE(x, 0.0);
      sum += x;
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Weights, ScaleInvariantInSizes) {
  std::vector<ClientUpdate> a = {update_with(0, 10, 0.4), update_with(1, 30, 0.7), update_with(2, 25, 0.1)};
  auto b = a;
  for (auto& u : b) u.n_k *= 7;
  const auto wa = compute_weights(a, true), wb = compute_weights(b, true);
  for (std::size_t i = 0; i < wa.size(); ++i) EXPECT_NEAR(wa[i], wb[i], 1e-15);
}

TEST(Weights, ZeroSizeRejected) {
  EXPECT_THROW(compute_weights({update_with(0, 0, 0.5)}, false), Error);
  EXPECT_THROW(compute_weights({}, false), Error);
}

TEST(Aggregate, ScalarExample) {
  const auto g = aggregate({update_with(0, 1, 0, scalar_set(2.0)), update_with(1, 3, 0, scalar_set(6.0))}, {0.25, 0.75});
  EXPECT_EQ(g.at("l").B[0], 5.0);
}

TEST(Aggregate, SingleClientIsBitwiseIdentity) {
  RandomSource rs(3, 3);
  AdapterSet p = ToyModel::create({}, 0).init_adapters(16, 32, rs);
  oracle::randomize_adapters(p, rs, 0.7);
  EXPECT_TRUE(bitwise_equal(aggregate({update_with(0, 5, 0, p)}, {1.0}), p));
}

TEST(Aggregate, IdenticalUpdatesAreAFixedPoint) {
  RandomSource rs(4, 4);
  AdapterSet p = ToyModel::create({}, 0).init_adapters(16, 32, rs);
  oracle::randomize_adapters(p, rs, 0.7);
  std::vector<ClientUpdate> ups;
  for (std::size_t k = 0; k < 5; ++k) ups.push_back(update_with(k, 10 + k, 0, p));
  const auto w = compute_weights(ups, false);
  EXPECT_LE(max_abs_diff(aggregate(ups, w), p), 1e-15);
}

TEST(Aggregate, RejectsIncongruentOrMismatchedInputs) {
  RandomSource rs(5, 5);
  const ToyModel m = ToyModel::create({}, 0);
  const AdapterSet a = m.init_adapters(16, 32, rs), b = m.init_adapters(8, 32, rs);
  EXPECT_THROW(aggregate({update_with(0, 1, 0, a), update_with(1, 1, 0, b)}, {0.5, 0.5}), Error);
  EXPECT_THROW(aggregate({update_with(0, 1, 0, a)}, {0.5, 0.5}), Error);
}

TEST(ServerOpt, MomentumRecursion) {
  ServerOptState st;
  const AdapterSet prev = scalar_set(1.0), agg = scalar_set(0.5);
  const AdapterSet g1 = server_opt_step(prev, agg, st, 1.0, 0.9);
  EXPECT_DOUBLE_EQ(g1.at("l").B[0], 0.5);
  // m = 0.9 * 0.5 + 0.5 = 0.95.
  const AdapterSet g2 = server_opt_step(prev, agg, st, 1.0, 0.9);
  EXPECT_NEAR(g2.at("l").B[0], 1.0 - 0.95, 1e-15);
}

TEST(ServerOpt, UnitLrNoMomentumReturnsAggregate) {
  RandomSource rs(6, 6);
  const ToyModel m = ToyModel::create({}, 0);
  AdapterSet prev = m.init_adapters(16, 32, rs), agg = m.init_adapters(16, 32, rs);
  oracle::randomize_adapters(prev, rs, 1.0);
  oracle::randomize_adapters(agg, rs, 1.0);
  ServerOptState st;
  EXPECT_LE(max_abs_diff(server_opt_step(prev, agg, st, 1.0, 0.0), agg), 1e-15);
}

TEST(Federation, ZeroRoundsReturnsInitialAdapters) {
  const auto prep = prepare_experiment(small_config(3, 0));
  const auto res = run_federation(prep.model, prep.clients, to_federation_config(prep.config));
  EXPECT_TRUE(res.history.empty());
  RandomSource rs(prep.config.seed, StreamRole::kAdapterInit);
  EXPECT_TRUE(bitwise_equal(res.final_global(), prep.model.init_adapters(16, 32, rs)));
}

TEST(Federation, ZeroLocalEpochsKeepTheSnapshot) {
  auto cfg = small_config(3, 3);
  cfg.local_epochs = 0;
  for (auto agg : {Aggregator::kFedAvg, Aggregator::kFusion, Aggregator::kFedProx}) {
    cfg.aggregator = agg;
    const auto prep = prepare_experiment(cfg);
    const auto res = run_federation(prep.model, prep.clients, to_federation_config(prep.config));
    EXPECT_LE(max_abs_diff(res.final_global(), res.initial), 1e-15) << to_string(agg);
  }
}

TEST(Federation, FedProxWithZeroMuIsFedAvg) {
  auto cfg = small_config(3);
  cfg.aggregator = Aggregator::kFedAvg;
  const auto prep = prepare_experiment(cfg);
  auto fc = to_federation_config(cfg);
  const auto avg = run_federation(prep.model, prep.clients, fc);
  fc.aggregator = Aggregator::kFedProx;
  fc.prox_mu = 0.0;
  const auto prox = run_federation(prep.model, prep.clients, fc);
  EXPECT_TRUE(bitwise_equal(avg.final_global(), prox.final_global()));
}

TEST(Federation, LargeProximalTermPinsClientsToTheSnapshot) {
  // Plain SGD so the penalty is not normalized away; lr * mu = 1 resets each
  // step to the snapshot minus one gradient step.
  auto cfg = small_config(3, 1);
  cfg.local_epochs = 4;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  cfg.cosine_schedule = false;
  const auto prep = prepare_experiment(cfg);
  auto fc = to_federation_config(cfg);
  auto drift = [&](Aggregator agg, double mu) {
    fc.aggregator = agg;
    fc.prox_mu = mu;
    const auto r = run_federation(prep.model, prep.clients, fc);
    return squared_distance(r.final_global(), r.initial);
  };
  const double free_drift = drift(Aggregator::kFedAvg, 0.0);
  const double mild = drift(Aggregator::kFedProx, 2.0);
  const double pinned = drift(Aggregator::kFedProx, 1.0 / cfg.lr);
  EXPECT_GT(free_drift, 0.0);
  EXPECT_LT(mild, free_drift);
  EXPECT_LT(pinned, mild);
  EXPECT_LT(pinned, 0.1 * free_drift);
}

TEST(Federation, FedOptWithUnitLrAndNoMomentumIsFedAvg) {
  auto cfg = small_config(3);
  cfg.aggregator = Aggregator::kFedAvg;
  const auto prep = prepare_experiment(cfg);
  auto fc = to_federation_config(cfg);
  const auto avg = run_federation(prep.model, prep.clients, fc);
  fc.aggregator = Aggregator::kFedOpt;
  fc.server_lr = 1.0;
  fc.server_momentum = 0.0;
  const auto opt = run_federation(prep.model, prep.clients, fc);
  EXPECT_LE(max_abs_diff(avg.final_global(), opt.final_global()), 1e-12);
}

TEST(Federation, SingleClientMatchesCentralizedTraining) {
  for (auto agg : {Aggregator::kFedAvg, Aggregator::kFusion}) {
    auto cfg = small_config(1, 3);
    cfg.local_epochs = 2;
    cfg.aggregator = agg;
    const auto prep = prepare_experiment(cfg);
    const auto fc = to_federation_config(cfg);
    const auto res = run_federation(prep.model, prep.clients, fc);
    const AdapterSet central = oracle::centralized_training(prep.model, prep.clients[0].train, fc);
    EXPECT_TRUE(bitwise_equal(res.final_global(), central)) << to_string(agg);
  }
}

TEST(Federation, WorkerCountDoesNotChangeResults) {
  const auto prep = prepare_experiment(small_config(5));
  const auto one = run_federation(prep.model, prep.clients, to_federation_config(prep.config, 1));
  const auto four = run_federation(prep.model, prep.clients, to_federation_config(prep.config, 4));
  ASSERT_EQ(one.history.size(), four.history.size());
  for (std::size_t t = 0; t < one.history.size(); ++t) {
    EXPECT_TRUE(bitwise_equal(one.history[t].global, four.history[t].global));
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(one.history[t].clients[k].weight, four.history[t].clients[k].weight);
  }
}

TEST(Federation, RecordsAreConsistent) {
  const auto prep = prepare_experiment(small_config(4, 3));
  const auto res = run_federation(prep.model, prep.clients, to_federation_config(prep.config));
  ASSERT_EQ(res.history.size(), 3u);
  const std::size_t payload = payload_bytes(res.initial);
  for (const auto& r : res.history) {
    ASSERT_EQ(r.clients.size(), 4u);
    double wsum = 0.0;
    std::size_t up = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(r.clients[k].client_id, k);
      EXPECT_EQ(r.clients[k].n_k, prep.clients[k].train.size());
      EXPECT_EQ(r.clients[k].bytes_up, payload);
      EXPECT_EQ(r.clients[k].bytes_down, payload);
      EXPECT_EQ(r.clients[k].split_bytes, 0u);
      wsum += r.clients[k].weight;
      up += r.clients[k].bytes_up;
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    EXPECT_EQ(r.server_bytes_up, up);
    EXPECT_EQ(r.server_bytes_down, 4 * payload);
  }
}

TEST(Federation, SplitModeCountsCutTraffic) {
  auto cfg = small_config(2, 1);
  cfg.split_enabled = true;
  cfg.compress_bits = 8;
  const auto prep = prepare_experiment(cfg);
  const auto res = run_federation(prep.model, prep.clients, to_federation_config(cfg));
  for (const auto& c : res.history[0].clients) {
    // Each step sends two n x 64 tensors each way at one byte per value.
    EXPECT_EQ(c.split_bytes, 4 * 64 * c.n_k);
  }
}

TEST(Federation, ClientFailureNamesTheClient) {
  const auto prep = prepare_experiment(small_config(3));
  auto clients = prep.clients;
  clients[1].train = Batch{};
  try {
    run_federation(prep.model, clients, to_federation_config(prep.config, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kClientFailure);
    EXPECT_NE(std::string(e.what()).find("client 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("round 1"), std::string::npos);
  }
}

TEST(Federation, ShardCountMustMatchConfig) {
  const auto prep = prepare_experiment(small_config(3));
  auto fc = to_federation_config(prep.config);
  fc.clients = 4;
  EXPECT_THROW(run_federation(prep.model, prep.clients, fc), Error);
}
