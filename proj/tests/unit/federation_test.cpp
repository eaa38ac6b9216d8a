#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <map>
#include <numeric>

#include "fedsim/federation.hpp"
#include "test_util.hpp"

using namespace fedsim;
using fedsim::testing::bit_equal;

namespace {

ParameterVector vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return ParameterVector({{"w", {n}}}, std::move(v));
}

std::vector<ClientDataset> random_clients(Rng& rng, std::vector<std::size_t> sizes, std::size_t dim,
                                          std::size_t classes) {
  std::vector<ClientDataset> out;
  for (std::size_t k = 0; k < sizes.size(); ++k)
    out.push_back({"c" + std::to_string(k), fedsim::testing::random_batch(rng, sizes[k], dim, classes)});
  return out;
}

// Independent weighted mean: accumulate sum n_k w_k in long double, divide once.
std::vector<double> oracle_mean(const std::vector<ClientUpdate>& ups) {
  std::vector<long double> acc(ups.front().params.size(), 0.0L);
  long double mu = 0.0L;
  for (const auto& u : ups) {
    mu += u.n;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<long double>(u.n) * u.params[i];
  }
  std::vector<double> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<double>(acc[i] / mu);
  return out;
}

double chi_square_uniform(const std::map<std::vector<std::size_t>, int>& counts, std::size_t cells, int trials) {
  const double expected = static_cast<double>(trials) / static_cast<double>(cells);
  double chi2 = 0.0;
  for (const auto& [_, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  chi2 += static_cast<double>(cells - counts.size()) * expected;  // unseen subsets
  return chi2;
}

}  // namespace

// ---------------------------------------------------------------------------
// selection

TEST(SelectUniform, FullParticipation) {
  Rng rng(1);
  const auto s = select_clients_uniform(9, 1.0, rng);
  EXPECT_EQ(s, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(SelectUniform, CohortSizeFiftySevenClients) {
  Rng rng(2);
  EXPECT_EQ(select_clients_uniform(57, 0.1, rng).size(), 6u);
}

TEST(SelectUniform, DeterministicSortedDistinct) {
  Rng a(77), b(77);
  const auto sa = select_clients_uniform(100, 0.3, a);
  EXPECT_EQ(sa, select_clients_uniform(100, 0.3, b));
  EXPECT_TRUE(std::is_sorted(sa.begin(), sa.end()));
  EXPECT_EQ(std::adjacent_find(sa.begin(), sa.end()), sa.end());
}

TEST(SelectUniform, SubsetsAreUniform) {
  Rng rng(5);
  std::map<std::vector<std::size_t>, int> counts;
  for (int i = 0; i < 20000; ++i) ++counts[select_clients_uniform(5, 0.4, rng)];
  EXPECT_LT(chi_square_uniform(counts, 10, 20000), 21.666);  // df 9, p = 0.01
}

TEST(SelectProportional, EqualSizesMatchUniform) {
  Rng rng(6);
  const std::vector<std::size_t> sizes(5, 17);
  std::map<std::vector<std::size_t>, int> counts;
  for (int i = 0; i < 20000; ++i) ++counts[select_clients_proportional(sizes, 0.4, rng)];
  EXPECT_LT(chi_square_uniform(counts, 10, 20000), 21.666);
}

TEST(SelectProportional, HeavyClientDominates) {
  Rng rng(7);
  const std::vector<std::size_t> sizes{1, 1000000};
  int heavy = 0;
  for (int i = 0; i < 10000; ++i) heavy += select_clients_proportional(sizes, 0.5, rng) == std::vector<std::size_t>{1};
  EXPECT_GT(heavy / 10000.0, 0.999);
}

TEST(SelectProportional, FullParticipation) {
  Rng rng(8);
  const std::vector<std::size_t> sizes{3, 1, 400, 2};
  EXPECT_EQ(select_clients_proportional(sizes, 1.0, rng), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_THROW(select_clients_proportional(std::vector<std::size_t>{1, 0}, 0.5, rng), ValidationError);
}

// ---------------------------------------------------------------------------
// aggregation

TEST(FedAvg, HandEvaluated) {
  std::vector<ClientUpdate> ups{{0, vec({0.0}), 1}, {1, vec({4.0}), 3}};
  EXPECT_EQ(fedavg_aggregate(ups)[0], 3.0);
}

TEST(FedAvg, IdenticalParamsFixedPoint) {
  const auto p = vec({0.1, -7.3, 1e-3});
  std::vector<ClientUpdate> ups{{0, p, 3}, {4, p, 11}, {2, p, 7}};
  EXPECT_TRUE(bit_equal(fedavg_aggregate(ups), p));
}

TEST(FedAvg, SingleUpdate) {
  std::vector<ClientUpdate> ups{{3, vec({1.25, 2.5}), 9}};
  EXPECT_TRUE(bit_equal(fedavg_aggregate(ups), ups[0].params));
}

TEST(FedAvg, Errors) {
  EXPECT_THROW(fedavg_aggregate({}), ValidationError);
  std::vector<ClientUpdate> mismatch{{0, vec({1.0}), 1}, {1, vec({1.0, 2.0}), 1}};
  EXPECT_THROW(fedavg_aggregate(mismatch), ValidationError);
  std::vector<ClientUpdate> dup{{0, vec({1.0}), 1}, {0, vec({2.0}), 1}};
  EXPECT_THROW(fedavg_aggregate(dup), ValidationError);
}

TEST(FedAvg, OracleConvexityScaleAndPermutation) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(8), dim = 1 + rng.below(12);
    std::vector<ClientUpdate> ups;
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> v(dim);
      for (auto& x : v) x = 10.0 * rng.normal();
      ups.push_back({i * 3, vec(v), 1 + rng.below(500)});
    }
    const auto agg = fedavg_aggregate(ups);
    const auto ref = oracle_mean(ups);
    for (std::size_t i = 0; i < dim; ++i) {
      EXPECT_NEAR(agg[i], ref[i], 1e-12 * std::max(1.0, std::abs(ref[i])));
      double lo = ups[0].params[i], hi = lo;
      for (const auto& u : ups) lo = std::min(lo, u.params[i]), hi = std::max(hi, u.params[i]);
      EXPECT_GE(agg[i], lo);
      EXPECT_LE(agg[i], hi);
    }
    auto scaled = ups;
    for (auto& u : scaled) u.n *= 7;
    const auto agg_scaled = fedavg_aggregate(scaled);
    for (std::size_t i = 0; i < dim; ++i) EXPECT_NEAR(agg_scaled[i], agg[i], 1e-12 * std::max(1.0, std::abs(agg[i])));

    auto permuted = ups;
    rng.shuffle(std::span<ClientUpdate>(permuted));
    EXPECT_TRUE(bit_equal(fedavg_aggregate(permuted), agg));
  }
}

TEST(StaleAggregate, SingleClientFirstRound) {
  const auto init = vec({0.0, 0.0});
  auto cache = make_stale_cache(init, std::vector<std::size_t>{5});
  std::vector<ClientUpdate> fresh{{0, vec({2.0, -1.0}), 5}};
  EXPECT_TRUE(bit_equal(stale_aggregate(cache, fresh).global, fresh[0].params));
}

TEST(StaleAggregate, NoFreshUpdatesIsIdempotent) {
  auto cache = make_stale_cache(vec({0.0}), std::vector<std::size_t>{2, 2, 2});
  std::vector<ClientUpdate> fresh{{1, vec({9.0}), 2}};
  auto first = stale_aggregate(cache, fresh);
  auto second = stale_aggregate(first.cache, {});
  EXPECT_TRUE(bit_equal(first.global, second.global));
}

TEST(StaleAggregate, HandEvaluatedMean) {
  auto cache = make_stale_cache(vec({0.0}), std::vector<std::size_t>{4, 4, 4});
  std::vector<ClientUpdate> fresh{{1, vec({9.0}), 4}};
  EXPECT_EQ(stale_aggregate(cache, fresh).global[0], 3.0);
}

TEST(StaleAggregate, UnknownClientThrows) {
  auto cache = make_stale_cache(vec({0.0}), std::vector<std::size_t>{1, 1});
  std::vector<ClientUpdate> fresh{{2, vec({1.0}), 1}};
  EXPECT_THROW(stale_aggregate(cache, fresh), ValidationError);
}

// ---------------------------------------------------------------------------
// local training

TEST(LocalUpdate, ZeroEpochsReturnsGlobal) {
  Rng rng(1);
  const ModelSpec spec{ModelKind::linear, 3, 0, 2};
  const auto clients = random_clients(rng, {13}, 3, 2);
  const auto g = init_params(spec, 4);
  const auto u = local_update(spec, g, clients[0], 0, 0, 4, {}, 99);
  EXPECT_TRUE(bit_equal(u.params, g));
  EXPECT_EQ(u.n, 13u);
}

TEST(LocalUpdate, EmptyClientThrows) {
  const ModelSpec spec{ModelKind::linear, 3, 0, 2};
  ClientDataset empty{"e", {Matrix(0, 3), Matrix(0, 2)}};
  EXPECT_THROW(local_update(spec, init_params(spec, 1), empty, 0, 1, 4, {}, 1), ValidationError);
}

TEST(LocalUpdate, EqualsCentralizedTrainingOnSameData) {
  Rng rng(2);
  const ModelSpec spec{ModelKind::mlp, 5, 6, 3};
  const auto clients = random_clients(rng, {37}, 5, 3);
  const auto g = init_params(spec, 8);
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    OptimizerConfig opt;
    opt.kind = kind;
    opt.lr = 0.05;
    for (std::size_t e : {1u, 3u})
      for (std::size_t b : {1u, 8u, 64u}) {
        const auto u = local_update(spec, g, clients[0], 0, e, b, opt, 1234);
        ParameterVector central = g;
        EpochTrainer trainer(spec, clients[0].examples, b, opt, 1234, g.size());
        for (std::size_t i = 0; i < e; ++i) trainer.run_epoch(central);
        EXPECT_TRUE(bit_equal(u.params, central)) << "E=" << e << " B=" << b;
      }
  }
}

TEST(LocalUpdate, FullBatchSgdIsOneGradientStep) {
  Rng rng(3);
  const ModelSpec spec{ModelKind::mlp, 4, 5, 3};
  const auto clients = random_clients(rng, {21}, 4, 3);
  const auto g = init_params(spec, 6);
  OptimizerConfig opt;
  opt.kind = OptimizerKind::sgd;
  opt.lr = 0.3;
  const auto u = local_update(spec, g, clients[0], 0, 1, 50, opt, 5);
  const auto grad = loss_and_grad(spec, g, clients[0].examples).grad;
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(u.params[i], g[i] - 0.3 * grad[i], 1e-12);
}

// ---------------------------------------------------------------------------
// round loop

namespace {

struct Fixture {
  ModelSpec spec{ModelKind::linear, 4, 0, 3};
  std::vector<ClientDataset> clients;
  EvalSet eval;

  explicit Fixture(std::vector<std::size_t> sizes, std::uint64_t seed = 10) {
    Rng rng(seed);
    clients = random_clients(rng, std::move(sizes), 4, 3);
    eval = EvalSet(fedsim::testing::random_batch(rng, 40, 4, 3));
  }
};

}  // namespace

TEST(RunFederation, SingleClientOneRoundIsOneCentralEpoch) {
  Fixture f({50});
  FederationConfig cfg;
  cfg.C = 1.0;
  cfg.E = 1;
  cfg.B = 8;
  cfg.rounds = 1;
  cfg.seed = 3;
  cfg.optimizer.kind = OptimizerKind::sgd;
  cfg.optimizer.lr = 0.1;
  const auto res = run_federation(cfg, f.clients, f.eval, f.spec);

  ParameterVector central = init_params(f.spec, derive_seed(cfg.seed, Stream::init));
  EpochTrainer trainer(f.spec, f.clients[0].examples, cfg.B, cfg.optimizer, client_seed(cfg.seed, 1, 0),
                       central.size());
  trainer.run_epoch(central);
  EXPECT_TRUE(bit_equal(res.final_params, central));
}

TEST(RunFederation, FullBatchEquivalentToPooledGradientDescent) {
  Fixture f({7, 19, 3, 30, 11});
  FederationConfig cfg;
  cfg.C = 1.0;
  cfg.E = 1;
  cfg.B = 1000;
  cfg.rounds = 10;
  cfg.optimizer.kind = OptimizerKind::sgd;
  cfg.optimizer.lr = 0.5;
  std::vector<ParameterVector> globals;
  run_federation(cfg, f.clients, f.eval, f.spec,
                 [&](const RoundRecord&, const ParameterVector& g) { globals.push_back(g); });

  LabeledBatch pooled;
  for (const auto& c : f.clients)
    for (std::size_t r = 0; r < c.n(); ++r) {
      pooled.inputs.append_row(c.examples.inputs.row(r));
      pooled.targets.append_row(c.examples.targets.row(r));
    }
  ParameterVector w = init_params(f.spec, derive_seed(cfg.seed, Stream::init));
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const auto grad = loss_and_grad(f.spec, w, pooled).grad;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.optimizer.lr * grad[i];
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(globals[t][i], w[i], 1e-10) << "round " << t + 1;
  }
}

TEST(RunFederation, DeterministicAndThreadIndependent) {
  Fixture f({12, 40, 7, 25, 33, 9, 18, 5});
  FederationConfig cfg;
  cfg.C = 0.5;
  cfg.E = 2;
  cfg.B = 8;
  cfg.rounds = 6;
  cfg.optimizer.lr = 0.01;
  cfg.threads = 1;
  const auto a = run_federation(cfg, f.clients, f.eval, f.spec);
  const auto b = run_federation(cfg, f.clients, f.eval, f.spec);
  cfg.threads = 4;
  const auto c = run_federation(cfg, f.clients, f.eval, f.spec);
  EXPECT_EQ(a.rounds, b.rounds);
  EXPECT_EQ(a.rounds, c.rounds);
  EXPECT_TRUE(bit_equal(a.final_params, c.final_params));
}

TEST(RunFederation, RoundRecordInvariants) {
  Fixture f({12, 40, 7, 25, 33, 9, 18, 5, 60, 2});
  for (SamplerKind sampler : {SamplerKind::uniform, SamplerKind::proportional})
    for (AggregatorKind agg : {AggregatorKind::fedavg, AggregatorKind::stale}) {
      FederationConfig cfg;
      cfg.C = 0.3;
      cfg.rounds = 5;
      cfg.B = 16;
      cfg.sampler = sampler;
      cfg.aggregator = agg;
      const auto res = run_federation(cfg, f.clients, f.eval, f.spec);
      ASSERT_EQ(res.rounds.size(), 5u);
      for (const auto& r : res.rounds) {
        EXPECT_EQ(r.selected.size(), 3u);
        EXPECT_TRUE(std::is_sorted(r.selected.begin(), r.selected.end()));
        std::size_t mu = 0;
        for (auto k : r.selected) mu += f.clients[k].n();
        EXPECT_EQ(r.mu_t, mu);
        EXPECT_TRUE(std::isfinite(r.eval_metrics.at("pr_auc")));
        EXPECT_EQ(r.wall_time, 0.0);
      }
    }
}

TEST(RunFederation, StaleWithFullParticipationMatchesFedAvg) {
  Fixture f({12, 40, 7});
  FederationConfig cfg;
  cfg.C = 1.0;
  cfg.rounds = 3;
  cfg.B = 8;
  const auto a = run_federation(cfg, f.clients, f.eval, f.spec);
  cfg.aggregator = AggregatorKind::stale;
  const auto b = run_federation(cfg, f.clients, f.eval, f.spec);
  EXPECT_TRUE(bit_equal(a.final_params, b.final_params));
}

TEST(RunFederation, EnvironmentThreadCap) {
  ::setenv("FSIM_THREADS", "3", 1);
  EXPECT_EQ(resolve_threads(0), 3u);
  EXPECT_EQ(resolve_threads(2), 2u);
  EXPECT_EQ(resolve_threads(8), 3u);
  ::setenv("FSIM_THREADS", "garbage", 1);
  EXPECT_EQ(resolve_threads(0), 1u);
  ::unsetenv("FSIM_THREADS");
  EXPECT_EQ(resolve_threads(0), 1u);
  EXPECT_EQ(resolve_threads(8), 8u);
}

TEST(RunFederation, InvalidConfig) {
  Fixture f({5});
  FederationConfig cfg;
  cfg.C = 0.0;
  EXPECT_THROW(run_federation(cfg, f.clients, f.eval, f.spec), ValidationError);
  cfg.C = 0.5;
  cfg.B = 0;
  EXPECT_THROW(run_federation(cfg, f.clients, f.eval, f.spec), ValidationError);
  cfg.B = 4;
  EXPECT_THROW(run_federation(cfg, {}, f.eval, f.spec), ValidationError);
}
