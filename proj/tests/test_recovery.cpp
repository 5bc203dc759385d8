#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedrec/recovery.hpp"
#include "oracles.hpp"

using namespace fedrec;

namespace {

struct Fixture {
  std::shared_ptr<const Dataset> data;
  std::shared_ptr<const Federation> fed;
  History history;
};

Fixture make_fixture(ModelKind kind, RuleKind rule, std::size_t rounds,
                     std::set<int> malicious = {},
                     std::optional<AttackConfig> attack = std::nullopt) {
  Fixture f;
  f.data = std::make_shared<const Dataset>(gen_synthetic(3, 5, 40, 4.0, 8));
  FlSetup s;
  s.spec = ModelSpec{kind, 5, 3, kind == ModelKind::kMlp ? 6u : 0u, 0.05};
  s.rule = AggregationRule{rule, rule == RuleKind::kTrimmedMean ? 1u : 0u};
  s.eta = 0.2;
  s.batch_size = 8;
  s.seed = 13;
  f.fed = std::make_shared<const Federation>(f.data, partition_noniid(*f.data, 6, 0.5, 4), s,
                                             std::move(malicious), attack);
  f.history = train(*f.fed, init_params(s.spec, 2), rounds).history;
  return f;
}

RecoveryParams params(std::size_t tw, std::size_t tc, std::size_t tf) {
  RecoveryParams p;
  p.warmup = tw;
  p.correction = tc;
  p.final_tuning = tf;
  return p;
}

double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.dim(); ++j) m = std::max(m, std::abs(a[j] - b[j]));
  return m;
}

// Smallest pool value with at most floor(alpha * N) values strictly above it.
double brute_threshold(const std::vector<double>& pool, double alpha) {
  const double allowed = std::floor(alpha * static_cast<double>(pool.size()));
  double best = std::numeric_limits<double>::infinity();
  for (double v : pool) {
    std::size_t above = 0;
    for (double x : pool) above += x > v;
    if (static_cast<double>(above) <= allowed) best = std::min(best, v);
  }
  return best;
}

}  // namespace

TEST_CASE("predicted cost counts warm-up, corrections and final tuning") {
  CHECK(predicted_cost(2000, 20, 10, 5) == 222);
  CHECK(predicted_cost(300, 10, 10, 5) == 43);
  CHECK(predicted_cost(10, 5, 1, 5) == 10);
  CHECK(predicted_cost(100, 20, 1000, 5) == 25);
  CHECK_THROWS_AS(predicted_cost(10, 6, 1, 5), InvalidArgument);
  CHECK_THROWS_AS(predicted_cost(10, 1, 0, 1), InvalidArgument);
}

TEST_CASE("recovery parameters are validated") {
  CHECK_NOTHROW(params(5, 2, 2).validate(20));
  CHECK_THROWS_AS(params(2, 2, 2).validate(20), InvalidArgument);
  CHECK_THROWS_AS(params(5, 0, 2).validate(20), InvalidArgument);
  CHECK_THROWS_AS(params(15, 2, 6).validate(20), InvalidArgument);
  auto p = params(5, 2, 2);
  p.tolerance = 0.0;
  CHECK_THROWS_AS(p.validate(20), InvalidArgument);
  p.threshold = -1.0;
  CHECK_THROWS_AS(p.validate(20), InvalidArgument);
  p.threshold = std::numeric_limits<double>::infinity();
  CHECK_NOTHROW(p.validate(20));
}

TEST_CASE("round threshold matches the brute-force definition") {
  CHECK(round_threshold({5, 4, 3, 2, 1}, 0.2) == 4);
  CHECK(round_threshold({5, 4, 3, 2, 1}, 1e-6) == 5);
  CHECK(round_threshold({5, 4, 3, 2, 1}, 1.0) == 1);
  CHECK(round_threshold({2, 2, 2, 1}, 0.3) == 2);
  RngStream rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> pool(1 + rng.uniform_index(40));
    for (double& x : pool) x = std::floor(std::abs(rng.normal()) * 4.0);
    const double alpha = rng.uniform(0.001, 1.0);
    CHECK(round_threshold(pool, alpha) == brute_threshold(pool, alpha));
  }
  CHECK_THROWS_AS(round_threshold({}, 0.1), InvalidArgument);
}

TEST_CASE("threshold pools absolute values of remaining clients per round") {
  History h;
  RoundRecord r0;
  r0.updates[0] = ParamVector({-9.0, 1.0});
  r0.updates[1] = ParamVector({2.0, -3.0});
  RoundRecord r1;
  r1.round = 1;
  r1.updates[0] = ParamVector({0.5, 0.5});
  r1.updates[1] = ParamVector({-7.0, 0.1});
  h.records = {r0, r1};
  // round 0 pool {9,1,2,3}, round 1 pool {0.5,0.5,7,0.1}
  CHECK(compute_threshold(h, {0, 1}, 0.25) == 3.0);
  CHECK(compute_threshold(h, {1}, 0.5) == 2.0);
  CHECK(compute_threshold(h, {1}, 0.4) == 7.0);
  CHECK(compute_threshold(h, {0}, 1e-6) == 9.0);
  CHECK_THROWS_AS(compute_threshold(h, {0}, 0.0), InvalidArgument);
}

TEST_CASE("infinite threshold costs exactly the predicted rounds") {
  const auto f = make_fixture(ModelKind::kLogReg, RuleKind::kFedAvg, 60, {1},
                              AttackConfig{TrimAttack{2.0}});
  auto p = params(10, 7, 5);
  p.threshold = std::numeric_limits<double>::infinity();
  const auto r = fedrecover(f.history, *f.fed, {1}, p);
  CHECK(r.singular_fallbacks == 0);
  CHECK(r.abnormality_count == 0);
  CHECK(r.exact_rounds.size() == 5);
  CHECK_FALSE(r.exact_rounds.contains(1));
  for (const auto& [id, tr] : r.exact_rounds) CHECK(tr == predicted_cost(60, 10, 7, 5));
  CHECK(r.per_round_models.size() == 61);
  CHECK(r.per_round_models.front() == f.history.records.front().global_model);
}

TEST_CASE("correcting every round reproduces train-from-scratch") {
  for (auto kind : {ModelKind::kLogReg, ModelKind::kMlp}) {
    const auto f = make_fixture(kind, RuleKind::kTrimmedMean, 30, {0, 5},
                                AttackConfig{TrimAttack{2.0}});
    const auto r = fedrecover(f.history, *f.fed, {0, 5}, params(4, 1, 2));
    const auto s = train_from_scratch(*f.fed, {1, 2, 3, 4}, f.history.records[0].global_model, 30);
    CHECK(r.recovered_model == s.model);
    for (const auto& [id, tr] : r.exact_rounds) CHECK(tr == 30);
    CHECK(r.exact_rounds == s.exact_rounds);
  }
}

TEST_CASE("historical replay without removals is the original trajectory") {
  const auto f = make_fixture(ModelKind::kMlp, RuleKind::kMedian, 12, {2},
                              AttackConfig{TrimAttack{3.0}});
  const auto r = historical_only(f.history, *f.fed, {});
  REQUIRE(r.per_round_models.size() == 13);
  for (std::size_t t = 0; t < 12; ++t)
    CHECK(r.per_round_models[t] == f.history.records[t].global_model);
  CHECK(r.model == final_model_from_history(f.history, *f.fed));
  for (const auto& [id, tr] : r.exact_rounds) CHECK(tr == 0);
}

TEST_CASE("recovery without removals stays on the original trajectory") {
  const auto f = make_fixture(ModelKind::kLogReg, RuleKind::kTrimmedMean, 30);
  const auto r = fedrecover(f.history, *f.fed, {}, params(5, 10, 3));
  CHECK(r.singular_fallbacks == 0);
  CHECK(r.abnormality_count == 0);
  for (std::size_t t = 0; t < 30; ++t)
    CHECK(r.per_round_models[t] == f.history.records[t].global_model);
  for (const auto& [id, tr] : r.exact_rounds) CHECK(tr == predicted_cost(30, 5, 10, 3));
}

TEST_CASE("exact Hessian products recover the ridge scratch model") {
  BackdoorAttack bd;
  bd.trigger = EveryKth{2, 0.0};
  bd.scale = 5.0;
  const auto f = make_fixture(ModelKind::kRidge, RuleKind::kFedAvg, 40, {3}, AttackConfig{bd});
  auto p = params(5, 8, 3);
  p.hvp_mode = HvpMode::kExactQuadratic;
  p.threshold = std::numeric_limits<double>::infinity();
  const auto r = fedrecover(f.history, *f.fed, {3}, p);
  const auto s = train_from_scratch(*f.fed, {0, 1, 2, 4, 5}, f.history.records[0].global_model, 40);
  for (std::size_t t = 0; t <= 40; ++t)
    CHECK(max_abs_diff(r.per_round_models[t], s.per_round_models[t]) <= 1e-8);
  const auto logreg = make_fixture(ModelKind::kLogReg, RuleKind::kFedAvg, 10);
  CHECK_THROWS_AS(fedrecover(logreg.history, *logreg.fed, {}, p), InvalidArgument);
}

TEST_CASE("estimates are observed and abnormal ones replaced") {
  const auto f = make_fixture(ModelKind::kLogReg, RuleKind::kFedAvg, 40, {0},
                              AttackConfig{TrimAttack{2.0}});
  const std::set<int> detected{0};
  std::size_t seen = 0;
  auto p = params(10, 5, 5);
  p.threshold = 0.0;
  const auto r = fedrecover(f.history, *f.fed, detected, p, {},
                            [&](std::uint64_t, int, const ParamVector&, const ParamVector&) {
                              ++seen;
                            });
  // every estimate is abnormal against a zero threshold
  CHECK(seen == 0);
  for (const auto& [id, tr] : r.exact_rounds) CHECK(tr == 40);
  CHECK(r.abnormality_count + r.singular_fallbacks ==
        5 * (40 - predicted_cost(40, 10, 5, 5)));
  p.threshold = std::numeric_limits<double>::infinity();
  const auto q = fedrecover(f.history, *f.fed, detected, p, {},
                            [&](std::uint64_t t, int, const ParamVector& w, const ParamVector&) {
                              ++seen;
                              CHECK(t >= 10);
                              CHECK(w.dim() == f.fed->setup().spec.param_dim());
                            });
  CHECK(seen == 5 * (40 - predicted_cost(40, 10, 5, 5)));
  CHECK(q.abnormality_count == 0);
  CHECK_THROWS_AS(fedrecover(f.history, *f.fed, {0, 1, 2, 3, 4, 5}, p), InvalidArgument);
  ResidualAttack residual;
  residual.attackers = {2};
  CHECK_THROWS_AS(fedrecover(f.history, *f.fed, {2}, p, residual), InvalidArgument);
}

TEST_CASE("fine-tune class counts sum to the requested size") {
  RngStream rng(1);
  CHECK(fine_tune_class_counts(10, 1000, std::nullopt, rng) == std::vector<std::size_t>(10, 100));
  const auto uneven = fine_tune_class_counts(3, 10, std::nullopt, rng);
  CHECK(uneven == std::vector<std::size_t>{4, 3, 3});
  for (double beta : {0.1, 1.0, 10.0}) {
    const auto c = fine_tune_class_counts(7, 333, beta, rng);
    std::size_t total = 0;
    for (auto x : c) total += x;
    CHECK(total == 333);
  }
  CHECK_THROWS_AS(fine_tune_class_counts(3, 10, 0.0, rng), InvalidArgument);
}

TEST_CASE("fine-tuning reduces clean loss and is deterministic") {
  const Dataset clean = gen_synthetic(3, 5, 40, 4.0, 8);
  const ModelSpec spec{ModelKind::kLogReg, 5, 3, 0, 0.0};
  RngStream rng(3);
  const ParamVector start = oracle::random_vector(spec.param_dim(), rng, 3.0);
  FineTuneParams ft;
  ft.epochs = 5;
  ft.examples = 60;
  ft.batch_size = 10;
  ft.eta = 0.1;
  const ParamVector a = fine_tune(spec, start, clean, ft);
  const auto rows = all_rows(clean);
  const BatchView all{clean, rows};
  CHECK(loss(spec, a, all) < loss(spec, start, all));
  CHECK(a == fine_tune(spec, start, clean, ft));
  ft.epochs = 0;
  CHECK(fine_tune(spec, start, clean, ft) == start);
  ft.epochs = 1;
  ft.examples = 500;
  CHECK_THROWS_AS(fine_tune(spec, start, clean, ft), InvalidArgument);
}

TEST_CASE("theoretical bound closed form") {
  const double eta = 0.1, mu = 0.5, M = 2.0, d0 = 3.0;
  const double r = std::sqrt(1.0 - eta * mu);
  CHECK(theoretical_bound(eta, mu, M, 0, d0) == doctest::Approx(d0));
  double rec = d0;
  for (int t = 1; t <= 25; ++t) {
    rec = r * rec + eta * M;
    CHECK(theoretical_bound(eta, mu, M, static_cast<std::uint64_t>(t), d0) ==
          doctest::Approx(rec).epsilon(1e-12));
  }
  CHECK(theoretical_bound(eta, mu, M, 100000, d0) ==
        doctest::Approx(eta * M / (1.0 - r)).epsilon(1e-9));
  CHECK_THROWS_AS(theoretical_bound(eta, 0.0, M, 1, d0), InvalidArgument);
  CHECK_THROWS_AS(theoretical_bound(1.0, 2.0, M, 1, d0), InvalidArgument);
}
