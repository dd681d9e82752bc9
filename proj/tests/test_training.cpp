#include <doctest.h>

#include <cmath>

#include "coind/training.hpp"

using namespace coind;

namespace {

// knows the true eps because the batch is built with x0 = 0, so
// eps = x_t / sqrt(1 - abar_t)
struct EchoEps : NoisePredictor {
  const NoiseSchedule* sched;
  int n;
  EchoEps(const NoiseSchedule& s, int n_) : sched(&s), n(n_) {}
  int dim() const override { return n; }
  int attribute_count() const override { return n; }
  Vec predict_eps(const Vec& x_t, int t, const ConditionVector&) const override {
    return x_t / std::sqrt(1.0 - sched->alpha_bar(t));
  }
};

struct ConstantEps : NoisePredictor {
  int n;
  Vec value;
  ConstantEps(int n_, Vec v) : n(n_), value(std::move(v)) {}
  int dim() const override { return n; }
  int attribute_count() const override { return n; }
  Vec predict_eps(const Vec&, int, const ConditionVector&) const override { return value; }
};

// eps = g(x_t, t) + sum_i f_i(c_i), with f_i(null) = 0: the factorized family
struct AdditiveEps : NoisePredictor {
  int n;
  explicit AdditiveEps(int n_) : n(n_) {}
  int dim() const override { return n; }
  int attribute_count() const override { return n; }
  Vec predict_eps(const Vec& x_t, int t, const ConditionVector& cond) const override {
    Vec out = 0.3 * x_t + Vec::Constant(n, 0.01 * t);
    for (int i = 0; i < n; ++i) {
      if (cond[i] == kNull) continue;
      // attribute i only touches coordinate i
      out[i] += 0.7 * (cond[i] + 1) + 0.1 * std::sin(3.0 * x_t[i] + cond[i]);
    }
    return out;
  }
};

// the one-vector appears only when two or more attributes are conditioned
struct PairInteractionEps : NoisePredictor {
  int n;
  explicit PairInteractionEps(int n_) : n(n_) {}
  int dim() const override { return n; }
  int attribute_count() const override { return n; }
  Vec predict_eps(const Vec&, int, const ConditionVector& cond) const override {
    int set = 0;
    for (int v : cond) set += v != kNull;
    return set >= 2 ? Vec::Ones(n) : Vec::Zero(n);
  }
};

TrainBatch zero_batch(int B, int n, Rng& rng, const std::vector<int>& cards) {
  TrainBatch batch;
  batch.x0 = Mat::Zero(B, n);
  for (int b = 0; b < B; ++b) {
    ConditionVector c(n);
    for (int i = 0; i < n; ++i) c[i] = static_cast<int>(rng.uniform_int(cards[i]));
    batch.conds.push_back(std::move(c));
  }
  return batch;
}

TrainBatch random_batch(int B, int n, Rng& rng, const std::vector<int>& cards) {
  TrainBatch batch = zero_batch(B, n, rng, cards);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) batch.x0(b, i) = rng.normal();
  return batch;
}

Dataset tiny_dataset(int count, std::uint64_t seed, SupportKind kind = SupportKind::Uniform) {
  auto world = make_world(AttributeSpace({2, 2}), 0.3);
  auto sup = build_support(world.space, kind);
  return generate_dataset(world, sup, count, seed);
}

ScoreModelConfig small_model_config(int width = 48, int layers = 2) {
  ScoreModelConfig cfg;
  cfg.cardinalities = {2, 2};
  cfg.hidden_width = width;
  cfg.hidden_layers = layers;
  cfg.time_features = 16;
  cfg.embed_dim = 8;
  return cfg;
}

double windowed_mean(const std::vector<TrainRecord>& h, size_t end, size_t window) {
  double acc = 0.0;
  for (size_t k = end - window; k < end; ++k) acc += h[k].losses.score_loss;
  return acc / window;
}

}  // namespace

TEST_CASE("loss_score") {
  auto sched = default_schedule();
  Rng batch_rng(1);

  SUBCASE("oracle-by-construction predictor scores zero") {
    EchoEps oracle(sched, 2);
    TrainBatch batch = zero_batch(64, 2, batch_rng, {2, 2});
    Rng rng(2);
    CHECK(loss_score(oracle, batch, sched, rng) <= 1e-24);
  }

  SUBCASE("zero predictor scores E||eps||^2 = n") {
    ConstantEps zero(2, Vec::Zero(2));
    TrainBatch batch = random_batch(8192, 2, batch_rng, {2, 2});
    Rng rng(3);
    CHECK(loss_score(zero, batch, sched, rng) == doctest::Approx(2.0).epsilon(0.05));
  }
}

TEST_CASE("loss_ci on the spec test doubles") {
  auto sched = default_schedule();
  Rng batch_rng(4);

  SUBCASE("condition-additive predictor gives exactly cancelling terms") {
    AdditiveEps additive(2);
    for (int trial = 0; trial < 100; ++trial) {
      TrainBatch batch = random_batch(16, 2, batch_rng, {2, 2});
      Rng rng(100 + trial);
      CHECK(loss_ci(additive, batch, sched, rng) <= 1e-12);
    }
  }

  SUBCASE("constant predictor cancels") {
    ConstantEps c(2, Vec::Constant(2, 3.7));
    TrainBatch batch = random_batch(32, 2, batch_rng, {2, 2});
    Rng rng(5);
    CHECK(loss_ci(c, batch, sched, rng) == 0.0);
  }

  SUBCASE("pair-interaction predictor loses exactly n") {
    PairInteractionEps pair(2);
    TrainBatch batch = random_batch(32, 2, batch_rng, {2, 2});
    Rng rng(6);
    CHECK(loss_ci(pair, batch, sched, rng) == 2.0);
  }

  SUBCASE("the four-term combination is symmetric in (i, j)") {
    // verified directly on an asymmetric predictor: swapping the pair swaps
    // the first two terms and leaves c^ij and c^null alone
    ScoreModelConfig mc;
    mc.cardinalities = {2, 3, 2};
    mc.hidden_width = 12;
    mc.hidden_layers = 1;
    mc.time_features = 4;
    mc.embed_dim = 3;
    ScoreModel net(mc, 5);
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      const Vec x = rng.normal_vec(3);
      const int t = 1 + static_cast<int>(rng.uniform_int(sched.T));
      const ConditionVector c = {static_cast<int>(rng.uniform_int(2)),
                                 static_cast<int>(rng.uniform_int(3)),
                                 static_cast<int>(rng.uniform_int(2))};
      const auto combo = [&](int i, int j) {
        ConditionVector cij = all_null(3);
        cij[i] = c[i];
        cij[j] = c[j];
        return (net.predict_eps(x, t, only_set(3, i, c[i])) +
                net.predict_eps(x, t, only_set(3, j, c[j])) - net.predict_eps(x, t, cij) -
                net.predict_eps(x, t, all_null(3)))
            .squaredNorm();
      };
      CHECK(combo(0, 1) == combo(1, 0));
      CHECK(combo(1, 2) == combo(2, 1));
    }
  }

  SUBCASE("leave-one-out mode also cancels for additive predictors") {
    AdditiveEps additive(3);
    TrainBatch batch = random_batch(32, 3, batch_rng, {2, 2, 2});
    Rng rng(7);
    CHECK(loss_ci(additive, batch, sched, rng, CiMode::LeaveOneOut) <= 1e-12);
  }

  SUBCASE("single attribute is a configuration error") {
    ConstantEps c(1, Vec::Zero(1));
    TrainBatch batch;
    batch.x0 = Mat::Zero(4, 1);
    batch.conds = {{0}, {1}, {0}, {1}};
    Rng rng(8);
    CHECK_THROWS_AS(loss_ci(c, batch, sched, rng), ConfigError);
  }
}

TEST_CASE("loss_total objectives") {
  TrainingConfig cfg;
  SUBCASE("arithmetic") {
    cfg.lambda = 1.0;
    CHECK(objective_total(Objective::CoInD, 0.04, 0.01, cfg) == doctest::Approx(0.05).epsilon(1e-12));
    cfg.k1 = 1.0;
    cfg.k2 = 0.1;
    CHECK(objective_total(Objective::TheoreticalBound, 0.04, 0.01, cfg) ==
          doctest::Approx(0.21).epsilon(1e-12));
    CHECK(objective_total(Objective::Vanilla, 0.04, 0.01, cfg) == 0.04);
  }
  SUBCASE("lambda = 0 reduces CoInD to vanilla exactly") {
    auto sched = default_schedule();
    Rng batch_rng(9);
    TrainBatch batch = random_batch(32, 2, batch_rng, {2, 2});
    AdditiveEps model(2);
    TrainingConfig coind_cfg;
    coind_cfg.objective = Objective::CoInD;
    coind_cfg.lambda = 0.0;
    TrainingConfig vanilla_cfg;
    vanilla_cfg.objective = Objective::Vanilla;
    Rng r1(10), r2(10);
    LossBreakdown a = loss_total(model, batch, sched, coind_cfg, r1);
    LossBreakdown b = loss_total(model, batch, sched, vanilla_cfg, r2);
    CHECK(a.total == b.total);
    CHECK(a.score_loss == b.score_loss);
  }
}

TEST_CASE("training config json") {
  TrainingConfig cfg;
  cfg.objective = Objective::TheoreticalBound;
  cfg.lambda = 2.5;
  cfg.steps = 123;
  auto text = training_config_to_json(cfg);
  TrainingConfig back = training_config_from_json(text);
  CHECK(back.objective == Objective::TheoreticalBound);
  CHECK(back.lambda == 2.5);
  CHECK(back.steps == 123);
  CHECK_THROWS_AS(training_config_from_json(R"({"stepz": 10})"), ConfigError);
  CHECK_THROWS_AS(training_config_from_json(R"({"lambda": -1})"), ConfigError);
}

TEST_CASE("gradients of every objective match finite differences") {
  auto sched = default_schedule();
  ScoreModel model(small_model_config(20, 1), 77);  // 2-layer toy model
  Rng batch_rng(11);
  TrainBatch batch = random_batch(8, 2, batch_rng, {2, 2});

  const std::vector<TrainingConfig> configs = [] {
    TrainingConfig vanilla;
    vanilla.objective = Objective::Vanilla;
    TrainingConfig coind;
    coind.objective = Objective::CoInD;
    coind.lambda = 1.7;
    TrainingConfig coind_weighted = coind;
    coind_weighted.ci_score_space = true;
    TrainingConfig bound;
    bound.objective = Objective::TheoreticalBound;
    bound.k1 = 1.0;
    bound.k2 = 0.1;
    return std::vector<TrainingConfig>{vanilla, coind, coind_weighted, bound};
  }();

  Rng dir_rng(12);
  for (const auto& cfg : configs) {
    CAPTURE(to_string(cfg.objective));
    Vec grad = Vec::Zero(model.param_count());
    Rng r0(99);
    train_step_losses(model, batch, sched, cfg, r0, &grad);

    const double h = 1e-4;
    for (int k = 0; k < 20; ++k) {
      Vec dir = Vec::Zero(model.param_count());
      for (int i = 0; i < dir.size(); ++i) dir[i] = dir_rng.normal();
      dir.normalize();
      const Vec saved = model.params();
      model.params() = saved + h * dir;
      Rng rp(99);
      const double lp = train_step_losses(model, batch, sched, cfg, rp, nullptr).total;
      model.params() = saved - h * dir;
      Rng rm(99);
      const double lm = train_step_losses(model, batch, sched, cfg, rm, nullptr).total;
      model.params() = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = grad.dot(dir);
      CHECK(std::abs(fd - an) / std::max(1.0, std::abs(fd)) <= 1e-4);
    }
  }
}

TEST_CASE("training runs") {
  auto sched = default_schedule();
  Dataset data = tiny_dataset(2048, 21);

  SUBCASE("vanilla loss halves and decreases in smoothed form") {
    ScoreModel model(small_model_config(), 1);
    TrainingConfig cfg;
    cfg.objective = Objective::Vanilla;
    cfg.steps = 3000;
    cfg.batch_size = 128;
    cfg.seed = 2;
    auto history = train(model, data, sched, cfg);
    const double early = windowed_mean(history, 100, 100);
    const double late = windowed_mean(history, history.size(), 100);
    CHECK(late < 0.5 * early);
    // window-100 means sampled every 500 steps never move up by much
    double prev = windowed_mean(history, 500, 100);
    for (size_t end = 1000; end <= history.size(); end += 500) {
      const double cur = windowed_mean(history, end, 100);
      CHECK(cur <= prev * 1.15);
      prev = cur;
    }
  }

  SUBCASE("coind drives the ci loss down") {
    ScoreModel model(small_model_config(), 3);
    TrainingConfig cfg;
    cfg.objective = Objective::CoInD;
    cfg.lambda = 1.0;
    cfg.steps = 20000;
    cfg.batch_size = 128;
    cfg.seed = 4;
    auto history = train(model, data, sched, cfg);
    double at100 = 0.0, at_end = 0.0;
    for (int k = 50; k < 150; ++k) at100 += history[k].losses.ci_loss;
    for (size_t k = history.size() - 100; k < history.size(); ++k)
      at_end += history[k].losses.ci_loss;
    CHECK(at_end / 100.0 < 0.2 * (at100 / 100.0));
  }

  SUBCASE("fixed seed gives bit-identical checkpoints") {
    TrainingConfig cfg;
    cfg.objective = Objective::CoInD;
    cfg.steps = 200;
    cfg.batch_size = 64;
    cfg.seed = 5;
    ScoreModel m1(small_model_config(), 6);
    ScoreModel m2(small_model_config(), 6);
    auto h1 = train(m1, data, sched, cfg);
    auto h2 = train(m2, data, sched, cfg);
    CHECK(m1.params() == m2.params());
    CHECK(h1.back().losses.total == h2.back().losses.total);
  }

  SUBCASE("theoretical bound objective trains stably") {
    ScoreModel model(small_model_config(), 11);
    TrainingConfig cfg;
    cfg.objective = Objective::TheoreticalBound;
    cfg.k1 = 1.0;
    cfg.k2 = 0.1;
    cfg.steps = 800;
    cfg.batch_size = 64;
    cfg.seed = 12;
    auto history = train(model, data, sched, cfg);
    CHECK(std::isfinite(history.back().losses.total));
    CHECK(history.back().losses.score_loss < history.front().losses.score_loss);
    // total obeys the bound formula at every recorded step
    for (size_t k = 0; k < history.size(); k += 97) {
      const auto& l = history[k].losses;
      CHECK(l.total ==
            doctest::Approx(std::sqrt(l.score_loss) + 0.1 * std::sqrt(l.ci_loss)).epsilon(1e-12));
    }
  }

  SUBCASE("divergence aborts with a diagnostic") {
    TrainingConfig cfg;
    cfg.objective = Objective::Vanilla;
    cfg.steps = 2000;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e200;  // guaranteed overflow at the next forward
    cfg.seed = 7;
    ScoreModel model(small_model_config(), 8);
    CHECK_THROWS_AS(train(model, data, sched, cfg), DivergenceError);
  }
}

TEST_CASE("suggest_lambda") {
  auto make_history = [](double score, double ci, int steps) {
    std::vector<TrainRecord> h(steps);
    for (int k = 0; k < steps; ++k) {
      h[k].losses = {score, ci, score, k + 1};
    }
    return h;
  };
  SUBCASE("ratio of tail means") {
    auto h = make_history(0.08, 0.04, 1000);
    auto s = suggest_lambda(h);
    CHECK_FALSE(s.already_independent);
    CHECK(s.lambda == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("degenerate ci flags already-independent") {
    auto h = make_history(0.08, 0.0, 1000);
    auto s = suggest_lambda(h);
    CHECK(s.already_independent);
    CHECK(s.lambda == 0.0);
  }
  SUBCASE("blob-world vanilla run lands in the sanity band") {
    auto sched = default_schedule();
    Dataset data = tiny_dataset(2048, 31, SupportKind::OrthogonalPartial);
    ScoreModel model(small_model_config(), 9);
    TrainingConfig cfg;
    cfg.objective = Objective::Vanilla;
    cfg.steps = 2000;
    cfg.batch_size = 128;
    cfg.seed = 10;
    auto history = train(model, data, sched, cfg);
    auto s = suggest_lambda(history);
    CHECK(s.lambda > 0.1);
    CHECK(s.lambda < 10.0);
  }
}
