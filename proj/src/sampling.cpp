#include "coind/sampling.hpp"

#include <cmath>
#include <map>

namespace coind {

namespace {

// weights_for_condition is a pmf restriction; memoize per condition since
// samplers re-query the same handful of conditions every step.
class WeightCache {
 public:
  explicit WeightCache(const SupportPattern& support) : support_(support) {}

  const CompositionWeights& get(const ConditionVector& cond) {
    auto it = cache_.find(cond);
    if (it == cache_.end()) it = cache_.emplace(cond, weights_for_condition(support_, cond)).first;
    return it->second;
  }

 private:
  const SupportPattern& support_;
  std::map<ConditionVector, CompositionWeights> cache_;
};

}  // namespace

Scorer analytic_train_scorer(const WorldConfig& world, const SupportPattern& support,
                             const NoiseSchedule* schedule) {
  auto cache = std::make_shared<WeightCache>(support);
  const WorldConfig* w = &world;
  return [cache, w, schedule](const Mat& x, int t, const ConditionVector& cond) -> Mat {
    const CompositionWeights& weights = cache->get(cond);
    Mat out(x.rows(), x.cols());
    const std::optional<int> ts = t > 0 ? std::optional<int>(t) : std::nullopt;
    for (Eigen::Index b = 0; b < x.rows(); ++b)
      out.row(b) = analytic_score(*w, weights, x.row(b).transpose(), ts, schedule).transpose();
    return out;
  };
}

Scorer analytic_eps_scorer(const WorldConfig& world, const SupportPattern& support,
                           const NoiseSchedule& schedule) {
  Scorer score = analytic_train_scorer(world, support, &schedule);
  const NoiseSchedule* s = &schedule;
  return [score, s](const Mat& x, int t, const ConditionVector& cond) -> Mat {
    return -std::sqrt(1.0 - s->alpha_bar(t)) * score(x, t, cond);
  };
}

Scorer model_eps_scorer(const ScoreModel& model) {
  const ScoreModel* m = &model;
  return [m](const Mat& x, int t, const ConditionVector& cond) -> Mat {
    const std::vector<int> ts(x.rows(), t);
    const std::vector<ConditionVector> conds(x.rows(), cond);
    return m->forward_batch(x, ts, conds);
  };
}

Scorer model_score_scorer(const ScoreModel& model, const NoiseSchedule& schedule) {
  Scorer eps = model_eps_scorer(model);
  const NoiseSchedule* s = &schedule;
  return [eps, s](const Mat& x, int t, const ConditionVector& cond) -> Mat {
    return eps(x, t, cond) / -std::sqrt(1.0 - s->alpha_bar(t));
  };
}

Scorer predictor_eps_scorer(const NoisePredictor& predictor) {
  const NoisePredictor* p = &predictor;
  return [p](const Mat& x, int t, const ConditionVector& cond) -> Mat {
    const std::vector<int> ts(x.rows(), t);
    const std::vector<ConditionVector> conds(x.rows(), cond);
    return p->predict_eps_batch(x, ts, conds);
  };
}

AnalyticPredictor::AnalyticPredictor(WorldConfig world, SupportPattern support,
                                     NoiseSchedule schedule)
    : world_(std::move(world)), support_(std::move(support)), schedule_(std::move(schedule)) {
  if (!(support_.space() == world_.space))
    throw ShapeError("support space does not match world space");
}

Vec AnalyticPredictor::predict_eps(const Vec& x_t, int t, const ConditionVector& cond) const {
  auto it = cache_.find(cond);
  if (it == cache_.end()) {
    // a condition with zero training mass gets an empty entry: the perfectly
    // trained model assigns such compositions vanishing posterior mass, which
    // the implicit classifier sees as an unbeatable energy
    double mass = 0.0;
    for (const auto& [c, p] : support_.nonzero_cells()) {
      bool match = true;
      for (size_t i = 0; i < cond.size(); ++i) {
        if (cond[i] != kNull && cond[i] != c[i]) {
          match = false;
          break;
        }
      }
      if (match) mass += p;
    }
    it = cache_
             .emplace(cond, mass > 0.0 ? weights_for_condition(support_, cond)
                                       : CompositionWeights{})
             .first;
  }
  if (it->second.empty()) return Vec::Constant(world_.dim(), 1e6);
  return -std::sqrt(1.0 - schedule_.alpha_bar(t)) *
         analytic_score(world_, it->second, x_t, t, &schedule_);
}

Mat composed_score_batch(const GuidancePlan& plan, const Scorer& scorer, const Mat& x, int t) {
  if (plan.terms.empty()) throw ConstraintError("empty guidance plan");
  Mat acc = Mat::Zero(x.rows(), x.cols());
  for (const auto& term : plan.terms) acc += term.coeff.to_double() * scorer(x, t, term.cond);
  return acc;
}

Vec composed_score(const GuidancePlan& plan, const Scorer& scorer, const Vec& x, int t) {
  Mat X(1, x.size());
  X.row(0) = x.transpose();
  return composed_score_batch(plan, scorer, X, t).row(0).transpose();
}

std::vector<Vec> sample_langevin(const GuidancePlan& plan, const Scorer& scorer,
                                 const NoiseSchedule& schedule, const LangevinOptions& options,
                                 int count, Rng& rng) {
  if (!(options.eta > 0.0)) throw ConstraintError("langevin requires eta > 0");
  if (count <= 0) return {};
  const int n = static_cast<int>(plan.terms.front().cond.size());
  Mat x(count, n);
  for (int b = 0; b < count; ++b)
    for (int i = 0; i < n; ++i) x(b, i) = rng.normal();

  for (int t = schedule.T; t >= 1; --t) {
    const double eta_t = options.eta * (1.0 - schedule.alpha_bar(t));
    const double half = 0.5 * eta_t;
    const double noise = std::sqrt(eta_t);
    for (int k = 0; k < options.steps_per_level; ++k) {
      Mat score = composed_score_batch(plan, scorer, x, t);
      for (int b = 0; b < count; ++b)
        for (int i = 0; i < n; ++i) x(b, i) += half * score(b, i) + noise * rng.normal();
      const double worst = x.rowwise().norm().maxCoeff();
      if (worst > 1e6)
        throw DivergenceError("langevin diverged at level t=" + std::to_string(t) +
                              " (|x| = " + std::to_string(worst) + ")");
    }
  }
  std::vector<Vec> out;
  out.reserve(count);
  for (int b = 0; b < count; ++b) out.push_back(x.row(b).transpose());
  return out;
}

std::vector<Vec> sample_reverse(const GuidancePlan& plan, const Scorer& eps_scorer,
                                const NoiseSchedule& schedule, int steps, int count, Rng& rng) {
  if (steps < 1 || steps > schedule.T) throw ConstraintError("reverse sampler requires 1 <= steps <= T");
  if (count <= 0) return {};
  const int n = static_cast<int>(plan.terms.front().cond.size());

  // strided descending subsequence of timesteps, T down to 1
  std::vector<int> taus(steps);
  if (steps == 1) {
    taus[0] = schedule.T;
  } else {
    for (int k = 0; k < steps; ++k) {
      taus[k] = 1 + static_cast<int>(std::llround(static_cast<double>(schedule.T - 1) *
                                                  (steps - 1 - k) / (steps - 1)));
    }
  }

  Mat x(count, n);
  for (int b = 0; b < count; ++b)
    for (int i = 0; i < n; ++i) x(b, i) = rng.normal();

  for (int k = 0; k < steps; ++k) {
    const int t = taus[k];
    const double abar = schedule.alpha_bar(t);
    Mat eps_hat = composed_score_batch(plan, eps_scorer, x, t);
    Mat x0 = (x - std::sqrt(1.0 - abar) * eps_hat) / std::sqrt(abar);
    if (k + 1 < steps) {
      const double abar_next = schedule.alpha_bar(taus[k + 1]);
      x = std::sqrt(abar_next) * x0 + std::sqrt(1.0 - abar_next) * eps_hat;
    } else {
      x = x0;
    }
  }
  std::vector<Vec> out;
  out.reserve(count);
  for (int b = 0; b < count; ++b) out.push_back(x.row(b).transpose());
  return out;
}

ConditionEmbedding embed_condition(const ScoreModel& model, const ConditionVector& cond) {
  if (static_cast<int>(cond.size()) != model.attribute_count())
    throw ShapeError("condition length must match attribute count");
  ConditionEmbedding emb(cond.size());
  for (size_t i = 0; i < cond.size(); ++i)
    emb[i] = model.embedding_row(static_cast<int>(i), cond[i]);
  return emb;
}

ConditionEmbedding interpolate_condition(const ScoreModel& model, const ConditionVector& cond_a,
                                         const ConditionVector& cond_b, double alpha) {
  if (cond_a.size() != cond_b.size()) throw ShapeError("conditions differ in length");
  int differing = -1;
  for (size_t i = 0; i < cond_a.size(); ++i) {
    if (cond_a[i] != cond_b[i]) {
      if (differing != -1)
        throw ConstraintError("interpolation requires conditions differing in exactly one attribute");
      differing = static_cast<int>(i);
    }
  }
  if (differing == -1)
    throw ConstraintError("interpolation requires conditions differing in exactly one attribute");
  if (alpha < 0.0 || alpha > 1.0) throw ConstraintError("alpha must lie in [0, 1]");

  ConditionEmbedding emb = embed_condition(model, cond_a);
  emb[differing] = (1.0 - alpha) * model.embedding_row(differing, cond_a[differing]) +
                   alpha * model.embedding_row(differing, cond_b[differing]);
  return emb;
}

Scorer embedded_eps_scorer(const ScoreModel& model, ConditionEmbedding embedding) {
  const ScoreModel* m = &model;
  return [m, embedding = std::move(embedding)](const Mat& x, int t, const ConditionVector&) -> Mat {
    const std::vector<int> ts(x.rows(), t);
    return m->forward_batch_embedded(x, ts, embedding);
  };
}

}  // namespace coind
