#pragma once

#include <functional>
#include <map>

#include "coind/composition.hpp"
#include "coind/score_model.hpp"
#include "coind/synth_world.hpp"

namespace coind {

/// Batched conditional scorer: rows of x are evaluated at one (t, cond).
/// Score-space and eps-space scorers share the signature; which space a
/// callable lives in is part of its contract.
using Scorer = std::function<Mat(const Mat& x, int t, const ConditionVector& cond)>;

/// Exact train-distribution scorer for the blob world: the condition picks
/// the restricted, renormalized support weights. t = 0 means the clean
/// (unperturbed) score.
Scorer analytic_train_scorer(const WorldConfig& world, const SupportPattern& support,
                             const NoiseSchedule* schedule);

/// The Bayes-optimal noise prediction implied by the analytic score:
/// -sqrt(1 - abar_t) * noisy score.
Scorer analytic_eps_scorer(const WorldConfig& world, const SupportPattern& support,
                           const NoiseSchedule& schedule);

/// Model-backed scorers.
Scorer model_eps_scorer(const ScoreModel& model);
Scorer model_score_scorer(const ScoreModel& model, const NoiseSchedule& schedule);

/// NoisePredictor-backed eps scorer (works for test doubles too).
Scorer predictor_eps_scorer(const NoisePredictor& predictor);

/// The noise predictor a perfectly trained vanilla model would realize on
/// this world/support: conditions restrict the training pmf, the prediction
/// is the Bayes-optimal eps of the restricted mixture.
class AnalyticPredictor : public NoisePredictor {
 public:
  AnalyticPredictor(WorldConfig world, SupportPattern support, NoiseSchedule schedule);

  int dim() const override { return world_.dim(); }
  int attribute_count() const override { return world_.space.attribute_count(); }
  Vec predict_eps(const Vec& x_t, int t, const ConditionVector& cond) const override;

 private:
  WorldConfig world_;
  SupportPattern support_;
  NoiseSchedule schedule_;
  mutable std::map<ConditionVector, CompositionWeights> cache_;
};

/// sum over plan terms of coeff * scorer(x, t, cond).
Vec composed_score(const GuidancePlan& plan, const Scorer& scorer, const Vec& x, int t);
Mat composed_score_batch(const GuidancePlan& plan, const Scorer& scorer, const Mat& x, int t);

struct LangevinOptions {
  int steps_per_level = 20;
  double eta = 0.3;  // base step size; the level step is eta * (1 - abar_t)
};

/// Annealed Langevin over the schedule, T down to 1, using the composed
/// score at each level. Chains start from a standard normal. Throws
/// DivergenceError if any chain norm exceeds 1e6.
std::vector<Vec> sample_langevin(const GuidancePlan& plan, const Scorer& scorer,
                                 const NoiseSchedule& schedule, const LangevinOptions& options,
                                 int count, Rng& rng);

/// Deterministic reverse-diffusion sampling on a strided timestep
/// subsequence; plan terms are evaluated in eps space and combined with the
/// plan coefficients.
std::vector<Vec> sample_reverse(const GuidancePlan& plan, const Scorer& eps_scorer,
                                const NoiseSchedule& schedule, int steps, int count, Rng& rng);

/// Per-attribute embedding vectors standing in for a ConditionVector.
using ConditionEmbedding = std::vector<Vec>;

ConditionEmbedding embed_condition(const ScoreModel& model, const ConditionVector& cond);

/// Linear interpolation in embedding space between two conditions that
/// differ in exactly one attribute.
ConditionEmbedding interpolate_condition(const ScoreModel& model, const ConditionVector& cond_a,
                                         const ConditionVector& cond_b, double alpha);

/// Eps scorer pinned to a conditioning handle (the cond argument is
/// ignored); lets the samplers run on interpolated conditions.
Scorer embedded_eps_scorer(const ScoreModel& model, ConditionEmbedding embedding);

}  // namespace coind
