#pragma once

#include <functional>
#include <string>
#include <vector>

#include "coind/score_model.hpp"
#include "coind/synth_world.hpp"

namespace coind {

enum class Objective { Vanilla, CoInD, TheoreticalBound };

std::string to_string(Objective objective);
Objective objective_from_string(const std::string& name);

/// Pair construction for the conditional-independence term.
enum class CiMode {
  RandomPair,   // c^i + c^j - c^{ij} - c^null with random i != j
  LeaveOneOut,  // c^i + c^{-i} - c - c^null with random i
};

struct TrainingConfig {
  Objective objective = Objective::CoInD;
  double lambda = 1.0;
  double k1 = 1.0;
  double k2 = 0.1;
  double p_uncond = 0.2;
  int steps = 20000;
  int batch_size = 256;
  double learning_rate = 2e-4;
  std::uint64_t seed = 0;
  CiMode ci_mode = CiMode::RandomPair;
  // When set, weights each sample's CI term by 1/(1 - abar_t), i.e. the
  // score-space form of the combination instead of the plain eps-space one.
  bool ci_score_space = false;

  void validate() const;
};

/// JSON round-trip; parsing rejects unknown keys.
TrainingConfig training_config_from_json(const std::string& text);
std::string training_config_to_json(const TrainingConfig& config);

struct LossBreakdown {
  double score_loss = 0.0;
  double ci_loss = 0.0;
  double total = 0.0;
  int step = 0;
};

double objective_total(Objective objective, double score, double ci, const TrainingConfig& cfg);

struct TrainBatch {
  Mat x0;                             // B x dim
  std::vector<ConditionVector> conds; // raw or pre-masked, caller's choice
};

TrainBatch batch_from_samples(const std::vector<const LabeledSample*>& samples);

/// Mean over the batch of ||eps - predict_eps(x_t, t, cond)||^2 with fresh
/// (t, eps) per sample. Conditions are used as given (mask beforehand).
double loss_score(const NoisePredictor& model, const TrainBatch& batch,
                  const NoiseSchedule& schedule, Rng& rng);

/// Alg.-style pairwise conditional-independence penalty: per sample, one
/// perturbation shared by the four condition variants built from the raw
/// labels. Requires n >= 2 attributes.
double loss_ci(const NoisePredictor& model, const TrainBatch& batch, const NoiseSchedule& schedule,
               Rng& rng, CiMode mode = CiMode::RandomPair);

LossBreakdown loss_total(const NoisePredictor& model, const TrainBatch& batch,
                         const NoiseSchedule& schedule, const TrainingConfig& config, Rng& rng);

/// One Alg.-1 step on raw-labeled data: null-mask the score-term conditions,
/// perturb once, evaluate both terms on the shared perturbation and, when
/// `grad` is given, accumulate the objective's parameter gradient into it.
/// Identical rng state gives identical losses, so finite differences of this
/// function validate the gradient path.
LossBreakdown train_step_losses(ScoreModel& model, const TrainBatch& raw_batch,
                                const NoiseSchedule& schedule, const TrainingConfig& config,
                                Rng& rng, Vec* grad);

struct TrainRecord {
  LossBreakdown losses;
  double grad_norm = 0.0;
  double wall_ms = 0.0;  // elapsed since training start
};

using StepCallback = std::function<void(const TrainRecord&)>;

/// Runs the training loop: sample batch, null-mask score conditions, perturb
/// once, evaluate losses on the shared perturbation, Adam step. Deterministic
/// under a fixed config seed. Throws DivergenceError with step diagnostics on
/// non-finite loss.
std::vector<TrainRecord> train(ScoreModel& model, const Dataset& dataset,
                               const NoiseSchedule& schedule, const TrainingConfig& config,
                               const StepCallback& on_step = {});

void write_training_log(const std::string& path, const std::vector<TrainRecord>& records);

struct LambdaSuggestion {
  double lambda = 0.0;
  bool already_independent = false;
};

/// lambda = mean(last-decile score loss) / mean(last-decile ci loss), from a
/// vanilla run whose history measured (but did not optimize) the CI term.
LambdaSuggestion suggest_lambda(const std::vector<TrainRecord>& vanilla_history);

}  // namespace coind
