#include "coind/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

namespace coind {

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::Vanilla: return "vanilla";
    case Objective::CoInD: return "coind";
    case Objective::TheoreticalBound: return "theoretical_bound";
  }
  return "vanilla";
}

Objective objective_from_string(const std::string& name) {
  if (name == "vanilla") return Objective::Vanilla;
  if (name == "coind") return Objective::CoInD;
  if (name == "theoretical_bound") return Objective::TheoreticalBound;
  throw ConfigError("unknown objective: " + name);
}

void TrainingConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (objective == Objective::TheoreticalBound && (k1 <= 0.0 || k2 <= 0.0))
    throw ConfigError("theoretical_bound requires K1, K2 > 0");
  if (p_uncond < 0.0 || p_uncond >= 1.0) throw ConfigError("p_uncond must be in [0, 1)");
  if (steps < 1 || batch_size < 1) throw ConfigError("steps and batch_size must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
}

TrainingConfig training_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainingConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "objective") cfg.objective = objective_from_string(value.get<std::string>());
    else if (key == "lambda") cfg.lambda = value.get<double>();
    else if (key == "k1") cfg.k1 = value.get<double>();
    else if (key == "k2") cfg.k2 = value.get<double>();
    else if (key == "p_uncond") cfg.p_uncond = value.get<double>();
    else if (key == "steps") cfg.steps = value.get<int>();
    else if (key == "batch_size") cfg.batch_size = value.get<int>();
    else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
    else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
    else if (key == "ci_mode")
      cfg.ci_mode = value.get<std::string>() == "leave_one_out" ? CiMode::LeaveOneOut
                                                                : CiMode::RandomPair;
    else if (key == "ci_score_space") cfg.ci_score_space = value.get<bool>();
    else throw ConfigError("unknown training config key: " + key);
  }
  cfg.validate();
  return cfg;
}

std::string training_config_to_json(const TrainingConfig& cfg) {
  nlohmann::json j;
  j["objective"] = to_string(cfg.objective);
  j["lambda"] = cfg.lambda;
  j["k1"] = cfg.k1;
  j["k2"] = cfg.k2;
  j["p_uncond"] = cfg.p_uncond;
  j["steps"] = cfg.steps;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["seed"] = cfg.seed;
  j["ci_mode"] = cfg.ci_mode == CiMode::LeaveOneOut ? "leave_one_out" : "random_pair";
  j["ci_score_space"] = cfg.ci_score_space;
  return j.dump(2);
}

double objective_total(Objective objective, double score, double ci, const TrainingConfig& cfg) {
  switch (objective) {
    case Objective::Vanilla: return score;
    case Objective::CoInD: return score + cfg.lambda * ci;
    case Objective::TheoreticalBound: return cfg.k1 * std::sqrt(score) + cfg.k2 * std::sqrt(ci);
  }
  return score;
}

TrainBatch batch_from_samples(const std::vector<const LabeledSample*>& samples) {
  if (samples.empty()) throw ConstraintError("batch must be nonempty");
  const int n = static_cast<int>(samples.front()->x.size());
  TrainBatch batch;
  batch.x0.resize(samples.size(), n);
  batch.conds.reserve(samples.size());
  for (size_t b = 0; b < samples.size(); ++b) {
    batch.x0.row(b) = samples[b]->x.transpose();
    batch.conds.push_back(ConditionVector(samples[b]->c.begin(), samples[b]->c.end()));
  }
  return batch;
}

namespace {

struct Perturbation {
  Mat x_t;
  Mat eps;
  std::vector<int> ts;
};

Perturbation draw_perturbation(const Mat& x0, const NoiseSchedule& schedule, Rng& rng) {
  const int B = static_cast<int>(x0.rows());
  const int n = static_cast<int>(x0.cols());
  Perturbation p;
  p.ts.resize(B);
  p.eps.resize(B, n);
  p.x_t.resize(B, n);
  for (int b = 0; b < B; ++b) {
    p.ts[b] = 1 + static_cast<int>(rng.uniform_int(schedule.T));
    for (int i = 0; i < n; ++i) p.eps(b, i) = rng.normal();
    const double abar = schedule.alpha_bar(p.ts[b]);
    p.x_t.row(b) = std::sqrt(abar) * x0.row(b) + std::sqrt(1.0 - abar) * p.eps.row(b);
  }
  return p;
}

struct CiConds {
  // stacked order: block 0 = c^i, 1 = c^j (or c^{-i}), 2 = c^{ij} (or full c),
  // 3 = c^null
  std::vector<ConditionVector> stacked;
};

CiConds build_ci_conds(const std::vector<ConditionVector>& raw, CiMode mode, Rng& rng) {
  const int B = static_cast<int>(raw.size());
  const int n = static_cast<int>(raw.front().size());
  if (n < 2) throw ConfigError("conditional-independence loss requires n >= 2 attributes");
  CiConds out;
  out.stacked.resize(4 * static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    const ConditionVector& c = raw[b];
    if (mode == CiMode::RandomPair) {
      int i = 0, j = 1;
      if (n > 2) {
        i = static_cast<int>(rng.uniform_int(n));
        j = static_cast<int>(rng.uniform_int(n - 1));
        if (j >= i) ++j;
      }
      out.stacked[b] = only_set(n, i, c[i]);
      out.stacked[B + b] = only_set(n, j, c[j]);
      ConditionVector cij = all_null(n);
      cij[i] = c[i];
      cij[j] = c[j];
      out.stacked[2 * B + b] = std::move(cij);
    } else {
      const int i = static_cast<int>(rng.uniform_int(n));
      out.stacked[b] = only_set(n, i, c[i]);
      ConditionVector rest = c;
      rest[i] = kNull;
      out.stacked[B + b] = std::move(rest);
      out.stacked[2 * B + b] = c;
    }
    out.stacked[3 * B + b] = all_null(n);
  }
  return out;
}

Mat stack4(const Mat& m) {
  Mat out(4 * m.rows(), m.cols());
  for (int k = 0; k < 4; ++k) out.middleRows(k * m.rows(), m.rows()) = m;
  return out;
}

std::vector<int> stack4(const std::vector<int>& ts) {
  std::vector<int> out;
  out.reserve(4 * ts.size());
  for (int k = 0; k < 4; ++k) out.insert(out.end(), ts.begin(), ts.end());
  return out;
}

// ||e0 + e1 - e2 - e3||^2 per sample from the stacked prediction
Mat ci_combination(const Mat& stacked_eps, int B) {
  return stacked_eps.topRows(B) + stacked_eps.middleRows(B, B) - stacked_eps.middleRows(2 * B, B) -
         stacked_eps.middleRows(3 * B, B);
}

double ci_value(const Mat& combo, const std::vector<int>& ts, const NoiseSchedule& schedule,
                bool score_space) {
  double acc = 0.0;
  for (int b = 0; b < combo.rows(); ++b) {
    const double w = score_space ? 1.0 / (1.0 - schedule.alpha_bar(ts[b])) : 1.0;
    acc += w * combo.row(b).squaredNorm();
  }
  return acc / combo.rows();
}

}  // namespace

double loss_score(const NoisePredictor& model, const TrainBatch& batch,
                  const NoiseSchedule& schedule, Rng& rng) {
  Perturbation p = draw_perturbation(batch.x0, schedule, rng);
  Mat eps_hat = model.predict_eps_batch(p.x_t, p.ts, batch.conds);
  return (eps_hat - p.eps).squaredNorm() / batch.x0.rows();
}

double loss_ci(const NoisePredictor& model, const TrainBatch& batch, const NoiseSchedule& schedule,
               Rng& rng, CiMode mode) {
  Perturbation p = draw_perturbation(batch.x0, schedule, rng);
  CiConds conds = build_ci_conds(batch.conds, mode, rng);
  Mat eps4 = model.predict_eps_batch(stack4(p.x_t), stack4(p.ts), conds.stacked);
  const int B = static_cast<int>(batch.x0.rows());
  return ci_value(ci_combination(eps4, B), p.ts, schedule, false);
}

LossBreakdown loss_total(const NoisePredictor& model, const TrainBatch& batch,
                         const NoiseSchedule& schedule, const TrainingConfig& config, Rng& rng) {
  config.validate();
  LossBreakdown out;
  out.score_loss = loss_score(model, batch, schedule, rng);
  out.ci_loss = loss_ci(model, batch, schedule, rng, config.ci_mode);
  out.total = objective_total(config.objective, out.score_loss, out.ci_loss, config);
  return out;
}

namespace {

// measure-only CI for vanilla runs uses a batch prefix; the full batch only
// pays for the four evaluations when the gradient needs them
constexpr int kVanillaCiRows = 64;

// rows [0, rows) of the perturbation stacked four times with the CI
// condition blocks
struct CiEval {
  Mat x4;
  std::vector<int> t4;
  std::vector<ConditionVector> conds4;
};

CiEval ci_eval_inputs(const Perturbation& p, const CiConds& conds, int B, int rows) {
  CiEval out;
  out.x4.resize(4 * rows, p.x_t.cols());
  out.t4.reserve(4 * rows);
  out.conds4.reserve(4 * rows);
  for (int k = 0; k < 4; ++k) {
    out.x4.middleRows(k * rows, rows) = p.x_t.topRows(rows);
    for (int b = 0; b < rows; ++b) {
      out.t4.push_back(p.ts[b]);
      out.conds4.push_back(conds.stacked[k * B + b]);
    }
  }
  return out;
}

}  // namespace

LossBreakdown train_step_losses(ScoreModel& model, const TrainBatch& raw_batch,
                                const NoiseSchedule& schedule, const TrainingConfig& config,
                                Rng& rng, Vec* grad) {
  const int B = static_cast<int>(raw_batch.x0.rows());
  const int n = static_cast<int>(raw_batch.x0.cols());
  const bool optimize_ci = config.objective != Objective::Vanilla;
  if (optimize_ci && model.attribute_count() < 2)
    throw ConfigError("conditional-independence objective requires n >= 2 attributes");

  std::vector<ConditionVector> masked(B);
  for (int b = 0; b < B; ++b) masked[b] = mask_condition(raw_batch.conds[b], config.p_uncond, rng);
  Perturbation p = draw_perturbation(raw_batch.x0, schedule, rng);
  const bool measure_ci = model.attribute_count() >= 2;
  CiConds conds;
  if (measure_ci) conds = build_ci_conds(raw_batch.conds, config.ci_mode, rng);
  const int ci_rows = !measure_ci ? 0 : (optimize_ci ? B : std::min(B, kVanillaCiRows));

  const bool want_grad = grad != nullptr;
  const bool want_ci_grad = want_grad && optimize_ci;

  // forwards first: the bound objective needs both batch losses before the
  // backward seeds can be scaled
  ScoreModel::Cache score_cache;
  Mat eps_hat = model.forward_batch(p.x_t, p.ts, masked, want_grad ? &score_cache : nullptr);
  Mat residual = eps_hat - p.eps;
  const double score_loss = residual.squaredNorm() / B;

  ScoreModel::Cache ci_cache;
  Mat combo;
  std::vector<int> ci_ts;
  double ci_loss = 0.0;
  if (ci_rows > 0) {
    CiEval ci = ci_eval_inputs(p, conds, B, ci_rows);
    Mat eps4 = model.forward_batch(ci.x4, ci.t4, ci.conds4, want_ci_grad ? &ci_cache : nullptr);
    combo = eps4.topRows(ci_rows) + eps4.middleRows(ci_rows, ci_rows) -
            eps4.middleRows(2 * ci_rows, ci_rows) - eps4.middleRows(3 * ci_rows, ci_rows);
    ci_ts = {p.ts.begin(), p.ts.begin() + ci_rows};
    ci_loss = ci_value(combo, ci_ts, schedule, config.ci_score_space);
  }

  if (want_grad) {
    double score_coeff = 1.0;
    double ci_coeff = config.lambda;
    if (config.objective == Objective::TheoreticalBound) {
      score_coeff = config.k1 / (2.0 * std::sqrt(std::max(score_loss, 1e-300)));
      ci_coeff = config.k2 / (2.0 * std::sqrt(std::max(ci_loss, 1e-300)));
    }
    model.backward_batch(score_cache, (2.0 * score_coeff / B) * residual, *grad);
    if (want_ci_grad) {
      Mat seed(ci_rows, n);
      for (int r = 0; r < ci_rows; ++r) {
        const double w = config.ci_score_space ? 1.0 / (1.0 - schedule.alpha_bar(ci_ts[r])) : 1.0;
        seed.row(r) = (2.0 * ci_coeff * w / B) * combo.row(r);
      }
      Mat dout4(4 * ci_rows, n);
      dout4.topRows(ci_rows) = seed;
      dout4.middleRows(ci_rows, ci_rows) = seed;
      dout4.middleRows(2 * ci_rows, ci_rows) = -seed;
      dout4.middleRows(3 * ci_rows, ci_rows) = -seed;
      model.backward_batch(ci_cache, dout4, *grad);
    }
  }

  LossBreakdown out;
  out.score_loss = score_loss;
  out.ci_loss = ci_loss;
  out.total = objective_total(config.objective, score_loss, ci_loss, config);
  return out;
}

std::vector<TrainRecord> train(ScoreModel& model, const Dataset& dataset,
                               const NoiseSchedule& schedule, const TrainingConfig& config,
                               const StepCallback& on_step) {
  config.validate();
  if (dataset.samples.empty()) throw ConstraintError("training dataset is empty");
  const int B = config.batch_size;
  const int n = model.dim();
  const int N = static_cast<int>(dataset.samples.size());

  Rng rng(config.seed);
  Vec grad = Vec::Zero(model.param_count());
  Vec adam_m = Vec::Zero(model.param_count());
  Vec adam_v = Vec::Zero(model.param_count());
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  std::vector<TrainRecord> history;
  history.reserve(config.steps);
  const auto start = std::chrono::steady_clock::now();

  TrainBatch batch;
  batch.x0.resize(B, n);
  batch.conds.resize(B);

  for (int step = 1; step <= config.steps; ++step) {
    for (int b = 0; b < B; ++b) {
      const LabeledSample& s = dataset.samples[rng.uniform_int(N)];
      batch.x0.row(b) = s.x.transpose();
      batch.conds[b] = ConditionVector(s.c.begin(), s.c.end());
    }

    grad.setZero();
    const LossBreakdown losses = train_step_losses(model, batch, schedule, config, rng, &grad);
    const double grad_norm = grad.norm();

    if (!std::isfinite(losses.total) || !std::isfinite(grad_norm)) {
      char msg[256];
      std::snprintf(msg, sizeof(msg),
                    "non-finite loss at step %d (score=%g, ci=%g, grad_norm=%g)", step,
                    losses.score_loss, losses.ci_loss, grad_norm);
      throw DivergenceError(msg);
    }

    // Adam with bias correction
    adam_m = beta1 * adam_m + (1.0 - beta1) * grad;
    adam_v = beta2 * adam_v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    model.params() -= (config.learning_rate / bc1) *
                      adam_m.cwiseQuotient(((adam_v / bc2).cwiseSqrt().array() + adam_eps).matrix());

    TrainRecord rec;
    rec.losses = losses;
    rec.losses.step = step;
    rec.grad_norm = grad_norm;
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (on_step) on_step(rec);
    history.push_back(std::move(rec));
  }
  return history;
}

void write_training_log(const std::string& path, const std::vector<TrainRecord>& records) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "step,score_loss,ci_loss,total,grad_norm,wall_ms\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.losses.step,
                  r.losses.score_loss, r.losses.ci_loss, r.losses.total, r.grad_norm, r.wall_ms);
    f << line;
  }
}

LambdaSuggestion suggest_lambda(const std::vector<TrainRecord>& vanilla_history) {
  if (vanilla_history.empty()) throw ConstraintError("empty history");
  const size_t N = vanilla_history.size();
  const size_t tail = std::max<size_t>(1, N / 10);
  double score = 0.0, ci = 0.0;
  for (size_t k = N - tail; k < N; ++k) {
    score += vanilla_history[k].losses.score_loss;
    ci += vanilla_history[k].losses.ci_loss;
  }
  score /= tail;
  ci /= tail;
  if (ci < 1e-12) return {0.0, true};
  return {score / ci, false};
}

}  // namespace coind
