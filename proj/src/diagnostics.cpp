#include "coind/diagnostics.hpp"

#include <algorithm>
#include <cmath>

namespace coind {

void ImplicitClassifierConfig::validate() const {
  if (timestep_count < 1) throw ConfigError("timestep_count must be >= 1");
  if (!(band_lo > 0.0 && band_hi < 1.0 && band_lo <= band_hi))
    throw ConfigError("timestep band must satisfy 0 < lo <= hi < 1");
  if (noise_draws_per_t < 1) throw ConfigError("noise_draws_per_t must be >= 1");
}

namespace {

struct Draw {
  int t;
  Vec eps;
};

// Shared (t, eps) draws; common random numbers across every condition
// hypothesis keep the estimator comparable across hypotheses.
std::vector<Draw> make_draws(const NoiseSchedule& schedule, int dim,
                             const ImplicitClassifierConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int lo = std::max(1, static_cast<int>(std::floor(cfg.band_lo * schedule.T)));
  const int hi = std::min(schedule.T, static_cast<int>(std::ceil(cfg.band_hi * schedule.T)));
  std::vector<Draw> draws;
  draws.reserve(static_cast<size_t>(cfg.timestep_count) * cfg.noise_draws_per_t);
  for (int k = 0; k < cfg.timestep_count; ++k) {
    const int t = lo + static_cast<int>(rng.uniform_int(hi - lo + 1));
    for (int d = 0; d < cfg.noise_draws_per_t; ++d) draws.push_back({t, rng.normal_vec(dim)});
  }
  return draws;
}

// energy[h] = mean over draws of ||eps - eps_theta(x_t, t, cond_h)||^2
std::vector<double> hypothesis_energies(const NoisePredictor& model, const NoiseSchedule& schedule,
                                        const Vec& x, const std::vector<ConditionVector>& hypotheses,
                                        const std::vector<Draw>& draws) {
  const int H = static_cast<int>(hypotheses.size());
  std::vector<double> energy(H, 0.0);
  for (const Draw& draw : draws) {
    const double abar = schedule.alpha_bar(draw.t);
    const Vec x_t = std::sqrt(abar) * x + std::sqrt(1.0 - abar) * draw.eps;
    // one batched pass over hypotheses for this draw
    Mat X(H, x.size());
    X.rowwise() = x_t.transpose();
    const std::vector<int> ts(H, draw.t);
    Mat eps_hat = model.predict_eps_batch(X, ts, hypotheses);
    for (int h = 0; h < H; ++h) energy[h] += (eps_hat.row(h).transpose() - draw.eps).squaredNorm();
  }
  for (double& e : energy) e /= static_cast<double>(draws.size());
  return energy;
}

std::vector<double> softmax_neg(const std::vector<double>& energy) {
  const double lowest = *std::min_element(energy.begin(), energy.end());
  std::vector<double> pmf(energy.size());
  double norm = 0.0;
  for (size_t i = 0; i < energy.size(); ++i) {
    pmf[i] = std::exp(lowest - energy[i]);
    norm += pmf[i];
  }
  for (double& p : pmf) p /= norm;
  return pmf;
}

}  // namespace

std::vector<double> implicit_marginal_pmf(const NoisePredictor& model,
                                          const NoiseSchedule& schedule, const Vec& x,
                                          int attribute, const std::vector<int>& cardinalities,
                                          const ImplicitClassifierConfig& cfg) {
  const int n = static_cast<int>(cardinalities.size());
  const int m = cardinalities.at(attribute);
  std::vector<ConditionVector> hypotheses;
  hypotheses.reserve(m);
  for (int v = 0; v < m; ++v) hypotheses.push_back(only_set(n, attribute, v));
  const auto draws = make_draws(schedule, static_cast<int>(x.size()), cfg);
  return softmax_neg(hypothesis_energies(model, schedule, x, hypotheses, draws));
}

Mat implicit_joint_pmf(const NoisePredictor& model, const NoiseSchedule& schedule, const Vec& x,
                       int attr_i, int attr_j, const std::vector<int>& cardinalities,
                       const ImplicitClassifierConfig& cfg) {
  const int n = static_cast<int>(cardinalities.size());
  const int mi = cardinalities.at(attr_i);
  const int mj = cardinalities.at(attr_j);
  std::vector<ConditionVector> hypotheses;
  hypotheses.reserve(static_cast<size_t>(mi) * mj);
  for (int v = 0; v < mi; ++v)
    for (int u = 0; u < mj; ++u) {
      ConditionVector c = all_null(n);
      c[attr_i] = v;
      c[attr_j] = u;
      hypotheses.push_back(std::move(c));
    }
  const auto draws = make_draws(schedule, static_cast<int>(x.size()), cfg);
  const auto pmf = softmax_neg(hypothesis_energies(model, schedule, x, hypotheses, draws));
  Mat joint(mi, mj);
  for (int v = 0; v < mi; ++v)
    for (int u = 0; u < mj; ++u) joint(v, u) = pmf[static_cast<size_t>(v) * mj + u];
  return joint;
}

double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("js_divergence: distributions differ in size");
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return acc;
}

double jsd_violation(const NoisePredictor& model, const NoiseSchedule& schedule,
                     const std::vector<Vec>& xs, const std::vector<int>& cardinalities,
                     const ImplicitClassifierConfig& cfg, std::optional<std::pair<int, int>> pair) {
  if (xs.empty()) throw ConstraintError("jsd_violation requires a nonempty evaluation set");
  const auto [ai, aj] = pair.value_or(std::pair<int, int>{0, 1});
  const int mi = cardinalities.at(ai);
  const int mj = cardinalities.at(aj);

  double total = 0.0;
  for (const Vec& x : xs) {
    const auto pi = implicit_marginal_pmf(model, schedule, x, ai, cardinalities, cfg);
    const auto pj = implicit_marginal_pmf(model, schedule, x, aj, cardinalities, cfg);
    const Mat joint = implicit_joint_pmf(model, schedule, x, ai, aj, cardinalities, cfg);
    std::vector<double> p, q;
    p.reserve(static_cast<size_t>(mi) * mj);
    q.reserve(static_cast<size_t>(mi) * mj);
    for (int v = 0; v < mi; ++v)
      for (int u = 0; u < mj; ++u) {
        p.push_back(joint(v, u));
        q.push_back(pi[v] * pj[u]);
      }
    total += js_divergence(p, q);
  }
  return total / static_cast<double>(xs.size());
}

double jsd_violation(const NoisePredictor& model, const NoiseSchedule& schedule,
                     const Dataset& dataset, const ImplicitClassifierConfig& cfg,
                     std::optional<std::pair<int, int>> pair) {
  std::vector<Vec> xs;
  xs.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) xs.push_back(s.x);
  return jsd_violation(model, schedule, xs, dataset.world.space.cardinalities(), cfg, pair);
}

double conformity_score(const RelationSampler& sampler, const std::vector<Relation>& relations,
                        const LabelClassifier& classifier, int samples_per_relation,
                        std::vector<std::string>* skipped) {
  if (relations.empty()) throw ConstraintError("conformity_score requires at least one relation");
  if (samples_per_relation < 1) throw ConstraintError("samples_per_relation must be >= 1");
  double acc = 0.0;
  int used = 0;
  for (const Relation& rel : relations) {
    std::vector<Vec> samples;
    try {
      samples = sampler(rel, samples_per_relation);
    } catch (const std::exception& e) {
      if (skipped != nullptr) skipped->push_back(rel.name + ": " + e.what());
      continue;
    }
    int hits = 0;
    for (const Vec& x : samples) {
      if (rel.allowed.count(classifier(x)) > 0) ++hits;
    }
    acc += static_cast<double>(hits) / static_cast<double>(samples.size());
    ++used;
  }
  if (used == 0) throw DivergenceError("every relation sampler failed");
  return acc / static_cast<double>(used);
}

double diversity_entropy(const std::vector<Vec>& samples, const LabelClassifier& classifier,
                         int attribute, int cardinality) {
  if (samples.empty()) throw ConstraintError("diversity_entropy requires samples");
  std::vector<int> counts(cardinality, 0);
  for (const Vec& x : samples) {
    const Composition labels = classifier(x);
    counts.at(labels.at(attribute))++;
  }
  double H = 0.0;
  for (int c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(samples.size());
    H -= p * std::log2(p);
  }
  return H;
}

}  // namespace coind
