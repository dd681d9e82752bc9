#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "coind/composition.hpp"
#include "coind/score_model.hpp"
#include "coind/synth_world.hpp"

namespace coind {

/// Estimation scheme for the classifier implicit in a trained model: a few
/// timesteps from a mid-schedule band, a few noise draws per timestep, all
/// (t, eps) draws shared across condition hypotheses (common random numbers).
struct ImplicitClassifierConfig {
  int timestep_count = 5;
  double band_lo = 0.3;  // fraction of T
  double band_hi = 0.6;
  int noise_draws_per_t = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// p(C_i = v | x) from noise-prediction energies: softmax over values of
/// -mean_(t,eps) ||eps - eps_theta(x_t, t, c^i(v))||^2.
std::vector<double> implicit_marginal_pmf(const NoisePredictor& model,
                                          const NoiseSchedule& schedule, const Vec& x,
                                          int attribute, const std::vector<int>& cardinalities,
                                          const ImplicitClassifierConfig& cfg);

/// Joint pmf over value pairs of attributes (i, j), same shared draws.
Mat implicit_joint_pmf(const NoisePredictor& model, const NoiseSchedule& schedule, const Vec& x,
                       int attr_i, int attr_j, const std::vector<int>& cardinalities,
                       const ImplicitClassifierConfig& cfg);

/// Jensen-Shannon divergence in nats between two discrete distributions of
/// equal size, with 0 log 0 = 0. Bounded by ln 2.
double js_divergence(const std::vector<double>& p, const std::vector<double>& q);

/// Mean over evaluation points of D_JS(joint || product of marginals) for
/// attribute pair (i, j); pair defaults to the first two attributes.
double jsd_violation(const NoisePredictor& model, const NoiseSchedule& schedule,
                     const std::vector<Vec>& xs, const std::vector<int>& cardinalities,
                     const ImplicitClassifierConfig& cfg,
                     std::optional<std::pair<int, int>> pair = std::nullopt);

double jsd_violation(const NoisePredictor& model, const NoiseSchedule& schedule,
                     const Dataset& dataset, const ImplicitClassifierConfig& cfg,
                     std::optional<std::pair<int, int>> pair = std::nullopt);

/// A logical task: the expression to sample from plus the attribute tuples
/// that satisfy it.
struct Relation {
  std::string name;
  ExprPtr expr;
  std::set<Composition> allowed;
};

using RelationSampler = std::function<std::vector<Vec>(const Relation&, int count)>;
using LabelClassifier = std::function<Composition(const Vec&)>;

/// Fraction of generated samples whose classified attributes satisfy their
/// relation, averaged over relations with equal weight. A relation whose
/// sampler throws is skipped and reported via `skipped`.
double conformity_score(const RelationSampler& sampler, const std::vector<Relation>& relations,
                        const LabelClassifier& classifier, int samples_per_relation,
                        std::vector<std::string>* skipped = nullptr);

/// Shannon entropy (bits) of the empirical distribution of classified values
/// of one attribute.
double diversity_entropy(const std::vector<Vec>& samples, const LabelClassifier& classifier,
                         int attribute, int cardinality);

}  // namespace coind
