#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coind/attribute_space.hpp"
#include "coind/schedule.hpp"

namespace coind {

/// The Gaussian-blob data process: one coordinate per attribute, blob mean
/// mu_c = (e_{1,c_1}, ..., e_{n,c_n}), isotropic noise sigma.
struct WorldConfig {
  AttributeSpace space;
  std::vector<std::vector<double>> embeddings;  // embeddings[i][v], strictly increasing in v
  double sigma = 0.3;

  WorldConfig(AttributeSpace space_, std::vector<std::vector<double>> embeddings_, double sigma_);

  int dim() const { return space.attribute_count(); }
  Vec blob_mean(const Composition& c) const;
};

/// Embeddings evenly spaced on [-1, 1] per attribute.
WorldConfig make_world(AttributeSpace space, double sigma = 0.3);

struct LabeledSample {
  Vec x;
  Composition c;
};

struct Dataset {
  WorldConfig world;
  SupportPattern support;
  std::vector<LabeledSample> samples;
  std::uint64_t seed = 0;
};

/// i.i.d. draws: c ~ support pmf, x ~ N(mu_c, sigma^2 I). Deterministic
/// given seed.
Dataset generate_dataset(const WorldConfig& world, const SupportPattern& support, int count,
                         std::uint64_t seed);

/// Normalized weights over compositions, kept sparse.
using CompositionWeights = std::vector<std::pair<Composition, double>>;

/// Restrict the support pmf to compositions matching every set entry of
/// `cond`, renormalized. A fully-null cond returns the support pmf itself;
/// a fully-set cond returns a point mass. Throws ConstraintError when the
/// restriction has zero mass (value unobserved under the support).
CompositionWeights weights_for_condition(const SupportPattern& support, const ConditionVector& cond);

/// The single-attribute restriction p_train(. | C_i = v); feeding the result
/// to analytic_score gives the exact marginal score a perfectly trained
/// vanilla model would learn.
CompositionWeights train_marginal_weights(const SupportPattern& support, int attribute, int value);

/// log sum_c w_c N(x; s mu_c, v I) with s = sqrt(abar_t) and
/// v = abar_t sigma^2 + (1 - abar_t); clean case (t absent): s = 1, v = sigma^2.
double analytic_log_density(const WorldConfig& world, const CompositionWeights& weights,
                            const Vec& x, std::optional<int> t = std::nullopt,
                            const NoiseSchedule* schedule = nullptr);

/// Gradient of analytic_log_density w.r.t. x (the exact mixture score).
Vec analytic_score(const WorldConfig& world, const CompositionWeights& weights, const Vec& x,
                   std::optional<int> t = std::nullopt, const NoiseSchedule* schedule = nullptr);

struct ClassifierResult {
  Composition labels;                       // per-attribute argmax, ties to smaller index
  std::vector<std::vector<double>> posteriors;  // posteriors[i][v]
};

/// Exact per-attribute Bayes classifier of the blob world: posterior over
/// values of attribute i proportional to exp(-(x_i - e_{i,v})^2 / 2 sigma^2).
ClassifierResult analytic_classifier(const WorldConfig& world, const Vec& x);

/// Dataset files: CSV with header x0..x{n-1},c0..c{n-1} plus a JSON sidecar
/// holding WorldConfig, SupportPattern and seed.
void write_dataset_csv(const Dataset& dataset, const std::string& csv_path,
                       const std::string& sidecar_path);
Dataset read_dataset_csv(const std::string& csv_path, const std::string& sidecar_path);

std::string world_to_json(const WorldConfig& world);
WorldConfig world_from_json(const std::string& text);

}  // namespace coind
