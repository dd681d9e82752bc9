#include "coind/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace coind {

WorldConfig::WorldConfig(AttributeSpace space_, std::vector<std::vector<double>> embeddings_,
                         double sigma_)
    : space(std::move(space_)), embeddings(std::move(embeddings_)), sigma(sigma_) {
  if (sigma <= 0.0) throw ConstraintError("world requires sigma > 0");
  if (static_cast<int>(embeddings.size()) != space.attribute_count())
    throw ShapeError("one embedding list per attribute required");
  for (int i = 0; i < space.attribute_count(); ++i) {
    if (static_cast<int>(embeddings[i].size()) != space.cardinality(i))
      throw ShapeError("embedding list length must match attribute cardinality");
    for (size_t j = 1; j < embeddings[i].size(); ++j) {
      if (!(embeddings[i][j] > embeddings[i][j - 1]))
        throw ConstraintError("embeddings must be strictly increasing per attribute");
    }
  }
}

Vec WorldConfig::blob_mean(const Composition& c) const {
  Vec mu(dim());
  for (int i = 0; i < dim(); ++i) mu[i] = embeddings[i][c[i]];
  return mu;
}

WorldConfig make_world(AttributeSpace space, double sigma) {
  std::vector<std::vector<double>> emb(space.attribute_count());
  for (int i = 0; i < space.attribute_count(); ++i) {
    const int m = space.cardinality(i);
    emb[i].resize(m);
    for (int v = 0; v < m; ++v) emb[i][v] = -1.0 + 2.0 * v / static_cast<double>(m - 1);
  }
  return WorldConfig(std::move(space), std::move(emb), sigma);
}

Dataset generate_dataset(const WorldConfig& world, const SupportPattern& support, int count,
                         std::uint64_t seed) {
  if (!(support.space() == world.space)) throw ShapeError("support space does not match world space");
  if (count < 1) throw ConstraintError("dataset requires count >= 1");
  Rng rng(seed);
  Dataset ds{world, support, {}, seed};
  ds.samples.reserve(count);
  for (int k = 0; k < count; ++k) {
    Composition c = sample_composition(support, rng);
    Vec x = world.blob_mean(c) + world.sigma * rng.normal_vec(world.dim());
    ds.samples.push_back({std::move(x), std::move(c)});
  }
  return ds;
}

CompositionWeights weights_for_condition(const SupportPattern& support,
                                         const ConditionVector& cond) {
  if (static_cast<int>(cond.size()) != support.space().attribute_count())
    throw ShapeError("condition length must match attribute count");
  CompositionWeights out;
  double mass = 0.0;
  for (const auto& [c, p] : support.nonzero_cells()) {
    bool match = true;
    for (size_t i = 0; i < cond.size(); ++i) {
      if (cond[i] != kNull && cond[i] != c[i]) {
        match = false;
        break;
      }
    }
    if (match) {
      out.emplace_back(c, p);
      mass += p;
    }
  }
  if (mass <= 0.0)
    throw ConstraintError("condition selects zero training mass (support cover violated)");
  for (auto& [c, p] : out) p /= mass;
  return out;
}

CompositionWeights train_marginal_weights(const SupportPattern& support, int attribute, int value) {
  return weights_for_condition(support,
                               only_set(support.space().attribute_count(), attribute, value));
}

namespace {

void check_weights(const WorldConfig& world, const CompositionWeights& weights) {
  double sum = 0.0;
  for (const auto& [c, w] : weights) {
    if (!world.space.contains(c)) throw ShapeError("weight composition outside space");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConstraintError("composition weights must be normalized");
}

struct MixtureParams {
  double scale;     // sqrt(abar_t), 1 for clean
  double variance;  // abar_t sigma^2 + (1 - abar_t), sigma^2 for clean
};

MixtureParams mixture_params(const WorldConfig& world, std::optional<int> t,
                             const NoiseSchedule* schedule) {
  if (!t.has_value()) return {1.0, world.sigma * world.sigma};
  if (schedule == nullptr) throw ConstraintError("noisy analytic score requires a schedule");
  const double abar = schedule->alpha_bar(*t);
  return {std::sqrt(abar), abar * world.sigma * world.sigma + (1.0 - abar)};
}

}  // namespace

double analytic_log_density(const WorldConfig& world, const CompositionWeights& weights,
                            const Vec& x, std::optional<int> t, const NoiseSchedule* schedule) {
  check_weights(world, weights);
  const auto [scale, var] = mixture_params(world, t, schedule);
  const int d = world.dim();
  const double log_norm = -0.5 * d * std::log(2.0 * M_PI * var);
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(weights.size());
  for (const auto& [c, w] : weights) {
    if (w <= 0.0) {
      terms.push_back(-std::numeric_limits<double>::infinity());
      continue;
    }
    const Vec mu = scale * world.blob_mean(c);
    const double lt = std::log(w) + log_norm - (x - mu).squaredNorm() / (2.0 * var);
    terms.push_back(lt);
    max_term = std::max(max_term, lt);
  }
  double acc = 0.0;
  for (double lt : terms) acc += std::exp(lt - max_term);
  return max_term + std::log(acc);
}

Vec analytic_score(const WorldConfig& world, const CompositionWeights& weights, const Vec& x,
                   std::optional<int> t, const NoiseSchedule* schedule) {
  check_weights(world, weights);
  const auto [scale, var] = mixture_params(world, t, schedule);
  // responsibilities via log-sum-exp, then the posterior-mean identity
  // score = sum_c r_c (scale mu_c - x) / var
  std::vector<double> logits;
  logits.reserve(weights.size());
  double max_logit = -std::numeric_limits<double>::infinity();
  for (const auto& [c, w] : weights) {
    if (w <= 0.0) {
      logits.push_back(-std::numeric_limits<double>::infinity());
      continue;
    }
    const Vec mu = scale * world.blob_mean(c);
    const double l = std::log(w) - (x - mu).squaredNorm() / (2.0 * var);
    logits.push_back(l);
    max_logit = std::max(max_logit, l);
  }
  double norm = 0.0;
  for (double l : logits) norm += std::exp(l - max_logit);
  Vec score = Vec::Zero(world.dim());
  for (size_t k = 0; k < weights.size(); ++k) {
    const double r = std::exp(logits[k] - max_logit) / norm;
    if (r == 0.0) continue;
    score += r * (scale * world.blob_mean(weights[k].first) - x);
  }
  return score / var;
}

ClassifierResult analytic_classifier(const WorldConfig& world, const Vec& x) {
  if (x.size() != world.dim()) throw ShapeError("classifier input has wrong dimension");
  ClassifierResult res;
  res.labels.resize(world.dim());
  res.posteriors.resize(world.dim());
  const double inv2s2 = 1.0 / (2.0 * world.sigma * world.sigma);
  for (int i = 0; i < world.dim(); ++i) {
    const int m = world.space.cardinality(i);
    std::vector<double> logit(m);
    double best = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < m; ++v) {
      const double d = x[i] - world.embeddings[i][v];
      logit[v] = -d * d * inv2s2;
      best = std::max(best, logit[v]);
    }
    double norm = 0.0;
    for (int v = 0; v < m; ++v) norm += std::exp(logit[v] - best);
    res.posteriors[i].resize(m);
    int arg = 0;
    for (int v = 0; v < m; ++v) {
      res.posteriors[i][v] = std::exp(logit[v] - best) / norm;
      if (res.posteriors[i][v] > res.posteriors[i][arg]) arg = v;  // strict: ties keep smaller index
    }
    res.labels[i] = arg;
  }
  return res;
}

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string world_to_json(const WorldConfig& world) {
  nlohmann::json j;
  j["cardinalities"] = world.space.cardinalities();
  j["embeddings"] = world.embeddings;
  j["sigma"] = world.sigma;
  return j.dump();
}

WorldConfig world_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  return WorldConfig(AttributeSpace(j.at("cardinalities").get<std::vector<int>>()),
                     j.at("embeddings").get<std::vector<std::vector<double>>>(),
                     j.at("sigma").get<double>());
}

void write_dataset_csv(const Dataset& dataset, const std::string& csv_path,
                       const std::string& sidecar_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot open for writing: " + csv_path);
  const int n = dataset.world.dim();
  for (int i = 0; i < n; ++i) csv << "x" << i << ",";
  for (int i = 0; i < n; ++i) csv << "c" << i << (i + 1 < n ? "," : "");
  csv << "\n";
  for (const auto& s : dataset.samples) {
    for (int i = 0; i < n; ++i) csv << fmt17(s.x[i]) << ",";
    for (int i = 0; i < n; ++i) csv << s.c[i] << (i + 1 < n ? "," : "");
    csv << "\n";
  }
  if (!csv) throw IoError("write failed: " + csv_path);

  nlohmann::json side;
  side["world"] = nlohmann::json::parse(world_to_json(dataset.world));
  side["support"] = nlohmann::json::parse(support_to_json(dataset.support));
  side["seed"] = dataset.seed;
  std::ofstream sj(sidecar_path);
  if (!sj) throw IoError("cannot open for writing: " + sidecar_path);
  sj << side.dump(2) << "\n";
}

Dataset read_dataset_csv(const std::string& csv_path, const std::string& sidecar_path) {
  std::ifstream sj(sidecar_path);
  if (!sj) throw IoError("cannot open: " + sidecar_path);
  nlohmann::json side = nlohmann::json::parse(sj);
  WorldConfig world = world_from_json(side.at("world").dump());
  SupportPattern support = support_from_json(side.at("support").dump());

  std::ifstream csv(csv_path);
  if (!csv) throw IoError("cannot open: " + csv_path);
  std::string line;
  if (!std::getline(csv, line)) throw IoError("empty dataset file: " + csv_path);
  const int n = world.dim();
  Dataset ds{std::move(world), std::move(support), {}, side.at("seed").get<std::uint64_t>()};
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    LabeledSample s;
    s.x.resize(n);
    s.c.resize(n);
    for (int i = 0; i < n; ++i) {
      std::getline(ss, field, ',');
      s.x[i] = std::strtod(field.c_str(), nullptr);
    }
    for (int i = 0; i < n; ++i) {
      std::getline(ss, field, ',');
      s.c[i] = std::stoi(field);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace coind
