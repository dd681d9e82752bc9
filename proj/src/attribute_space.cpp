#include "coind/attribute_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace coind {

namespace {
constexpr double kPmfSumTol = 1e-12;
constexpr std::int64_t kDenseLimit = 1000000;
}  // namespace

AttributeSpace::AttributeSpace(std::vector<int> cardinalities) : cards_(std::move(cardinalities)) {
  if (cards_.empty()) throw ConstraintError("attribute space requires n >= 1 attributes");
  for (int m : cards_) {
    if (m < 2) throw ConstraintError("attribute cardinality must satisfy m_i >= 2");
  }
}

std::int64_t AttributeSpace::composition_count() const {
  std::int64_t total = 1;
  for (int m : cards_) total *= m;
  return total;
}

std::int64_t AttributeSpace::index_of(const Composition& c) const {
  if (!contains(c)) throw ShapeError("composition outside attribute space");
  std::int64_t idx = 0;
  for (size_t i = 0; i < cards_.size(); ++i) idx = idx * cards_[i] + c[i];
  return idx;
}

Composition AttributeSpace::composition_at(std::int64_t index) const {
  Composition c(cards_.size());
  for (int i = static_cast<int>(cards_.size()) - 1; i >= 0; --i) {
    c[i] = static_cast<int>(index % cards_[i]);
    index /= cards_[i];
  }
  return c;
}

bool AttributeSpace::contains(const Composition& c) const {
  if (c.size() != cards_.size()) return false;
  for (size_t i = 0; i < cards_.size(); ++i) {
    if (c[i] < 0 || c[i] >= cards_[i]) return false;
  }
  return true;
}

std::string to_string(SupportKind kind) {
  switch (kind) {
    case SupportKind::Uniform: return "uniform";
    case SupportKind::NonUniform: return "non_uniform";
    case SupportKind::DiagonalPartial: return "diagonal_partial";
    case SupportKind::OrthogonalPartial: return "orthogonal_partial";
    case SupportKind::GaussianLike: return "gaussian_like";
    case SupportKind::Custom: return "custom";
  }
  return "custom";
}

SupportKind support_kind_from_string(const std::string& name) {
  if (name == "uniform") return SupportKind::Uniform;
  if (name == "non_uniform") return SupportKind::NonUniform;
  if (name == "diagonal_partial") return SupportKind::DiagonalPartial;
  if (name == "orthogonal_partial") return SupportKind::OrthogonalPartial;
  if (name == "gaussian_like") return SupportKind::GaussianLike;
  if (name == "custom") return SupportKind::Custom;
  throw ConfigError("unknown support kind: " + name);
}

SupportPattern::SupportPattern(AttributeSpace space, SupportKind kind,
                               std::vector<std::pair<Composition, double>> cells)
    : space_(std::move(space)), kind_(kind), cells_(std::move(cells)) {
  double sum = 0.0;
  for (auto& [c, p] : cells_) {
    if (!space_.contains(c)) throw ShapeError("support cell outside attribute space");
    if (p < 0.0) throw ConstraintError("pmf values must satisfy p >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kPmfSumTol)
    throw ConstraintError("pmf must sum to 1 within 1e-12, got " + std::to_string(sum));

  std::sort(cells_.begin(), cells_.end(),
            [&](const auto& a, const auto& b) { return space_.index_of(a.first) < space_.index_of(b.first); });
  // collapse duplicates
  std::vector<std::pair<Composition, double>> merged;
  for (auto& cell : cells_) {
    if (!merged.empty() && merged.back().first == cell.first)
      merged.back().second += cell.second;
    else
      merged.push_back(cell);
  }
  std::erase_if(merged, [](const auto& cell) { return cell.second == 0.0; });
  cells_ = std::move(merged);

  if (space_.composition_count() <= kDenseLimit) {
    dense_.assign(space_.composition_count(), 0.0);
    for (auto& [c, p] : cells_) dense_[space_.index_of(c)] = p;
  } else {
    for (auto& [c, p] : cells_) sparse_[space_.index_of(c)] = p;
  }
}

double SupportPattern::pmf(const Composition& c) const {
  if (!space_.contains(c)) throw ShapeError("composition outside attribute space");
  if (!dense_.empty()) return dense_[space_.index_of(c)];
  auto it = sparse_.find(space_.index_of(c));
  return it == sparse_.end() ? 0.0 : it->second;
}

namespace {

bool in_diagonal_band(int c1, int c2) { return c2 <= c1 && c1 <= c2 + 1; }

void require_two_equal_attributes(const AttributeSpace& space, const char* kind) {
  if (space.attribute_count() != 2 || space.cardinality(0) != space.cardinality(1))
    throw ShapeError(std::string(kind) + " support requires exactly 2 attributes of equal cardinality");
}

}  // namespace

SupportPattern build_support(const AttributeSpace& space, SupportKind kind,
                             const SupportParams& params) {
  std::vector<std::pair<Composition, double>> cells;
  const std::int64_t total = space.composition_count();

  switch (kind) {
    case SupportKind::Uniform: {
      const double p = 1.0 / static_cast<double>(total);
      for (std::int64_t i = 0; i < total; ++i) cells.emplace_back(space.composition_at(i), p);
      break;
    }
    case SupportKind::OrthogonalPartial: {
      // positive mass iff some attribute equals 0
      std::int64_t count = 0;
      for (std::int64_t i = 0; i < total; ++i) {
        Composition c = space.composition_at(i);
        if (std::any_of(c.begin(), c.end(), [](int v) { return v == 0; })) ++count;
      }
      const double p = 1.0 / static_cast<double>(count);
      for (std::int64_t i = 0; i < total; ++i) {
        Composition c = space.composition_at(i);
        if (std::any_of(c.begin(), c.end(), [](int v) { return v == 0; }))
          cells.emplace_back(std::move(c), p);
      }
      break;
    }
    case SupportKind::DiagonalPartial: {
      require_two_equal_attributes(space, "diagonal_partial");
      const int n = space.cardinality(0);
      const double p = 1.0 / static_cast<double>(2 * n - 1);
      for (int c1 = 0; c1 < n; ++c1)
        for (int c2 = 0; c2 < n; ++c2)
          if (in_diagonal_band(c1, c2)) cells.push_back({{c1, c2}, p});
      break;
    }
    case SupportKind::NonUniform: {
      require_two_equal_attributes(space, "non_uniform");
      const int n = space.cardinality(0);
      if (!params.a) throw ConstraintError("non_uniform support requires parameter a");
      const double a = *params.a;
      const double band = static_cast<double>(2 * n - 1);
      const double off = static_cast<double>(n - 1) * static_cast<double>(n - 1);
      const double b = params.b ? *params.b : (1.0 - band * a) / off;
      // Constraint family: 0 <= b <= 1/n^2 <= a <= 1/(2n-1), plus the
      // counting identity (2n-1) a + (n-1)^2 b = 1.
      const double unif = 1.0 / static_cast<double>(n) / static_cast<double>(n);
      if (a < unif - 1e-15) throw ConstraintError("non_uniform requires a >= 1/n^2");
      if (a > 1.0 / band + 1e-15) throw ConstraintError("non_uniform requires a <= 1/(2n-1)");
      if (b < 0.0) throw ConstraintError("non_uniform requires b >= 0");
      if (b > a) throw ConstraintError("non_uniform requires b <= a");
      if (std::abs(band * a + off * b - 1.0) > 1e-9)
        throw ConstraintError("non_uniform requires (2n-1)a + (n-1)^2 b = 1");
      for (int c1 = 0; c1 < n; ++c1)
        for (int c2 = 0; c2 < n; ++c2)
          cells.push_back({{c1, c2}, in_diagonal_band(c1, c2) ? a : b});
      break;
    }
    case SupportKind::GaussianLike: {
      // independent per-attribute discrete Gaussians, product across attributes
      if (params.s <= 0.0) throw ConstraintError("gaussian_like requires s > 0");
      const int n = space.attribute_count();
      std::vector<std::vector<double>> per_attr(n);
      for (int i = 0; i < n; ++i) {
        const int m = space.cardinality(i);
        const double mu = i < static_cast<int>(params.mu.size())
                              ? params.mu[i]
                              : 0.5 * static_cast<double>(m - 1);
        double norm = 0.0;
        per_attr[i].resize(m);
        for (int v = 0; v < m; ++v) {
          per_attr[i][v] = std::exp(-(v - mu) * (v - mu) / (2.0 * params.s * params.s));
          norm += per_attr[i][v];
        }
        for (int v = 0; v < m; ++v) per_attr[i][v] /= norm;
      }
      for (std::int64_t idx = 0; idx < total; ++idx) {
        Composition c = space.composition_at(idx);
        double p = 1.0;
        for (int i = 0; i < n; ++i) p *= per_attr[i][c[i]];
        cells.emplace_back(std::move(c), p);
      }
      // renormalize away accumulated rounding so the sum check passes exactly
      double sum = 0.0;
      for (auto& cell : cells) sum += cell.second;
      for (auto& cell : cells) cell.second /= sum;
      break;
    }
    case SupportKind::Custom: {
      cells = params.cells;
      break;
    }
  }
  return SupportPattern(space, kind, std::move(cells));
}

bool check_support_cover(const SupportPattern& support) {
  const auto& space = support.space();
  std::vector<std::set<int>> seen(space.attribute_count());
  for (const auto& [c, p] : support.nonzero_cells()) {
    for (int i = 0; i < space.attribute_count(); ++i) seen[i].insert(c[i]);
  }
  for (int i = 0; i < space.attribute_count(); ++i) {
    if (static_cast<int>(seen[i].size()) != space.cardinality(i)) return false;
  }
  return true;
}

Composition sample_composition(const SupportPattern& support, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  const auto& cells = support.nonzero_cells();
  for (const auto& [c, p] : cells) {
    acc += p;
    if (u < acc) return c;
  }
  return cells.back().first;
}

std::vector<Composition> unseen_compositions(const SupportPattern& support) {
  std::vector<Composition> out;
  const auto& space = support.space();
  const auto& cells = support.nonzero_cells();
  size_t cursor = 0;
  for (std::int64_t idx = 0; idx < space.composition_count(); ++idx) {
    if (cursor < cells.size() && space.index_of(cells[cursor].first) == idx) {
      ++cursor;
      continue;
    }
    out.push_back(space.composition_at(idx));
  }
  return out;
}

std::string support_to_json(const SupportPattern& support) {
  nlohmann::json j;
  j["cardinalities"] = support.space().cardinalities();
  j["kind"] = to_string(support.kind());
  j["params"] = nlohmann::json::object();
  nlohmann::json pmf = nlohmann::json::array();
  for (const auto& [c, p] : support.nonzero_cells()) pmf.push_back({c, p});
  j["pmf"] = pmf;
  return j.dump();
}

SupportPattern support_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  AttributeSpace space(j.at("cardinalities").get<std::vector<int>>());
  SupportKind kind = support_kind_from_string(j.at("kind").get<std::string>());
  std::vector<std::pair<Composition, double>> cells;
  for (const auto& entry : j.at("pmf")) {
    cells.emplace_back(entry.at(0).get<Composition>(), entry.at(1).get<double>());
  }
  return SupportPattern(std::move(space), kind, std::move(cells));
}

}  // namespace coind
