#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "coind/common.hpp"

namespace coind {

/// An ordered attribute tuple; entry i is a value index in [0, m_i).
using Composition = std::vector<int>;

/// The product space C = C_1 x ... x C_n of n categorical attributes.
class AttributeSpace {
 public:
  explicit AttributeSpace(std::vector<int> cardinalities);

  int attribute_count() const { return static_cast<int>(cards_.size()); }
  int cardinality(int attribute) const { return cards_.at(attribute); }
  const std::vector<int>& cardinalities() const { return cards_; }

  /// Total number of compositions, prod m_i.
  std::int64_t composition_count() const;

  /// Row-major linear index of a composition.
  std::int64_t index_of(const Composition& c) const;
  Composition composition_at(std::int64_t index) const;

  bool contains(const Composition& c) const;

  bool operator==(const AttributeSpace& other) const { return cards_ == other.cards_; }

 private:
  std::vector<int> cards_;
};

enum class SupportKind {
  Uniform,
  NonUniform,
  DiagonalPartial,
  OrthogonalPartial,
  GaussianLike,
  Custom,
};

std::string to_string(SupportKind kind);
SupportKind support_kind_from_string(const std::string& name);

/// Parameters for the kinds that take any. Unused fields are ignored.
struct SupportParams {
  // NonUniform band/off-band probabilities. If b is not given it is derived
  // from the counting identity (2n-1) a + (n-1)^2 b = 1.
  std::optional<double> a;
  std::optional<double> b;
  // GaussianLike: per-attribute center (defaults to (m_i-1)/2) and shared width.
  std::vector<double> mu;
  double s = 1.0;
  // Custom: explicit cells.
  std::vector<std::pair<Composition, double>> cells;
};

/// A pmf over compositions. Dense storage up to 1e6 cells, sparse beyond.
class SupportPattern {
 public:
  SupportPattern(AttributeSpace space, SupportKind kind,
                 std::vector<std::pair<Composition, double>> cells);

  const AttributeSpace& space() const { return space_; }
  SupportKind kind() const { return kind_; }

  double pmf(const Composition& c) const;

  /// Nonzero cells in linear-index order.
  const std::vector<std::pair<Composition, double>>& nonzero_cells() const { return cells_; }

  bool is_dense() const { return !dense_.empty(); }

 private:
  AttributeSpace space_;
  SupportKind kind_;
  std::vector<std::pair<Composition, double>> cells_;  // sorted by linear index
  std::vector<double> dense_;                          // empty when sparse
  std::map<std::int64_t, double> sparse_;
};

/// Builds one of the analytic support families over `space`.
/// Throws ConstraintError naming the violated inequality, or ShapeError for
/// an unsupported (kind, space) pairing.
SupportPattern build_support(const AttributeSpace& space, SupportKind kind,
                             const SupportParams& params = {});

/// True iff every value of every attribute appears in some positive-mass
/// composition (the projections of the observed support reconstruct C).
bool check_support_cover(const SupportPattern& support);

/// Draws one composition according to the pmf.
Composition sample_composition(const SupportPattern& support, Rng& rng);

/// All zero-mass compositions. Empty for full-support kinds.
std::vector<Composition> unseen_compositions(const SupportPattern& support);

/// JSON (de)serialization; probabilities round-trip bit-exactly.
std::string support_to_json(const SupportPattern& support);
SupportPattern support_from_json(const std::string& text);

}  // namespace coind
