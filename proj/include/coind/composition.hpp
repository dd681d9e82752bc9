#pragma once

#include <memory>
#include <string>
#include <vector>

#include "coind/attribute_space.hpp"
#include "coind/schedule.hpp"

namespace coind {

/// Exact rational with int64 numerator/denominator; plan coefficients stay
/// in this form so conservation checks are exact.
class Rational {
 public:
  Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1);

  static Rational from_double(double v);          // exact dyadic decomposition
  static Rational from_decimal(const std::string& text);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  Rational operator+(const Rational& o) const;
  Rational operator-(const Rational& o) const;
  Rational operator*(const Rational& o) const;
  Rational operator-() const { return Rational(-num_, den_); }
  bool operator==(const Rational& o) const { return num_ == o.num_ && den_ == o.den_; }
  bool is_zero() const { return num_ == 0; }

 private:
  void normalize();
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

struct UnsupportedFragmentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParseError : std::invalid_argument {
  ParseError(const std::string& message, int position)
      : std::invalid_argument(message), position(position) {}
  int position = 0;
};

/// Expression AST over Literal / Not / And / Or / Weighted.
struct CompositionExpr {
  enum class Kind { Literal, Not, And, Or, Weighted };
  Kind kind = Kind::Literal;
  int attribute = 0;  // Literal
  int value = 0;      // Literal
  Rational gamma;     // Weighted
  std::vector<std::shared_ptr<const CompositionExpr>> children;
};
using ExprPtr = std::shared_ptr<const CompositionExpr>;

ExprPtr make_literal(int attribute, int value);
ExprPtr make_not(ExprPtr e);
ExprPtr make_and(std::vector<ExprPtr> children);
ExprPtr make_or(std::vector<ExprPtr> children);
ExprPtr make_weighted(Rational gamma, ExprPtr e);

std::string expr_to_string(const CompositionExpr& expr);

/// Parses the CLI surface syntax, e.g. `c1=4 & !(c2=2 | c2=3)` and
/// `c1=0 & 6*(c2=1)`. Attributes are 1-based in the syntax. Throws
/// ParseError with the offending position.
ExprPtr parse_expression(const std::string& text);

struct PlanTerm {
  ConditionVector cond;  // kNull entries for unconditioned attributes
  Rational coeff;
};

/// Weighted list of conditional score terms; the unconditional (fully-null)
/// contribution is folded in as an ordinary term. Coefficients over all
/// terms sum to exactly 1.
struct GuidancePlan {
  std::vector<PlanTerm> terms;

  Rational coefficient_sum() const;
  const PlanTerm* find(const ConditionVector& cond) const;
};

/// Compiles an expression in the supported fragment into a guidance plan.
/// NOT applies only to a literal or an OR of literals over one attribute;
/// a multi-literal NOT splits the enclosing conjunction into one composite
/// event per negated literal before the AND combination (the event-level
/// algebra behind compositions like `4 & !(G | P)`). Bare OR outside NOT is
/// out of fragment.
GuidancePlan compile(const CompositionExpr& expr, const AttributeSpace& space);

std::string plan_to_json(const GuidancePlan& plan);

/// Classifier-free guidance mix: (1 - gamma) * uncond + gamma * cond. The
/// equivalent plan form is {(cond): gamma, (null): 1 - gamma}.
Vec cfg_mix(const Vec& uncond_score, const Vec& cond_score, double gamma);

/// The plan realizing cfg_mix(gamma) for a full condition vector.
GuidancePlan cfg_plan(const ConditionVector& cond, const Rational& gamma);

}  // namespace coind
