#include "coind/composition.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace coind {

namespace {

std::int64_t checked_narrow(__int128 v, const char* what) {
  if (v > std::numeric_limits<std::int64_t>::max() || v < std::numeric_limits<std::int64_t>::min())
    throw ConstraintError(std::string("rational overflow in ") + what);
  return static_cast<std::int64_t>(v);
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
  if (den_ == 0) throw ConstraintError("rational with zero denominator");
  normalize();
}

void Rational::normalize() {
  if (den_ < 0) {
    num_ = -num_;
    den_ = -den_;
  }
  const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
  if (g > 1) {
    num_ /= g;
    den_ /= g;
  }
  if (num_ == 0) den_ = 1;
}

Rational Rational::from_double(double v) {
  if (!std::isfinite(v)) throw ConstraintError("non-finite coefficient");
  int exp = 0;
  const double mant = std::frexp(v, &exp);  // v = mant * 2^exp, |mant| in [0.5, 1)
  const std::int64_t m = static_cast<std::int64_t>(std::ldexp(mant, 53));
  exp -= 53;
  if (exp >= 0) {
    if (exp > 10) throw ConstraintError("coefficient too large for exact rational");
    return Rational(m << exp, 1);
  }
  if (exp < -62) {
    // strip trailing zero bits of the mantissa first
    std::int64_t mm = m;
    int e = exp;
    while (mm != 0 && (mm & 1) == 0 && e < 0) {
      mm >>= 1;
      ++e;
    }
    if (e < -62) throw ConstraintError("coefficient denominator exceeds exact range");
    return Rational(mm, std::int64_t(1) << -e);
  }
  return Rational(m, std::int64_t(1) << -exp);
}

Rational Rational::from_decimal(const std::string& text) {
  const auto dot = text.find('.');
  if (dot == std::string::npos) return Rational(std::stoll(text), 1);
  const std::string whole = text.substr(0, dot);
  const std::string frac = text.substr(dot + 1);
  if (frac.size() > 17) throw ConstraintError("decimal coefficient too precise");
  std::int64_t den = 1;
  for (size_t i = 0; i < frac.size(); ++i) den *= 10;
  const std::int64_t w = whole.empty() || whole == "-" ? 0 : std::stoll(whole);
  std::int64_t f = frac.empty() ? 0 : std::stoll(frac);
  if (!whole.empty() && whole[0] == '-') f = -f;
  return Rational(checked_narrow(static_cast<__int128>(w) * den + f, "decimal"), den);
}

Rational Rational::operator+(const Rational& o) const {
  __int128 n = static_cast<__int128>(num_) * o.den_ + static_cast<__int128>(o.num_) * den_;
  __int128 d = static_cast<__int128>(den_) * o.den_;
  __int128 a = n < 0 ? -n : n, b = d;
  while (b != 0) {
    const __int128 r = a % b;
    a = b;
    b = r;
  }
  if (a > 1) {
    n /= a;
    d /= a;
  }
  return Rational(checked_narrow(n, "add"), checked_narrow(d, "add"));
}

Rational Rational::operator-(const Rational& o) const { return *this + (-o); }

Rational Rational::operator*(const Rational& o) const {
  const std::int64_t g1 = std::gcd(num_ < 0 ? -num_ : num_, o.den_);
  const std::int64_t g2 = std::gcd(o.num_ < 0 ? -o.num_ : o.num_, den_);
  const __int128 n = static_cast<__int128>(num_ / g1) * (o.num_ / g2);
  const __int128 d = static_cast<__int128>(den_ / g2) * (o.den_ / g1);
  return Rational(checked_narrow(n, "mul"), checked_narrow(d, "mul"));
}

ExprPtr make_literal(int attribute, int value) {
  auto e = std::make_shared<CompositionExpr>();
  e->kind = CompositionExpr::Kind::Literal;
  e->attribute = attribute;
  e->value = value;
  return e;
}

ExprPtr make_not(ExprPtr child) {
  auto e = std::make_shared<CompositionExpr>();
  e->kind = CompositionExpr::Kind::Not;
  e->children = {std::move(child)};
  return e;
}

ExprPtr make_and(std::vector<ExprPtr> children) {
  auto e = std::make_shared<CompositionExpr>();
  e->kind = CompositionExpr::Kind::And;
  e->children = std::move(children);
  return e;
}

ExprPtr make_or(std::vector<ExprPtr> children) {
  auto e = std::make_shared<CompositionExpr>();
  e->kind = CompositionExpr::Kind::Or;
  e->children = std::move(children);
  return e;
}

ExprPtr make_weighted(Rational gamma, ExprPtr child) {
  auto e = std::make_shared<CompositionExpr>();
  e->kind = CompositionExpr::Kind::Weighted;
  e->gamma = gamma;
  e->children = {std::move(child)};
  return e;
}

std::string expr_to_string(const CompositionExpr& expr) {
  std::ostringstream os;
  switch (expr.kind) {
    case CompositionExpr::Kind::Literal:
      os << "c" << expr.attribute + 1 << "=" << expr.value;
      break;
    case CompositionExpr::Kind::Not:
      os << "!(" << expr_to_string(*expr.children[0]) << ")";
      break;
    case CompositionExpr::Kind::And:
    case CompositionExpr::Kind::Or: {
      const char* op = expr.kind == CompositionExpr::Kind::And ? " & " : " | ";
      os << "(";
      for (size_t i = 0; i < expr.children.size(); ++i) {
        if (i) os << op;
        os << expr_to_string(*expr.children[i]);
      }
      os << ")";
      break;
    }
    case CompositionExpr::Kind::Weighted:
      os << expr.gamma.num();
      if (expr.gamma.den() != 1) os << "/" << expr.gamma.den();
      os << "*(" << expr_to_string(*expr.children[0]) << ")";
      break;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) {}

  ExprPtr parse() {
    ExprPtr e = parse_or();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) { throw ParseError(msg, static_cast<int>(pos_)); }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  ExprPtr parse_or() {
    std::vector<ExprPtr> parts{parse_and()};
    while (eat('|')) parts.push_back(parse_and());
    return parts.size() == 1 ? parts[0] : make_or(std::move(parts));
  }

  ExprPtr parse_and() {
    std::vector<ExprPtr> parts{parse_unary()};
    while (eat('&')) parts.push_back(parse_unary());
    return parts.size() == 1 ? parts[0] : make_and(std::move(parts));
  }

  ExprPtr parse_unary() {
    skip_ws();
    if (eat('!')) return make_not(parse_unary());
    if (pos_ < text_.size() &&
        (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
      // weight prefix: NUMBER '*' unary
      const std::string num = read_number();
      skip_ws();
      if (!eat('*')) fail("expected '*' after weight");
      Rational gamma = Rational::from_decimal(num);
      if (gamma.num() <= 0) fail("weight must be positive");
      return make_weighted(gamma, parse_unary());
    }
    return parse_primary();
  }

  ExprPtr parse_primary() {
    skip_ws();
    if (eat('(')) {
      ExprPtr e = parse_or();
      if (!eat(')')) fail("expected ')'");
      return e;
    }
    return parse_literal();
  }

  ExprPtr parse_literal() {
    skip_ws();
    if (peek() != 'c' && peek() != 'C') fail("expected attribute literal like c1=0");
    ++pos_;
    const std::string attr = read_digits("attribute index");
    skip_ws();
    if (!eat('=')) fail("expected '=' in literal");
    skip_ws();
    if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_])))
      fail("expected integer attribute value");
    const std::string value = read_digits("attribute value");
    const int a = std::stoi(attr);
    if (a < 1) fail("attribute indices are 1-based");
    return make_literal(a - 1, std::stoi(value));
  }

  std::string read_digits(const char* what) {
    skip_ws();
    size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == start) fail(std::string("expected ") + what);
    return text_.substr(start, pos_ - start);
  }

  std::string read_number() {
    size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    return text_.substr(start, pos_ - start);
  }

  const std::string& text_;
  size_t pos_ = 0;
};

}  // namespace

ExprPtr parse_expression(const std::string& text) { return Parser(text).parse(); }

// ---------------------------------------------------------------------------
// Compiler
// ---------------------------------------------------------------------------

Rational GuidancePlan::coefficient_sum() const {
  Rational sum(0);
  for (const auto& t : terms) sum = sum + t.coeff;
  return sum;
}

const PlanTerm* GuidancePlan::find(const ConditionVector& cond) const {
  for (const auto& t : terms)
    if (t.cond == cond) return &t;
  return nullptr;
}

namespace {

using PlanMap = std::map<ConditionVector, Rational>;

void add_term(PlanMap& plan, const ConditionVector& cond, const Rational& coeff) {
  auto [it, inserted] = plan.try_emplace(cond, coeff);
  if (!inserted) it->second = it->second + coeff;
}

void add_plan(PlanMap& into, const PlanMap& from, const Rational& scale) {
  for (const auto& [cond, coeff] : from) add_term(into, cond, scale * coeff);
}

void check_literal(const CompositionExpr& lit, const AttributeSpace& space) {
  if (lit.attribute < 0 || lit.attribute >= space.attribute_count())
    throw UnsupportedFragmentError("literal references unknown attribute c" +
                                   std::to_string(lit.attribute + 1));
  if (lit.value < 0 || lit.value >= space.cardinality(lit.attribute))
    throw UnsupportedFragmentError("literal value out of range for c" +
                                   std::to_string(lit.attribute + 1) + ": " +
                                   std::to_string(lit.value));
}

// Literals negated by a Not node: one for Not(literal), several (same
// attribute) for Not(Or(...)).
std::vector<const CompositionExpr*> negated_literals(const CompositionExpr& not_node,
                                                     const AttributeSpace& space) {
  const CompositionExpr& inner = *not_node.children.at(0);
  if (inner.kind == CompositionExpr::Kind::Literal) {
    check_literal(inner, space);
    return {&inner};
  }
  if (inner.kind == CompositionExpr::Kind::Or) {
    std::vector<const CompositionExpr*> lits;
    int attribute = -1;
    for (const auto& child : inner.children) {
      if (child->kind != CompositionExpr::Kind::Literal)
        throw UnsupportedFragmentError("NOT supports only literals or an OR of literals: " +
                                       expr_to_string(not_node));
      check_literal(*child, space);
      if (attribute == -1) attribute = child->attribute;
      if (child->attribute != attribute)
        throw UnsupportedFragmentError("NOT(OR) literals must share one attribute: " +
                                       expr_to_string(not_node));
      lits.push_back(child.get());
    }
    if (lits.empty()) throw UnsupportedFragmentError("empty OR under NOT");
    return lits;
  }
  throw UnsupportedFragmentError("NOT applies only to a literal or same-attribute OR: " +
                                 expr_to_string(not_node));
}

PlanMap compile_node(const CompositionExpr& expr, const AttributeSpace& space);

// AND of m event plans: sum of plans minus (m - 1) times the unconditional.
PlanMap and_of_events(const std::vector<PlanMap>& events, const AttributeSpace& space) {
  PlanMap out;
  for (const auto& event : events) add_plan(out, event, Rational(1));
  add_term(out, all_null(space.attribute_count()), Rational(-(static_cast<std::int64_t>(events.size()) - 1)));
  return out;
}

PlanMap compile_and(const std::vector<ExprPtr>& args, const AttributeSpace& space) {
  // flatten nested ANDs so conjunct order/grouping cannot matter
  std::vector<const CompositionExpr*> flat;
  std::vector<const CompositionExpr*> multi_nots;
  std::function<void(const CompositionExpr&)> visit = [&](const CompositionExpr& e) {
    if (e.kind == CompositionExpr::Kind::And) {
      for (const auto& c : e.children) visit(*c);
      return;
    }
    if (e.kind == CompositionExpr::Kind::Not && negated_literals(e, space).size() > 1) {
      multi_nots.push_back(&e);
      return;
    }
    flat.push_back(&e);
  };
  for (const auto& a : args) visit(*a);

  if (multi_nots.empty()) {
    std::vector<PlanMap> events;
    events.reserve(flat.size());
    for (const auto* e : flat) events.push_back(compile_node(*e, space));
    return and_of_events(events, space);
  }

  // A NOT over k literals splits the conjunction into k composite events,
  // each carrying every other conjunct plus one negated literal; events are
  // then AND-combined. Multiple multi-literal NOTs expand to the cross
  // product.
  std::vector<std::vector<const CompositionExpr*>> choices;
  for (const auto* mn : multi_nots) choices.push_back(negated_literals(*mn, space));

  std::vector<PlanMap> events;
  std::vector<size_t> idx(choices.size(), 0);
  while (true) {
    std::vector<PlanMap> conjuncts;
    for (const auto* e : flat) conjuncts.push_back(compile_node(*e, space));
    for (size_t k = 0; k < choices.size(); ++k) {
      PlanMap neg;
      const CompositionExpr* lit = choices[k][idx[k]];
      add_term(neg, only_set(space.attribute_count(), lit->attribute, lit->value), Rational(-1));
      add_term(neg, all_null(space.attribute_count()), Rational(2));
      conjuncts.push_back(std::move(neg));
    }
    events.push_back(and_of_events(conjuncts, space));
    // advance the cross-product index
    size_t k = 0;
    while (k < choices.size() && ++idx[k] == choices[k].size()) {
      idx[k] = 0;
      ++k;
    }
    if (k == choices.size()) break;
  }
  return and_of_events(events, space);
}

PlanMap compile_node(const CompositionExpr& expr, const AttributeSpace& space) {
  PlanMap plan;
  const int n = space.attribute_count();
  switch (expr.kind) {
    case CompositionExpr::Kind::Literal:
      check_literal(expr, space);
      add_term(plan, only_set(n, expr.attribute, expr.value), Rational(1));
      return plan;
    case CompositionExpr::Kind::Not: {
      auto lits = negated_literals(expr, space);
      if (lits.size() == 1) {
        add_term(plan, only_set(n, lits[0]->attribute, lits[0]->value), Rational(-1));
        add_term(plan, all_null(n), Rational(2));
        return plan;
      }
      // standalone multi-literal NOT: AND of the per-literal negation events
      std::vector<PlanMap> events;
      for (const auto* lit : lits) {
        PlanMap e;
        add_term(e, only_set(n, lit->attribute, lit->value), Rational(-1));
        add_term(e, all_null(n), Rational(2));
        events.push_back(std::move(e));
      }
      return and_of_events(events, space);
    }
    case CompositionExpr::Kind::And:
      return compile_and(expr.children, space);
    case CompositionExpr::Kind::Weighted: {
      if (expr.gamma.num() <= 0) throw UnsupportedFragmentError("weight must be positive");
      PlanMap inner = compile_node(*expr.children.at(0), space);
      // scale conditional terms; the unconditional coefficient compensates
      // to keep the total at exactly 1
      const ConditionVector null_cond = all_null(n);
      Rational cond_sum(0);
      for (const auto& [cond, coeff] : inner) {
        if (cond == null_cond) continue;
        add_term(plan, cond, expr.gamma * coeff);
        cond_sum = cond_sum + expr.gamma * coeff;
      }
      add_term(plan, null_cond, Rational(1) - cond_sum);
      return plan;
    }
    case CompositionExpr::Kind::Or:
      throw UnsupportedFragmentError("OR is supported only inside NOT: " + expr_to_string(expr));
  }
  throw UnsupportedFragmentError("unreachable expression kind");
}

}  // namespace

GuidancePlan compile(const CompositionExpr& expr, const AttributeSpace& space) {
  PlanMap map = compile_node(expr, space);
  GuidancePlan plan;
  for (auto& [cond, coeff] : map) {
    if (!coeff.is_zero()) plan.terms.push_back({cond, coeff});
  }
  // deterministic order: most-conditioned terms first, fully-null last
  std::stable_sort(plan.terms.begin(), plan.terms.end(), [](const PlanTerm& a, const PlanTerm& b) {
    const auto set_count = [](const ConditionVector& c) {
      return std::count_if(c.begin(), c.end(), [](int v) { return v != kNull; });
    };
    const auto sa = set_count(a.cond), sb = set_count(b.cond);
    if (sa != sb) return sa > sb;
    return a.cond < b.cond;
  });
  return plan;
}

std::string plan_to_json(const GuidancePlan& plan) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : plan.terms) {
    nlohmann::json cond = nlohmann::json::array();
    for (int v : t.cond) {
      if (v == kNull)
        cond.push_back(nullptr);
      else
        cond.push_back(v);
    }
    terms.push_back({{"cond", cond}, {"coeff", t.coeff.to_double()}});
  }
  return nlohmann::json{{"terms", terms}}.dump();
}

Vec cfg_mix(const Vec& uncond_score, const Vec& cond_score, double gamma) {
  if (uncond_score.size() != cond_score.size()) throw ShapeError("cfg_mix: size mismatch");
  return (1.0 - gamma) * uncond_score + gamma * cond_score;
}

GuidancePlan cfg_plan(const ConditionVector& cond, const Rational& gamma) {
  GuidancePlan plan;
  plan.terms.push_back({cond, gamma});
  const Rational rest = Rational(1) - gamma;
  if (!rest.is_zero()) plan.terms.push_back({all_null(static_cast<int>(cond.size())), rest});
  return plan;
}

}  // namespace coind
