#include <doctest.h>

#include <cmath>
#include <set>

#include "coind/attribute_space.hpp"

using namespace coind;

TEST_CASE("space invariants") {
  CHECK_THROWS_AS(AttributeSpace({}), ConstraintError);
  CHECK_THROWS_AS(AttributeSpace({2, 1}), ConstraintError);
  AttributeSpace s({3, 4, 5});
  CHECK(s.composition_count() == 60);
  CHECK(s.index_of({2, 3, 4}) == 59);
  CHECK(s.composition_at(59) == Composition{2, 3, 4});
  for (std::int64_t i = 0; i < s.composition_count(); ++i) CHECK(s.index_of(s.composition_at(i)) == i);
}

TEST_CASE("uniform support: every cell 1/(ni nj)") {
  AttributeSpace s({10, 10});
  SupportPattern sup = build_support(s, SupportKind::Uniform);
  for (std::int64_t i = 0; i < s.composition_count(); ++i)
    CHECK(sup.pmf(s.composition_at(i)) == doctest::Approx(0.01).epsilon(1e-14));
}

TEST_CASE("orthogonal 2x2: corner cells 1/3, (1,1) zero") {
  SupportPattern sup = build_support(AttributeSpace({2, 2}), SupportKind::OrthogonalPartial);
  CHECK(sup.pmf({0, 0}) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(sup.pmf({0, 1}) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(sup.pmf({1, 0}) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(sup.pmf({1, 1}) == 0.0);
}

TEST_CASE("non-uniform band structure and counting identity") {
  const int n = 10;
  const double a = 0.9 / 19.0;
  const double b = (1.0 - 19.0 * a) / 81.0;
  SupportParams params;
  params.a = a;
  SupportPattern sup = build_support(AttributeSpace({n, n}), SupportKind::NonUniform, params);

  int band_cells = 0, off_cells = 0;
  double total = 0.0;
  for (int c1 = 0; c1 < n; ++c1)
    for (int c2 = 0; c2 < n; ++c2) {
      const double p = sup.pmf({c1, c2});
      total += p;
      if (c2 <= c1 && c1 <= c2 + 1) {
        CHECK(p == doctest::Approx(a).epsilon(1e-14));
        ++band_cells;
      } else {
        CHECK(p == doctest::Approx(b).epsilon(1e-12));
        ++off_cells;
      }
    }
  CHECK(band_cells == 2 * n - 1);
  CHECK(off_cells == (n - 1) * (n - 1));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
  // (2n-1) a + (n-1)^2 b = 1
  CHECK(19.0 * a + 81.0 * b == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("non-uniform parameter constraints") {
  AttributeSpace s({10, 10});
  SupportParams p;
  SUBCASE("missing a") { CHECK_THROWS_AS(build_support(s, SupportKind::NonUniform, p), ConstraintError); }
  SUBCASE("a above 1/(2n-1)") {
    p.a = 0.06;  // > 1/19
    CHECK_THROWS_WITH_AS(build_support(s, SupportKind::NonUniform, p),
                         doctest::Contains("a <= 1/(2n-1)"), ConstraintError);
  }
  SUBCASE("a below uniform") {
    p.a = 0.005;  // < 1/100 makes b negative too, a-bound reported first
    CHECK_THROWS_AS(build_support(s, SupportKind::NonUniform, p), ConstraintError);
  }
  SUBCASE("identity violated by explicit b") {
    p.a = 0.9 / 19.0;
    p.b = 0.01;
    CHECK_THROWS_WITH_AS(build_support(s, SupportKind::NonUniform, p),
                         doctest::Contains("(2n-1)a + (n-1)^2 b = 1"), ConstraintError);
  }
  SUBCASE("shape: needs two equal attributes") {
    p.a = 0.9 / 19.0;
    CHECK_THROWS_AS(build_support(AttributeSpace({10, 9}), SupportKind::NonUniform, p), ShapeError);
    CHECK_THROWS_AS(build_support(AttributeSpace({4, 4, 4}), SupportKind::DiagonalPartial, {}),
                    ShapeError);
  }
}

TEST_CASE("support cover") {
  CHECK(check_support_cover(build_support(AttributeSpace({10, 10}), SupportKind::DiagonalPartial)));
  CHECK(check_support_cover(build_support(AttributeSpace({2, 2}), SupportKind::OrthogonalPartial)));
  CHECK(check_support_cover(build_support(AttributeSpace({10, 10}), SupportKind::Uniform)));

  SupportParams p;
  p.cells = {{{0, 0}, 1.0}};
  CHECK_FALSE(check_support_cover(build_support(AttributeSpace({2, 2}), SupportKind::Custom, p)));

  // zeroing out an entire attribute value breaks the cover
  SupportParams q;
  q.cells = {{{0, 0}, 0.5}, {{1, 0}, 0.5}};  // value 1 of attribute 2 never appears
  CHECK_FALSE(check_support_cover(build_support(AttributeSpace({2, 2}), SupportKind::Custom, q)));
}

TEST_CASE("unseen compositions partition the space") {
  SUBCASE("orthogonal 2x2") {
    auto sup = build_support(AttributeSpace({2, 2}), SupportKind::OrthogonalPartial);
    auto unseen = unseen_compositions(sup);
    REQUIRE(unseen.size() == 1);
    CHECK(unseen[0] == Composition{1, 1});
  }
  SUBCASE("uniform has none") {
    auto sup = build_support(AttributeSpace({3, 3}), SupportKind::Uniform);
    CHECK(unseen_compositions(sup).empty());
  }
  SUBCASE("diagonal 3x3 matches the band rule") {
    auto sup = build_support(AttributeSpace({3, 3}), SupportKind::DiagonalPartial);
    // independent enumeration of cells violating c2 <= c1 <= c2+1
    std::set<Composition> expected;
    for (int c1 = 0; c1 < 3; ++c1)
      for (int c2 = 0; c2 < 3; ++c2)
        if (!(c2 <= c1 && c1 <= c2 + 1)) expected.insert({c1, c2});
    auto unseen = unseen_compositions(sup);
    CHECK(std::set<Composition>(unseen.begin(), unseen.end()) == expected);
  }
  SUBCASE("disjoint union over all built-ins") {
    for (auto kind : {SupportKind::Uniform, SupportKind::OrthogonalPartial,
                      SupportKind::DiagonalPartial}) {
      auto sup = build_support(AttributeSpace({4, 4}), kind);
      auto unseen = unseen_compositions(sup);
      std::set<std::int64_t> seen_idx;
      for (const auto& [c, prob] : sup.nonzero_cells()) seen_idx.insert(sup.space().index_of(c));
      for (const auto& c : unseen) CHECK(seen_idx.count(sup.space().index_of(c)) == 0);
      CHECK(static_cast<std::int64_t>(unseen.size() + seen_idx.size()) ==
            sup.space().composition_count());
    }
  }
}

TEST_CASE("pmf sums to one for all built-in kinds") {
  AttributeSpace s({6, 6});
  SupportParams nu;
  nu.a = 0.8 / 11.0;
  SupportParams gl;
  gl.s = 1.5;
  const std::vector<std::pair<SupportKind, SupportParams>> kinds = {
      {SupportKind::Uniform, {}},
      {SupportKind::OrthogonalPartial, {}},
      {SupportKind::DiagonalPartial, {}},
      {SupportKind::NonUniform, nu},
      {SupportKind::GaussianLike, gl},
  };
  for (const auto& [kind, params] : kinds) {
    auto sup = build_support(s, kind, params);
    double total = 0.0;
    for (const auto& [c, p] : sup.nonzero_cells()) total += p;
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("gaussian-like support factorizes and peaks at the center") {
  SupportParams p;
  p.s = 1.0;
  auto sup = build_support(AttributeSpace({5, 5}), SupportKind::GaussianLike, p);
  CHECK(sup.pmf({2, 2}) > sup.pmf({0, 0}));
  CHECK(sup.pmf({2, 2}) > sup.pmf({4, 4}));
  // symmetric around the default center
  CHECK(sup.pmf({1, 2}) == doctest::Approx(sup.pmf({3, 2})).epsilon(1e-12));
  CHECK(check_support_cover(sup));
}

TEST_CASE("sampling follows the pmf") {
  SUBCASE("uniform 2x2 frequencies within the CLT bound") {
    auto sup = build_support(AttributeSpace({2, 2}), SupportKind::Uniform);
    Rng rng(7);
    const int N = 1000000;
    std::map<Composition, int> counts;
    for (int i = 0; i < N; ++i) counts[sample_composition(sup, rng)]++;
    const double bound = 4.0 / std::sqrt(static_cast<double>(N));  // 0.004
    for (const auto& [c, cnt] : counts)
      CHECK(std::abs(cnt / static_cast<double>(N) - 0.25) <= bound);
  }
  SUBCASE("point mass always returns its cell") {
    SupportParams p;
    p.cells = {{{1, 0}, 1.0}};
    auto sup = build_support(AttributeSpace({2, 2}), SupportKind::Custom, p);
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) CHECK(sample_composition(sup, rng) == Composition{1, 0});
  }
  SUBCASE("orthogonal 2x2 never yields the unseen cell") {
    auto sup = build_support(AttributeSpace({2, 2}), SupportKind::OrthogonalPartial);
    Rng rng(11);
    for (int i = 0; i < 20000; ++i) CHECK(sample_composition(sup, rng) != Composition{1, 1});
  }
}

TEST_CASE("sparse storage beyond one million cells") {
  AttributeSpace big({10, 10, 10, 10, 10, 10, 10});  // 1e7 cells
  SupportParams p;
  p.cells = {{{0, 0, 0, 0, 0, 0, 0}, 0.5}, {{9, 9, 9, 9, 9, 9, 9}, 0.5}};
  auto sup = build_support(big, SupportKind::Custom, p);
  CHECK_FALSE(sup.is_dense());
  CHECK(sup.pmf({0, 0, 0, 0, 0, 0, 0}) == 0.5);
  CHECK(sup.pmf({1, 2, 3, 4, 5, 6, 7}) == 0.0);
  CHECK_FALSE(check_support_cover(sup));
}

TEST_CASE("json round-trip is bit-exact for probabilities") {
  SupportParams nu;
  nu.a = 0.9 / 19.0;
  auto sup = build_support(AttributeSpace({10, 10}), SupportKind::NonUniform, nu);
  auto restored = support_from_json(support_to_json(sup));
  CHECK(restored.kind() == sup.kind());
  REQUIRE(restored.nonzero_cells().size() == sup.nonzero_cells().size());
  for (size_t i = 0; i < sup.nonzero_cells().size(); ++i) {
    CHECK(restored.nonzero_cells()[i].first == sup.nonzero_cells()[i].first);
    // bit-exact
    CHECK(restored.nonzero_cells()[i].second == sup.nonzero_cells()[i].second);
  }
}
