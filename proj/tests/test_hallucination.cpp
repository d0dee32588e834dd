#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fssl/hallucination.hpp"
#include "test_util.hpp"

using namespace fssl;
using fssl::test::basis;
using fssl::test::error_kind_of;

namespace {

PrototypeSet protos(std::vector<UnitVector> ps) { return PrototypeSet{std::move(ps)}; }

Vector walk(double t, const UnitVector& p_base, const UnitVector& v_k) {
  Vector v = geodesic_offset(t, p_base, v_k);
  axpy(1.0, v_k.view(), v);
  return v;
}

// First grid point at which the closest prototype changes, minus one step.
double dense_grid_t_star(const UnitVector& v_k, const UnitVector& p_base, const PrototypeSet& ps) {
  const std::size_t anchor = closest_prototype(v_k.view(), ps).index;
  for (int i = 1; i <= 10000; ++i) {
    const double t = i * 1e-4;
    if (closest_prototype(walk(t, p_base, v_k), ps).index != anchor) return t - 1e-4;
  }
  return 1.0;
}

}  // namespace

TEST_CASE("build_prototypes") {
  const UnitVector e1 = basis(2, 0), e2 = basis(2, 1);
  MemoryQueue q(4, 2);
  q.push(std::vector<UnitVector>{e1, e1, e2, e2});
  HallucinationConfig cfg;
  cfg.top_k = 4;
  cfg.prototypes = 2;
  RngStream rng(1, 0);
  PrototypeSet ps = build_prototypes(q, cfg, rng);
  REQUIRE(ps.size() == 2);
  std::sort(ps.prototypes.begin(), ps.prototypes.end(),
            [](const UnitVector& a, const UnitVector& b) { return a[0] > b[0]; });
  CHECK(ps.prototypes[0][0] == doctest::Approx(1.0));
  CHECK(ps.prototypes[1][1] == doctest::Approx(1.0));

  MemoryQueue distinct(3, 3);
  distinct.push(std::vector<UnitVector>{basis(3, 0), basis(3, 1), basis(3, 2)});
  cfg.top_k = cfg.prototypes = 3;
  const PrototypeSet each = build_prototypes(distinct, cfg, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    const UnitVector e = basis(3, i);
    CHECK(std::any_of(each.prototypes.begin(), each.prototypes.end(),
                      [&](const UnitVector& p) { return cosine_sim(p, e) > 1.0 - 1e-12; }));
  }

  cfg.top_k = 5;
  CHECK(error_kind_of([&] { build_prototypes(q, cfg, rng); }) == ErrorKind::InsufficientQueue);
}

TEST_CASE("closest_prototype tie rule") {
  const PrototypeSet two = protos({basis(3, 0), basis(3, 1)});
  CHECK(closest_prototype(basis(3, 0).view(), two).index == 0);
  CHECK(closest_prototype(basis(3, 1).view(), two).index == 1);
  const PrototypeSet three = protos({basis(3, 0), basis(3, 1), basis(3, 2)});
  CHECK(closest_prototype(normalize(Vector{1, 1, 0}).view(), three).index == 0);
  CHECK(closest_prototype(normalize(Vector{0, 1, 1}).view(), three).index == 1);
}

TEST_CASE("geodesic_offset endpoints and midpoint") {
  const UnitVector e1 = basis(3, 0), e2 = basis(3, 1);
  for (double v : geodesic_offset(0.0, e2, e1)) CHECK(v == doctest::Approx(0.0));
  const Vector end = walk(1.0, e2, e1);
  CHECK(fssl::test::max_abs_diff(end, e2.vec()) <= 1e-12);
  const Vector mid = walk(0.5, e2, e1);
  const double h = std::sqrt(2.0) / 2.0;
  CHECK(mid[0] == doctest::Approx(h).epsilon(1e-14));
  CHECK(mid[1] == doctest::Approx(h).epsilon(1e-14));
  CHECK(norm2(mid) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(error_kind_of([&] { geodesic_offset(0.5, e1, e1); }) == ErrorKind::DegenerateGeodesic);
  CHECK(error_kind_of([&] { geodesic_offset(0.5, basis(3, 0, -1.0), e1); }) == ErrorKind::DegenerateGeodesic);
}

TEST_CASE("geodesic stays on the sphere with monotone hardness") {
  RngStream rng(31, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const UnitVector a = fssl::test::random_unit(5, rng), b = fssl::test::random_unit(5, rng);
    double prev = 2.0;
    for (int i = 0; i <= 20; ++i) {
      const Vector v = walk(i / 20.0, b, a);
      CHECK(std::abs(norm2(v) - 1.0) <= 1e-9);
      const double s = dot(v, a.view());
      CHECK(s <= prev + 1e-12);
      prev = s;
    }
  }
}

TEST_CASE("search_t_star on two orthogonal prototypes") {
  HallucinationConfig cfg;
  const UnitVector e1 = basis(2, 0), e2 = basis(2, 1);
  const PrototypeSet ps = protos({e1, e2});
  const double t = search_t_star(e1, e2, ps, cfg);
  CHECK(std::abs(t - 0.5) <= cfg.refine_tol);
}

TEST_CASE("search_t_star toward the own prototype is 1") {
  HallucinationConfig cfg;
  const UnitVector v = normalize(Vector{1.0, 0.3, 0.0});
  const PrototypeSet ps = protos({basis(3, 0), basis(3, 1)});
  CHECK(search_t_star(v, basis(3, 0), ps, cfg) == 1.0);
}

TEST_CASE("search_t_star matches a dense grid") {
  HallucinationConfig cfg;
  RngStream rng(32, 0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<UnitVector> p;
    const std::size_t l = 2 + rng.index(4);
    for (std::size_t i = 0; i < l; ++i) p.push_back(fssl::test::random_unit(4, rng));
    const PrototypeSet ps = protos(p);
    const UnitVector v = fssl::test::random_unit(4, rng);
    const UnitVector& base = ps.prototypes[rng.index(l)];
    const double searched = search_t_star(v, base, ps, cfg);
    CHECK(std::abs(searched - dense_grid_t_star(v, base, ps)) <= 2 * cfg.refine_tol);
  }

  // One competing prototype orthogonal to both endpoints of the arc.
  const PrototypeSet ps = protos({basis(3, 0), normalize(Vector{0.2, 1.0, 0.0}), basis(3, 2)});
  const UnitVector v = normalize(Vector{1.0, 0.1, 0.0});
  CHECK(std::abs(search_t_star(v, ps.prototypes[1], ps, cfg) - dense_grid_t_star(v, ps.prototypes[1], ps)) <=
        2 * cfg.refine_tol);
}

TEST_CASE("generate_positives obeys the selector and is seeded") {
  HallucinationConfig cfg;
  cfg.candidates = 16;
  RngStream data(33, 0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<UnitVector> p;
    for (int i = 0; i < 5; ++i) p.push_back(fssl::test::random_unit(6, data));
    const PrototypeSet ps = protos(p);
    const UnitVector v = fssl::test::random_unit(6, data);
    const std::size_t anchor = closest_prototype(v.view(), ps).index;
    RngStream a(trial, 1), b(trial, 1);
    const HallucinatedPositives ha = generate_positives(v, ps, cfg, a);
    const HallucinatedPositives hb = generate_positives(v, ps, cfg, b);
    CHECK(ha.positives == hb.positives);
    CHECK(ha.selected + ha.discarded + ha.skipped == cfg.candidates);
    for (const auto& h : ha.positives) {
      CHECK(closest_prototype(h.view(), ps).index == anchor);
      CHECK(std::abs(norm2(h.view()) - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("generate_positives at vanishing hardness") {
  HallucinationConfig cfg;
  cfg.lambda = 1e-9;
  const PrototypeSet ps = protos({basis(3, 0), basis(3, 1), basis(3, 2)});
  const UnitVector v = normalize(Vector{1.0, 0.5, 0.2});
  RngStream rng(34, 0);
  const HallucinatedPositives h = generate_positives(v, ps, cfg, rng);
  CHECK(h.selected == cfg.candidates);
  for (const auto& p : h.positives) CHECK(cosine_sim(p, v) == doctest::Approx(1.0).epsilon(1e-9));
}
