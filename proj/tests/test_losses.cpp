#include <doctest.h>

#include <cmath>

#include "fssl/encoder.hpp"
#include "fssl/losses.hpp"
#include "test_util.hpp"

using namespace fssl;
using fssl::test::basis;
using fssl::test::error_kind_of;

namespace {

MemoryQueue queue_of(std::size_t capacity, const std::vector<UnitVector>& keys) {
  MemoryQueue q(capacity, keys.front().size());
  q.push(keys);
  return q;
}

// Plain double loop, independent of the library's log-sum-exp.
double naive_info_nce(const Vector& vq, const UnitVector& pos, const std::vector<UnitVector>& negs, double tau) {
  double denom = std::exp(dot(vq, pos.view()) / tau);
  const double num = denom;
  for (const auto& n : negs) denom += std::exp(dot(vq, n.view()) / tau);
  return -std::log(num / denom);
}

}  // namespace

TEST_CASE("queue eviction order") {
  const UnitVector a = basis(3, 0), b = basis(3, 1), c = basis(3, 2), d = basis(3, 0, -1.0);

  MemoryQueue q2(2, 3);
  q2 = enqueue(q2, std::vector<UnitVector>{a});
  q2 = enqueue(q2, std::vector<UnitVector>{b, c});
  const auto e2 = q2.entries();
  REQUIRE(e2.size() == 2);
  CHECK(e2[0] == b);
  CHECK(e2[1] == c);

  const MemoryQueue same = enqueue(q2, std::vector<UnitVector>{});
  CHECK(same.entries() == q2.entries());

  MemoryQueue q3(3, 3);
  q3 = enqueue(q3, std::vector<UnitVector>{a, b, c, d});
  const auto e3 = q3.entries();
  REQUIRE(e3.size() == 3);
  CHECK(e3[0] == b);
  CHECK(e3[1] == c);
  CHECK(e3[2] == d);
  CHECK(q3.recent(1)[0] == d);
  CHECK(error_kind_of([&] { q3.push(basis(2, 0)); }) == ErrorKind::DimMismatch);
}

TEST_CASE("info_nce closed forms") {
  const UnitVector e1 = basis(3, 0), e2 = basis(3, 1), e3 = basis(3, 2);
  const LossResult r = info_nce(e1.view(), e1, queue_of(4, {e2, e3}), 1.0);
  CHECK(r.loss == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 2.0))).epsilon(1e-14));
  CHECK(r.loss == doctest::Approx(0.55144).epsilon(1e-5));

  const LossResult sym = info_nce(e1.view(), e1, queue_of(1, {e1}), 1.0);
  CHECK(sym.loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  CHECK(error_kind_of([&] { info_nce(e1.view(), e1, MemoryQueue(4, 3), 1.0); }) == ErrorKind::EmptyQueue);
  CHECK(error_kind_of([&] { info_nce(e1.view(), e1, queue_of(1, {e2}), 0.0); }) ==
        ErrorKind::NonPositiveTemperature);
}

TEST_CASE("info_nce agrees with a naive evaluation and is non-negative") {
  RngStream rng(21, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 + rng.index(8);
    std::vector<UnitVector> negs;
    for (std::size_t i = 0, n = 1 + rng.index(20); i < n; ++i) negs.push_back(fssl::test::random_unit(d, rng));
    const UnitVector q = fssl::test::random_unit(d, rng), pos = fssl::test::random_unit(d, rng);
    const double tau = rng.uniform(0.05, 2.0);
    const LossResult r = info_nce(q.view(), pos, queue_of(negs.size(), negs), tau);
    CHECK(r.loss == doctest::Approx(naive_info_nce(q.vec(), pos, negs, tau)).epsilon(1e-10));
    CHECK(r.loss >= 0.0);
  }
}

TEST_CASE("info_nce is stable at small temperature") {
  const UnitVector e1 = basis(2, 0), e2 = basis(2, 1);
  const LossResult r = info_nce(e1.view(), e2, queue_of(1, {e1}), 1e-3);
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss == doctest::Approx(1000.0).epsilon(1e-9));
  for (double g : r.grad_vq) CHECK(std::isfinite(g));
}

TEST_CASE("info_nce_batch equals the mean of single-query evaluations") {
  RngStream rng(22, 0);
  const std::size_t d = 6, n = 7;
  std::vector<UnitVector> negs;
  for (int i = 0; i < 11; ++i) negs.push_back(fssl::test::random_unit(d, rng));
  const MemoryQueue q = queue_of(8, negs);  // wraps, so storage order differs from age order
  std::vector<Vector> qs, ps;
  for (std::size_t i = 0; i < n; ++i) {
    qs.push_back(fssl::test::random_vector(d, rng));
    ps.push_back(fssl::test::random_unit(d, rng).vec());
  }
  const BatchLossResult b = info_nce_batch(rows_to_matrix(qs), rows_to_matrix(ps), q, 0.2);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const LossResult r = info_nce(qs[i], UnitVector::from_unit(ps[i]), q, 0.2);
    mean += r.loss / static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) CHECK(b.grad(i, j) == doctest::Approx(r.grad_vq[j] / n).epsilon(1e-10));
  }
  CHECK(b.loss == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("loss_he closed forms") {
  const UnitVector e1 = basis(2, 0), e2 = basis(2, 1), m2 = basis(2, 1, -1.0);
  const std::vector<UnitVector> self{e1};
  CHECK(loss_he(e1.view(), self, 0.5).loss == doctest::Approx(-2.0).epsilon(1e-15));
  const std::vector<UnitVector> pm{e2, m2};
  CHECK(loss_he(e1.view(), pm, 0.5).loss == doctest::Approx(0.0));
  CHECK(error_kind_of([&] { loss_he(e1.view(), std::vector<UnitVector>{}, 0.5); }) ==
        ErrorKind::NoSelectedPositives);
}

TEST_CASE("loss_bfe closed forms") {
  const UnitVector e1 = basis(3, 0), e2 = basis(3, 1), e3 = basis(3, 2);
  const std::vector<UnitVector> one{e1};
  CHECK(loss_bfe(e1.view(), one, queue_of(1, {e2}), 1.0).loss == doctest::Approx(-1.0).epsilon(1e-14));

  const std::vector<UnitVector> orth{e2, e3};
  CHECK(loss_bfe(e1.view(), orth, queue_of(2, {e2, e3}), 1.0).loss == doctest::Approx(0.0));
  const double m4 = loss_bfe(e1.view(), orth, queue_of(4, {e2, e3, e2, e3}), 1.0).loss;
  CHECK(m4 == doctest::Approx(-0.5 * std::log(2.0 / 4.0)).epsilon(1e-14));

  CHECK(error_kind_of([&] { loss_bfe(e1.view(), std::vector<UnitVector>{}, queue_of(1, {e2}), 1.0); }) ==
        ErrorKind::EmptyPositives);
  CHECK(error_kind_of([&] { loss_bfe(e1.view(), one, MemoryQueue(2, 3), 1.0); }) == ErrorKind::EmptyQueue);
}

TEST_CASE("total_loss weighting") {
  const LossResult cl{2.0, {1.0, 0.0}}, he{1.0, {0.0, 1.0}}, bfe{3.0, {1.0, 1.0}};
  const LossBreakdown b0 = total_loss(0.0, cl, he, bfe);
  CHECK(b0.l_total == 2.0);
  CHECK(b0.grad_vq == cl.grad_vq);
  CHECK(total_loss(1.0, cl, he, bfe).l_total == 4.0);
  const LossBreakdown half = total_loss(0.5, cl, he, bfe);
  CHECK(half.l_total == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(half.grad_vq == Vector{1.0, 1.0});
  CHECK(total_loss(0.5, cl, std::nullopt, bfe).l_total == doctest::Approx(2.5));
  CHECK(error_kind_of([&] { total_loss(1.5, cl, he, bfe); }) == ErrorKind::MuOutOfRange);
}

TEST_CASE("log_sum_exp handles large inputs") {
  CHECK(log_sum_exp(Vector{1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(log_sum_exp(Vector{-1000.0}) == doctest::Approx(-1000.0));
}
