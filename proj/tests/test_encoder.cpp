#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fssl/encoder.hpp"
#include "test_util.hpp"

using namespace fssl;
using fssl::test::error_kind_of;

namespace {

Vector fd_grad(const ModelParams& p, const Vector& x, const Vector& d_emb, double h) {
  Vector g(p.flat.size());
  ModelParams q = p;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = q.flat[i];
    q.flat[i] = keep + h;
    const double up = dot(forward(q, x).emb.view(), d_emb);
    q.flat[i] = keep - h;
    const double down = dot(forward(q, x).emb.view(), d_emb);
    q.flat[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const Vector& a, const Vector& n) {
  double scale = 1.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  return fssl::test::max_abs_diff(a, n) / scale;
}

}  // namespace

TEST_CASE("layout bookkeeping") {
  const LayerLayout l = LayerLayout::mlp(3, {4}, 2);
  CHECK(l.param_count() == 3 * 4 + 4 + 4 * 2 + 2);
  CHECK(l.weight_offset(0) == 0);
  CHECK(l.bias_offset(0) == 12);
  CHECK(l.weight_offset(1) == 16);
  CHECK(l.bias_offset(1) == 24);
  CHECK_THROWS_AS(LayerLayout::mlp(3, {}, 2).validate(), Error);
  CHECK_THROWS_AS(LayerLayout::mlp(3, {4}, 1).validate(), Error);
}

TEST_CASE("zero parameters give a zero raw output") {
  const LayerLayout l = LayerLayout::mlp(3, {4}, 2);
  const ModelParams p{Vector(l.param_count(), 0.0), l};
  CHECK(error_kind_of([&] { forward(p, Vector{1, 2, 3}); }) == ErrorKind::ZeroNorm);
}

TEST_CASE("hand-built network outputs [3,4] and normalizes to [0.6,0.8]") {
  // relu hidden layer copies the input; the output layer is the identity.
  const LayerLayout l = LayerLayout::mlp(2, {2}, 2, Activation::Relu);
  ModelParams p{Vector(l.param_count(), 0.0), l};
  p.flat[l.weight_offset(0) + 0] = 1.0;
  p.flat[l.weight_offset(0) + 3] = 1.0;
  p.flat[l.weight_offset(1) + 0] = 1.0;
  p.flat[l.weight_offset(1) + 3] = 1.0;
  const ForwardResult r = forward(p, Vector{3, 4});
  CHECK(r.emb[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.emb[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(r.cache.raw(0, 0) == 3.0);
  CHECK(r.cache.raw(0, 1) == 4.0);
}

TEST_CASE("forward rejects wrong input width") {
  RngStream rng(1, 0);
  const ModelParams p = init_params(LayerLayout::mlp(3, {4}, 2), rng);
  CHECK(error_kind_of([&] { forward(p, Vector{1, 2}); }) == ErrorKind::DimMismatch);
}

TEST_CASE("embeddings are unit norm") {
  RngStream rng(2, 0);
  for (int i = 0; i < 100; ++i) {
    const ModelParams p = init_params(LayerLayout::mlp(5, {7, 6}, 3), rng);
    const Vector x = fssl::test::random_vector(5, rng, 3.0);
    CHECK(std::abs(norm2(forward(p, x).emb.view()) - 1.0) <= 1e-9);
  }
}

TEST_CASE("backward: zero cotangent, linearity and cache checks") {
  RngStream rng(3, 0);
  const ModelParams p = init_params(LayerLayout::mlp(3, {4}, 2), rng);
  const ForwardResult r = forward(p, Vector{0.3, -1.0, 2.0});
  const Vector zero = backward(p, r.cache, Vector{0.0, 0.0});
  CHECK(std::all_of(zero.begin(), zero.end(), [](double v) { return v == 0.0; }));

  const Vector g1 = backward(p, r.cache, Vector{0.7, -0.2});
  const Vector g3 = backward(p, r.cache, Vector{0.7 * 4.0, -0.2 * 4.0});
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g3[i] == doctest::Approx(4.0 * g1[i]).epsilon(1e-14));

  const ModelParams other = init_params(LayerLayout::mlp(3, {5}, 2), rng);
  CHECK(error_kind_of([&] { backward(other, r.cache, Vector{1, 0}); }) == ErrorKind::CacheMismatch);
  CHECK(error_kind_of([&] { backward(p, r.cache, Vector{1, 0, 0}); }) == ErrorKind::CacheMismatch);
}

TEST_CASE("backward matches finite differences on a tiny net") {
  RngStream rng(4, 0);
  const LayerLayout l = LayerLayout::mlp(3, {4}, 2);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams p = init_params(l, rng);
    for (std::size_t j = 0; j < 4; ++j) p.flat[l.bias_offset(0) + j] = rng.normal(0, 0.5);
    const Vector x = fssl::test::random_vector(3, rng);
    const Vector d = fssl::test::random_vector(2, rng);
    const Vector g = backward(p, forward(p, x).cache, d);
    CHECK(rel_err(g, fd_grad(p, x, d, 1e-5)) <= 1e-5);
  }
}

TEST_CASE("backward matches finite differences on random deeper nets") {
  RngStream rng(5, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Activation act = trial % 3 == 0 ? Activation::Relu : Activation::Tanh;
    const LayerLayout l = LayerLayout::mlp(2 + rng.index(4), {2 + rng.index(4), 2 + rng.index(4)}, 2 + rng.index(3), act);
    ModelParams p;
    Vector x;
    // relu nets can map an input to exactly zero; redraw until the output is usable
    for (;;) {
      p = init_params(l, rng);
      x = fssl::test::random_vector(l.input_dim(), rng);
      try {
        if (forward(p, x).cache.raw.row(0).norm() >= 1e-3) break;
      } catch (const Error&) {
      }
    }
    const Vector d = fssl::test::random_vector(l.embedding_dim(), rng);
    const Vector g = backward(p, forward(p, x).cache, d);
    CHECK(rel_err(g, fd_grad(p, x, d, 1e-6)) <= 1e-4);
  }
}

TEST_CASE("batched backward equals the sum of single-sample gradients") {
  RngStream rng(6, 0);
  const ModelParams p = init_params(LayerLayout::mlp(4, {5}, 3), rng);
  std::vector<Vector> xs, ds;
  for (int i = 0; i < 5; ++i) {
    xs.push_back(fssl::test::random_vector(4, rng));
    ds.push_back(fssl::test::random_vector(3, rng));
  }
  const BatchForward bf = forward_batch(p, rows_to_matrix(xs));
  const Vector gb = backward_batch(p, bf.cache, rows_to_matrix(ds));
  Vector sum(p.flat.size(), 0.0);
  for (int i = 0; i < 5; ++i) axpy(1.0, backward(p, forward(p, xs[i]).cache, ds[i]), sum);
  CHECK(fssl::test::max_abs_diff(gb, sum) <= 1e-12);
}

TEST_CASE("momentum update") {
  const LayerLayout l = LayerLayout::mlp(1, {1}, 2);
  const std::size_t n = l.param_count();
  RngStream rng(7, 0);
  const ModelParams a = init_params(l, rng), b = init_params(l, rng);

  EncoderPair copy = momentum_update({a, b, 0.0});
  CHECK(copy.target.flat == a.flat);

  EncoderPair pair{{Vector(n, 0.0), l}, {Vector(n, 1.0), l}, 0.99};
  pair = momentum_update(pair);
  for (double v : pair.target.flat) CHECK(v == doctest::Approx(0.99).epsilon(1e-15));
  CHECK(pair.online.flat == Vector(n, 0.0));

  EncoderPair same = momentum_update({a, a, 0.99});
  CHECK(same.target.flat == a.flat);
}

TEST_CASE("init is seeded, Glorot-bounded with zero biases") {
  const LayerLayout l = LayerLayout::mlp(32, {64, 64}, 16);
  RngStream r1(9, 0), r2(9, 0);
  const ModelParams p1 = init_params(l, r1), p2 = init_params(l, r2);
  CHECK(p1.flat == p2.flat);
  for (std::size_t layer = 0; layer < l.layers(); ++layer) {
    const double s = std::sqrt(6.0 / static_cast<double>(l.dims[layer] + l.dims[layer + 1]));
    for (std::size_t i = l.weight_offset(layer); i < l.bias_offset(layer); ++i) {
      CHECK(std::abs(p1.flat[i]) <= s);
    }
    for (std::size_t j = 0; j < l.dims[layer + 1]; ++j) CHECK(p1.flat[l.bias_offset(layer) + j] == 0.0);
  }
}

TEST_CASE("checkpoint round trip and corruption") {
  fssl::test::TempDir dir("ckpt");
  RngStream rng(10, 0);
  const ModelParams p = init_params(LayerLayout::mlp(5, {6, 4}, 3, Activation::Relu), rng);
  save_checkpoint(p, dir.path / "m.ckpt");
  const ModelParams q = load_checkpoint(dir.path / "m.ckpt");
  CHECK(q.layout == p.layout);
  REQUIRE(q.flat.size() == p.flat.size());
  for (std::size_t i = 0; i < p.flat.size(); ++i) CHECK(q.flat[i] == static_cast<double>(static_cast<float>(p.flat[i])));

  {
    std::ofstream f(dir.path / "bad.ckpt", std::ios::binary);
    f << "NOPE";
  }
  CHECK(error_kind_of([&] { load_checkpoint(dir.path / "bad.ckpt"); }) == ErrorKind::BadCheckpoint);
  const auto size = std::filesystem::file_size(dir.path / "m.ckpt");
  std::filesystem::resize_file(dir.path / "m.ckpt", size - 4);
  CHECK(error_kind_of([&] { load_checkpoint(dir.path / "m.ckpt"); }) == ErrorKind::BadCheckpoint);
}
