#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace fssl {

using Vector = std::vector<double>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A vector whose Euclidean norm is 1 within 1e-9. Only constructible through
// `normalize` or the checked `from_unit` factory.
class UnitVector {
 public:
  UnitVector() = default;

  // Accepts an already-normalized vector; throws ZeroNorm if it is not unit
  // within 1e-9.
  static UnitVector from_unit(Vector v);

  std::span<const double> view() const noexcept { return data_; }
  const Vector& vec() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }
  double operator[](std::size_t i) const { return data_[i]; }
  bool operator==(const UnitVector& other) const = default;

 private:
  explicit UnitVector(Vector v) : data_(std::move(v)) {}
  friend UnitVector normalize(std::span<const double> v);

  Vector data_;
};

// Deterministic random stream keyed by (seed, stream_id). Two streams built
// from the same key yield identical draws. Single owner; do not share across
// threads.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  // Independent child stream; the same (parent key, child_id) always gives the
  // same child.
  RngStream fork(std::uint64_t child_id) const;

  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  double gamma(double shape);
  std::size_t index(std::size_t n);  // uniform in [0, n)

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

UnitVector normalize(std::span<const double> v);

// a·b clamped to [-1, 1].
double cosine_sim(const UnitVector& a, const UnitVector& b);
double cosine_sim(std::span<const double> a, std::span<const double> b);

struct KMeansResult {
  std::vector<UnitVector> centroids;
  std::vector<std::size_t> assignment;
  // Total within-cluster similarity after each iteration.
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
};

// Spherical k-means: cosine assignment, renormalized mean centroids. Empty
// clusters are re-seeded from the point least similar to every centroid.
KMeansResult spherical_kmeans_detailed(std::span<const UnitVector> points, std::size_t clusters,
                                       RngStream& rng, std::size_t max_iter);

std::vector<UnitVector> spherical_kmeans(std::span<const UnitVector> points, std::size_t clusters,
                                         RngStream& rng, std::size_t max_iter);

// Vector helpers used across modules.
Vector sub(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);  // y += alpha*x
Vector scaled(std::span<const double> v, double s);

}  // namespace fssl
