#include "fssl/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fssl/error.hpp"

namespace fssl {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroNorm: return "ZeroNorm";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::CacheMismatch: return "CacheMismatch";
    case ErrorKind::EmptyQueue: return "EmptyQueue";
    case ErrorKind::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorKind::NoSelectedPositives: return "NoSelectedPositives";
    case ErrorKind::EmptyPositives: return "EmptyPositives";
    case ErrorKind::MuOutOfRange: return "MuOutOfRange";
    case ErrorKind::InsufficientQueue: return "InsufficientQueue";
    case ErrorKind::DegenerateGeodesic: return "DegenerateGeodesic";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::InsufficientTargetSamples: return "InsufficientTargetSamples";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::SingleClient: return "SingleClient";
    case ErrorKind::EmptyUpdateSet: return "EmptyUpdateSet";
    case ErrorKind::TooFewClients: return "TooFewClients";
    case ErrorKind::AllZeroTrust: return "AllZeroTrust";
    case ErrorKind::ClassTooSmall: return "ClassTooSmall";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::EmptyTestSet: return "EmptyTestSet";
    case ErrorKind::NoEligibleSamples: return "NoEligibleSamples";
    case ErrorKind::DimTooSmall: return "DimTooSmall";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::MissingMetrics: return "MissingMetrics";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadCheckpoint: return "BadCheckpoint";
  }
  return "Unknown";
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x632BE59BD9B4E019ull));
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(mix_seed(seed, stream_id)) {}

RngStream RngStream::fork(std::uint64_t child_id) const {
  return RngStream(seed_, mix_seed(stream_id_, child_id));
}

double RngStream::uniform(double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double RngStream::normal(double mean, double stddev) {
  if (stddev == 0.0) return mean;
  return std::normal_distribution<double>(mean, stddev)(engine_);
}

double RngStream::gamma(double shape) {
  return std::gamma_distribution<double>(shape, 1.0)(engine_);
}

std::size_t RngStream::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::vector<std::size_t> RngStream::sample_without_replacement(std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  k = std::min(k, n);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + index(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

UnitVector UnitVector::from_unit(Vector v) {
  const double n = norm2(v);
  if (std::abs(n - 1.0) > 1e-9) {
    throw Error(ErrorKind::ZeroNorm, "vector is not unit norm (norm " + std::to_string(n) + ")");
  }
  return UnitVector(std::move(v));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::DimMismatch,
                "dot of sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

UnitVector normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n >= 1e-12)) throw Error(ErrorKind::ZeroNorm, "cannot normalize a vector of norm < 1e-12");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return UnitVector(std::move(out));
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  return std::clamp(dot(a, b), -1.0, 1.0);
}

double cosine_sim(const UnitVector& a, const UnitVector& b) { return cosine_sim(a.view(), b.view()); }

Vector sub(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::DimMismatch, "sub: size mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::DimMismatch, "axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vector scaled(std::span<const double> v, double s) {
  Vector out(v.begin(), v.end());
  for (double& x : out) x *= s;
  return out;
}

namespace {

std::size_t nearest_centroid(const UnitVector& p, const std::vector<UnitVector>& centroids) {
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double s = cosine_sim(p, centroids[c]);
    if (s > best_sim) {
      best_sim = s;
      best = c;
    }
  }
  return best;
}

std::size_t farthest_point(std::span<const UnitVector> points, const std::vector<UnitVector>& centroids) {
  std::size_t worst = 0;
  double worst_sim = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : centroids) best = std::max(best, cosine_sim(points[i], c));
    if (best < worst_sim) {
      worst_sim = best;
      worst = i;
    }
  }
  return worst;
}

}  // namespace

KMeansResult spherical_kmeans_detailed(std::span<const UnitVector> points, std::size_t clusters,
                                       RngStream& rng, std::size_t max_iter) {
  if (clusters == 0 || points.size() < clusters) {
    throw Error(ErrorKind::TooFewPoints, "spherical_kmeans needs at least " + std::to_string(clusters) +
                                             " points, got " + std::to_string(points.size()));
  }
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw Error(ErrorKind::DimMismatch, "spherical_kmeans: ragged points");
  }

  KMeansResult result;
  for (std::size_t idx : rng.sample_without_replacement(points.size(), clusters)) {
    result.centroids.push_back(points[idx]);
  }

  std::vector<std::size_t> assignment(points.size(), 0);
  bool have_previous = false;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    std::vector<std::size_t> next(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) next[i] = nearest_centroid(points[i], result.centroids);
    if (have_previous && next == assignment) break;
    assignment = std::move(next);
    have_previous = true;
    result.iterations = iter + 1;

    std::vector<Vector> sums(clusters, Vector(dim, 0.0));
    std::vector<std::size_t> counts(clusters, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      axpy(1.0, points[i].view(), sums[assignment[i]]);
      ++counts[assignment[i]];
    }
    std::vector<std::size_t> empty;
    for (std::size_t c = 0; c < clusters; ++c) {
      if (counts[c] == 0 || norm2(sums[c]) < 1e-12) {
        empty.push_back(c);
      } else {
        result.centroids[c] = normalize(sums[c]);
      }
    }
    double objective = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (counts[assignment[i]] > 0 && norm2(sums[assignment[i]]) >= 1e-12) {
        objective += cosine_sim(points[i], result.centroids[assignment[i]]);
      }
    }
    for (std::size_t c : empty) result.centroids[c] = points[farthest_point(points, result.centroids)];
    result.objective_trace.push_back(objective);
  }

  for (std::size_t i = 0; i < points.size(); ++i) assignment[i] = nearest_centroid(points[i], result.centroids);
  result.assignment = std::move(assignment);
  return result;
}

std::vector<UnitVector> spherical_kmeans(std::span<const UnitVector> points, std::size_t clusters,
                                         RngStream& rng, std::size_t max_iter) {
  return spherical_kmeans_detailed(points, clusters, rng, max_iter).centroids;
}

}  // namespace fssl
