#include "fssl/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "fssl/error.hpp"

namespace fssl {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::LayoutMismatch, "update sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Cosine similarity that treats a zero vector as orthogonal to everything.
double safe_cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na < 1e-15 || nb < 1e-15) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<double> krum_scores(std::span<const Vector> updates, std::size_t f) {
  const std::size_t n = updates.size();
  if (n < f + 3) {
    throw Error(ErrorKind::TooFewClients, "krum needs at least f + 3 = " + std::to_string(f + 3) + " updates");
  }
  std::vector<double> scores(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d.push_back(squared_distance(updates[i], updates[j]));
    }
    std::sort(d.begin(), d.end());
    scores[i] = std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n - f - 2), 0.0);
  }
  return scores;
}

std::size_t krum(std::span<const Vector> updates, std::size_t f) {
  const std::vector<double> scores = krum_scores(updates, f);
  return static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
}

std::vector<double> foolsgold(std::span<const Vector> history) {
  const std::size_t n = history.size();
  if (n < 2) return std::vector<double>(n, 1.0);

  std::vector<std::vector<double>> cs(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) cs[i][j] = safe_cosine(history[i], history[j]);
    }
  }
  std::vector<double> maxcs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    maxcs[i] = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) maxcs[i] = std::max(maxcs[i], cs[i][j]);
    }
  }
  // pardoning: honest clients that merely resemble a sybil are down-weighted less
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && maxcs[i] < maxcs[j] && maxcs[j] > 0.0) cs[i][j] *= maxcs[i] / maxcs[j];
    }
  }
  std::vector<double> wv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) m = std::max(m, cs[i][j]);
    }
    // duplicates differ from cosine 1 only by rounding
    wv[i] = 1.0 - m < 1e-9 ? 0.0 : std::clamp(1.0 - m, 0.0, 1.0);
  }
  const double top = *std::max_element(wv.begin(), wv.end());
  for (double& w : wv) {
    w = top > 0.0 ? w / top : 0.0;
    if (w == 1.0) w = 0.99;
    w = std::log(w / (1.0 - w)) + 0.5;  // logit sharpening, log(0) -> -inf -> clipped to 0
    if (!std::isfinite(w) && w > 0.0) w = 1.0;
    w = std::isfinite(w) ? std::clamp(w, 0.0, 1.0) : 0.0;
  }
  return wv;
}

FlameResult flame_lite(std::span<const Vector> updates, RngStream& rng, double noise_factor) {
  const std::size_t n = updates.size();
  if (n < 3) throw Error(ErrorKind::TooFewClients, "flame_lite needs at least 3 updates");
  const std::size_t dim = updates.front().size();

  std::vector<std::tuple<double, std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) edges.emplace_back(1.0 - safe_cosine(updates[i], updates[j]), i, j);
  }
  std::sort(edges.begin(), edges.end());

  // Single-linkage dendrogram from Kruskal merges; cut where the next merge
  // distance jumps the most, among cuts whose largest cluster is a strict
  // majority.
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::size_t> size(n, 1);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<std::pair<std::size_t, std::size_t>> merges;
  std::vector<double> heights;
  for (const auto& [dist, i, j] : edges) {
    std::size_t a = find(i);
    std::size_t b = find(j);
    if (a == b) continue;
    merges.emplace_back(a, b);
    heights.push_back(dist);
    if (a > b) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
  }

  std::iota(parent.begin(), parent.end(), 0);
  std::fill(size.begin(), size.end(), 1);
  std::size_t best_cut = merges.size();
  double best_gap = -1.0;
  std::size_t largest = 1;
  for (std::size_t k = 0; k <= merges.size(); ++k) {
    if (2 * largest > n) {
      const double gap = k < merges.size() ? heights[k] - (k > 0 ? heights[k - 1] : 0.0) : 0.0;
      if (gap > best_gap) {
        best_gap = gap;
        best_cut = k;
      }
    }
    if (k == merges.size()) break;
    std::size_t a = merges[k].first;
    std::size_t b = merges[k].second;
    if (a > b) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    largest = std::max(largest, size[a]);
  }

  std::iota(parent.begin(), parent.end(), 0);
  std::fill(size.begin(), size.end(), 1);
  std::size_t majority_root = n;
  for (std::size_t k = 0; k < best_cut; ++k) {
    std::size_t a = merges[k].first;
    std::size_t b = merges[k].second;
    if (a > b) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (2 * size[find(i)] > n) majority_root = find(i);
  }

  FlameResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (find(i) == majority_root) out.kept.push_back(i);
  }
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = norm2(updates[i]);
  out.median_norm = median(norms);

  out.aggregate.assign(dim, 0.0);
  for (std::size_t i : out.kept) {
    const double scale = norms[i] > out.median_norm ? out.median_norm / norms[i] : 1.0;
    axpy(scale / static_cast<double>(out.kept.size()), updates[i], out.aggregate);
  }
  const double sigma = noise_factor * out.median_norm;
  if (sigma > 0.0) {
    for (double& v : out.aggregate) v += rng.normal(0.0, sigma);
  }
  return out;
}

FltrustResult fltrust(std::span<const Vector> updates, std::span<const double> server_update) {
  FltrustResult out;
  const double server_norm = norm2(server_update);
  out.aggregate.assign(server_update.size(), 0.0);
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.size() != server_update.size()) throw Error(ErrorKind::LayoutMismatch, "update sizes differ");
    const double trust = std::max(0.0, safe_cosine(u, server_update));
    out.trust.push_back(trust);
    const double un = norm2(u);
    if (trust > 0.0 && un > 0.0) {
      axpy(trust * server_norm / un, u, out.aggregate);
      total += trust;
    }
  }
  if (total <= 0.0) {
    out.aggregate.assign(server_update.begin(), server_update.end());
    out.fallback = true;
    return out;
  }
  for (double& v : out.aggregate) v /= total;
  return out;
}

std::vector<Vector> norm_clip(std::span<const Vector> updates, double bound) {
  std::vector<Vector> out(updates.begin(), updates.end());
  for (auto& u : out) {
    const double n = norm2(u);
    if (n > bound) {
      for (double& v : u) v *= bound / n;
    }
  }
  return out;
}

double silhouette_two_means(std::span<const Vector> points) {
  const std::size_t n = points.size();
  if (n < 2) throw Error(ErrorKind::ClassTooSmall, "silhouette needs at least 2 samples");

  // Deterministic seeding: the first point and the point farthest from it.
  std::size_t far = 0;
  double far_d = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = squared_distance(points[0], points[i]);
    if (d > far_d) {
      far_d = d;
      far = i;
    }
  }
  if (far_d <= 1e-24) return 0.0;
  Vector c0 = points[0];
  Vector c1 = points[far];
  std::vector<int> label(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int l = squared_distance(points[i], c0) <= squared_distance(points[i], c1) ? 0 : 1;
      if (l != label[i]) {
        label[i] = l;
        changed = true;
      }
    }
    if (!changed) break;
    Vector s0(c0.size(), 0.0);
    Vector s1(c1.size(), 0.0);
    double n0 = 0.0;
    double n1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (label[i] == 0) {
        axpy(1.0, points[i], s0);
        n0 += 1.0;
      } else {
        axpy(1.0, points[i], s1);
        n1 += 1.0;
      }
    }
    if (n0 > 0.0) c0 = scaled(s0, 1.0 / n0);
    if (n1 > 0.0) c1 = scaled(s1, 1.0 / n1);
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double own = 0.0;
    double other = 0.0;
    std::size_t n_own = 0;
    std::size_t n_other = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = std::sqrt(squared_distance(points[i], points[j]));
      if (label[j] == label[i]) {
        own += d;
        ++n_own;
      } else {
        other += d;
        ++n_other;
      }
    }
    if (n_own == 0 || n_other == 0) continue;  // singleton cluster contributes 0
    const double a = own / static_cast<double>(n_own);
    const double b = other / static_cast<double>(n_other);
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

std::vector<double> activation_clustering_score(const std::vector<std::vector<Vector>>& per_class) {
  std::vector<double> out;
  out.reserve(per_class.size());
  for (const auto& pts : per_class) out.push_back(silhouette_two_means(pts));
  return out;
}

}  // namespace fssl
