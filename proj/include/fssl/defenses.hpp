#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "fssl/core.hpp"

namespace fssl {

// Server-side robust aggregation. Every routine is a pure function of the
// update vectors it is given (client model deltas w_i - w*, unless noted).

// Index of the update with the smallest sum of squared distances to its
// n - f - 2 nearest neighbours. Ties go to the lowest index.
std::size_t krum(std::span<const Vector> updates, std::size_t f);
std::vector<double> krum_scores(std::span<const Vector> updates, std::size_t f);

// FoolsGold learning-rate weights in [0, 1] from cumulative per-client
// update histories.
std::vector<double> foolsgold(std::span<const Vector> history);

struct FlameResult {
  Vector aggregate;                 // aggregated delta
  std::vector<std::size_t> kept;    // ascending client positions
  double median_norm = 0.0;
};

// Cosine single-linkage clustering (merge until one component holds a strict
// majority, keep it), clip survivors to the median norm, average, add
// N(0, (noise_factor*median_norm)^2) per coordinate.
FlameResult flame_lite(std::span<const Vector> updates, RngStream& rng, double noise_factor = 0.01);

struct FltrustResult {
  Vector aggregate;
  std::vector<double> trust;
  bool fallback = false;  // every trust score was zero; aggregate = server update
};

FltrustResult fltrust(std::span<const Vector> updates, std::span<const double> server_update);

std::vector<Vector> norm_clip(std::span<const Vector> updates,
                              double bound = std::numeric_limits<double>::infinity());

// Mean silhouette of a 2-means split, one score per class.
std::vector<double> activation_clustering_score(const std::vector<std::vector<Vector>>& per_class);
double silhouette_two_means(std::span<const Vector> points);

}  // namespace fssl
