#pragma once

#include <cstddef>
#include <vector>

#include "fssl/core.hpp"
#include "fssl/losses.hpp"

namespace fssl {

struct PrototypeSet {
  std::vector<UnitVector> prototypes;

  std::size_t size() const { return prototypes.size(); }
};

struct HallucinationConfig {
  double lambda = 0.8;        // hardness cap on the sampled step, fraction of t*
  std::size_t candidates = 4;  // G, candidates per anchor
  std::size_t top_k = 256;     // most recent queue entries clustered
  std::size_t prototypes = 10; // L
  double grid_step = 0.02;
  double refine_tol = 1e-4;
  std::size_t kmeans_iters = 20;

  void validate() const;
};

// Spherical k-means over the `top_k` most recently enqueued keys.
PrototypeSet build_prototypes(const MemoryQueue& queue, const HallucinationConfig& cfg, RngStream& rng);

struct ClosestPrototype {
  std::size_t index = 0;
  const UnitVector* prototype = nullptr;
};

// Highest cosine similarity; ties go to the lowest index.
ClosestPrototype closest_prototype(std::span<const double> v, const PrototypeSet& ps);

// Offset d(t) such that v_k + d(t) walks the great circle from v_k (t=0) to
// P_base (t=1).
Vector geodesic_offset(double t, const UnitVector& p_base, const UnitVector& v_k);

// Largest step along the arc toward p_base for which v_k's closest prototype
// is unchanged: grid scan from t=0, then bisection on the first boundary.
double search_t_star(const UnitVector& v_k, const UnitVector& p_base, const PrototypeSet& ps,
                     const HallucinationConfig& cfg);

struct HallucinatedPositives {
  std::vector<UnitVector> positives;
  std::size_t selected = 0;   // G_sel
  std::size_t discarded = 0;  // candidates violating the selector constraint
  std::size_t skipped = 0;    // candidates without a non-degenerate base prototype
};

HallucinatedPositives generate_positives(const UnitVector& v_k, const PrototypeSet& ps,
                                         const HallucinationConfig& cfg, RngStream& rng);

}  // namespace fssl
