#include "fssl/hallucination.hpp"

#include <cmath>
#include <limits>

#include "fssl/error.hpp"

namespace fssl {

void HallucinationConfig::validate() const {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw Error(ErrorKind::ConfigInvalid, "attack.lambda must lie in (0, 1]");
  if (candidates < 1) throw Error(ErrorKind::ConfigInvalid, "attack.candidates must be >= 1");
  if (prototypes < 2) throw Error(ErrorKind::ConfigInvalid, "attack.prototypes must be >= 2");
  if (top_k < prototypes) throw Error(ErrorKind::ConfigInvalid, "attack.top_k must be >= attack.prototypes");
  if (!(grid_step > 0.0 && grid_step <= 1.0)) throw Error(ErrorKind::ConfigInvalid, "attack.grid_step must lie in (0, 1]");
  if (!(refine_tol > 0.0)) throw Error(ErrorKind::ConfigInvalid, "attack.refine_tol must be > 0");
}

PrototypeSet build_prototypes(const MemoryQueue& queue, const HallucinationConfig& cfg, RngStream& rng) {
  if (queue.size() < cfg.top_k || cfg.top_k < cfg.prototypes) {
    throw Error(ErrorKind::InsufficientQueue, "queue holds " + std::to_string(queue.size()) + " keys, need " +
                                                  std::to_string(cfg.top_k));
  }
  const std::vector<UnitVector> recent = queue.recent(cfg.top_k);
  return PrototypeSet{spherical_kmeans(recent, cfg.prototypes, rng, cfg.kmeans_iters)};
}

ClosestPrototype closest_prototype(std::span<const double> v, const PrototypeSet& ps) {
  ClosestPrototype best;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double s = cosine_sim(v, ps.prototypes[i].view());
    if (s > best_sim) {
      best_sim = s;
      best = {i, &ps.prototypes[i]};
    }
  }
  return best;
}

Vector geodesic_offset(double t, const UnitVector& p_base, const UnitVector& v_k) {
  const double cos_phi = cosine_sim(p_base, v_k);
  if (std::abs(cos_phi) >= 1.0 - 1e-9) {
    throw Error(ErrorKind::DegenerateGeodesic, "base prototype is (anti)parallel to the anchor");
  }
  const double phi = std::acos(cos_phi);
  const double sin_phi = std::sin(phi);
  const double a = std::sin((1.0 - t) * phi) / sin_phi;
  const double b = std::sin(t * phi) / sin_phi;
  Vector d(v_k.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a * v_k[i] + b * p_base[i] - v_k[i];
  return d;
}

namespace {

bool keeps_prototype(double t, const UnitVector& v_k, const UnitVector& p_base, const PrototypeSet& ps,
                     std::size_t anchor_index) {
  Vector v = geodesic_offset(t, p_base, v_k);
  axpy(1.0, v_k.view(), v);
  return closest_prototype(v, ps).index == anchor_index;
}

}  // namespace

double search_t_star(const UnitVector& v_k, const UnitVector& p_base, const PrototypeSet& ps,
                     const HallucinationConfig& cfg) {
  const std::size_t anchor = closest_prototype(v_k.view(), ps).index;
  const auto steps = static_cast<std::size_t>(std::ceil(1.0 / cfg.grid_step - 1e-12));
  double feasible = 0.0;
  for (std::size_t i = 1; i <= steps; ++i) {
    const double t = std::min(1.0, static_cast<double>(i) * cfg.grid_step);
    if (!keeps_prototype(t, v_k, p_base, ps, anchor)) {
      double lo = feasible;
      double hi = t;
      while (hi - lo > cfg.refine_tol) {
        const double mid = 0.5 * (lo + hi);
        if (keeps_prototype(mid, v_k, p_base, ps, anchor)) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      return lo;
    }
    feasible = t;
  }
  return 1.0;
}

HallucinatedPositives generate_positives(const UnitVector& v_k, const PrototypeSet& ps,
                                         const HallucinationConfig& cfg, RngStream& rng) {
  if (ps.size() == 0) throw Error(ErrorKind::InsufficientQueue, "empty prototype set");
  const std::size_t anchor = closest_prototype(v_k.view(), ps).index;
  HallucinatedPositives out;
  for (std::size_t c = 0; c < cfg.candidates; ++c) {
    const UnitVector* base = nullptr;
    for (std::size_t attempt = 0; attempt < ps.size(); ++attempt) {
      const UnitVector& candidate = ps.prototypes[rng.index(ps.size())];
      if (std::abs(cosine_sim(candidate, v_k)) < 1.0 - 1e-9) {
        base = &candidate;
        break;
      }
    }
    if (base == nullptr) {
      ++out.skipped;
      continue;
    }
    const double t_star = search_t_star(v_k, *base, ps, cfg);
    const double t_c = rng.uniform(0.0, cfg.lambda * t_star);
    Vector v = geodesic_offset(t_c, *base, v_k);
    axpy(1.0, v_k.view(), v);
    if (closest_prototype(v, ps).index != anchor) {
      ++out.discarded;
      continue;
    }
    out.positives.push_back(normalize(v));
  }
  out.selected = out.positives.size();
  return out;
}

}  // namespace fssl
