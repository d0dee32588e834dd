#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fssl/core.hpp"
#include "fssl/data.hpp"
#include "fssl/encoder.hpp"

namespace fssl {

struct TriggerSpec {
  std::vector<std::size_t> coords;
  std::vector<double> values;
  ClassId target_class = 0;

  void validate(std::size_t input_dim) const;
};

// Overwrites the trigger coordinates of a copy of x.
Vector embed_trigger(std::span<const double> x, const TriggerSpec& trig);

struct PoisonSet {
  std::vector<std::size_t> indices;  // into the source dataset
  Dataset poisoned;                  // triggered copies, all labelled target_class
};

// ceil(ratio*|D|) target-class samples chosen uniformly, triggers embedded.
PoisonSet make_poison_set(const Dataset& d, double ratio, const TriggerSpec& trig, RngStream& rng);

// Projection onto the ball of radius eps around w_star.
ModelParams project_eps_ball(const ModelParams& w, const ModelParams& w_star, double eps);

// Model replacement as printed: w_k + sum_{j != k} n_j / n_{C\k} (w_k - w*).
// The weights sum to one, so the result is 2 w_k - w* for any client sizes.
ModelParams model_replace(const ModelParams& w_k, const ModelParams& w_star, std::span<const std::size_t> sizes,
                          std::size_t k);

enum class ZetaMode { Magnitude, Indicator };
ZetaMode parse_zeta_mode(const std::string& name);

// Per-coordinate update statistics of the malicious client.
struct GradStats {
  Vector zeta;          // running EWMA of bottom_k(g)
  Vector freq;          // running fraction of rounds each coordinate was in the bottom set
  std::size_t rounds = 0;  // p, rounds the adversary has participated in
  double k_frac = 0.2;
  ZetaMode mode = ZetaMode::Magnitude;

  static GradStats zeros(std::size_t dim, double k_frac, ZetaMode mode = ZetaMode::Magnitude);
};

std::size_t bottom_count(std::size_t dim, double k_frac);

// Indices of the ceil(k_frac*dim) smallest |g| (ties to the lower index), sorted.
std::vector<std::size_t> bottom_k_indices(std::span<const double> g, double k_frac);

// |g| (or 1 in indicator mode) on the bottom-k coordinates, 0 elsewhere.
Vector bottom_k(std::span<const double> g, double k_frac, ZetaMode mode);

// Increments p, then zeta <- (1 - 1/p) zeta + (1/p) bottom_k(g).
GradStats update_zeta(GradStats gs, std::span<const double> g_clean);

// Coordinates the attack may touch, sorted ascending.
std::vector<std::size_t> selection_set(const GradStats& gs);

// g_attack zeroed outside selection_set(gs).
Vector mask_to_bottom_k(std::span<const double> g_attack, const GradStats& gs);
Vector mask_to_set(std::span<const double> g, std::span<const std::size_t> keep);

}  // namespace fssl
