#include "fssl/poisoning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fssl/error.hpp"

namespace fssl {

void TriggerSpec::validate(std::size_t input_dim) const {
  if (coords.size() != values.size()) {
    throw Error(ErrorKind::ConfigInvalid, "attack.trigger: coords and values differ in length");
  }
  std::set<std::size_t> seen;
  for (std::size_t c : coords) {
    if (c >= input_dim) {
      throw Error(ErrorKind::IndexOutOfRange, "trigger coordinate " + std::to_string(c) + " outside input of width " +
                                                  std::to_string(input_dim));
    }
    if (!seen.insert(c).second) throw Error(ErrorKind::ConfigInvalid, "attack.trigger: duplicate coordinate");
  }
}

Vector embed_trigger(std::span<const double> x, const TriggerSpec& trig) {
  trig.validate(x.size());
  Vector out(x.begin(), x.end());
  for (std::size_t j = 0; j < trig.coords.size(); ++j) out[trig.coords[j]] = trig.values[j];
  return out;
}

PoisonSet make_poison_set(const Dataset& d, double ratio, const TriggerSpec& trig, RngStream& rng) {
  trig.validate(d.dim);
  const auto wanted = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(d.size()) - 1e-9));
  PoisonSet out;
  out.poisoned.classes = d.classes;
  out.poisoned.dim = d.dim;
  if (wanted == 0) return out;
  const std::vector<std::size_t> pool = d.indices_of(trig.target_class);
  if (pool.size() < wanted) {
    throw Error(ErrorKind::InsufficientTargetSamples, "need " + std::to_string(wanted) + " samples of class " +
                                                          std::to_string(trig.target_class) + ", have " +
                                                          std::to_string(pool.size()));
  }
  for (std::size_t pick : rng.sample_without_replacement(pool.size(), wanted)) {
    const std::size_t idx = pool[pick];
    out.indices.push_back(idx);
    out.poisoned.samples.push_back(embed_trigger(d.samples[idx], trig));
    out.poisoned.labels.push_back(trig.target_class);
  }
  return out;
}

namespace {

void check_same_layout(const ModelParams& a, const ModelParams& b) {
  if (!(a.layout == b.layout) || a.flat.size() != b.flat.size()) {
    throw Error(ErrorKind::LayoutMismatch, "model layouts differ");
  }
}

}  // namespace

ModelParams project_eps_ball(const ModelParams& w, const ModelParams& w_star, double eps) {
  check_same_layout(w, w_star);
  const Vector diff = sub(w.flat, w_star.flat);
  const double dist = norm2(diff);
  if (dist <= eps) return w;
  ModelParams out = w_star;
  axpy(eps / dist, diff, out.flat);
  return out;
}

ModelParams model_replace(const ModelParams& w_k, const ModelParams& w_star, std::span<const std::size_t> sizes,
                          std::size_t k) {
  check_same_layout(w_k, w_star);
  if (sizes.size() < 2) throw Error(ErrorKind::SingleClient, "model replacement needs at least two clients");
  if (k >= sizes.size()) throw Error(ErrorKind::IndexOutOfRange, "malicious client index");
  double others = 0.0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (j != k) others += static_cast<double>(sizes[j]);
  }
  double scale = 0.0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (j != k) scale += static_cast<double>(sizes[j]) / others;
  }
  // The printed weights telescope to one; floating-point summation can drift
  // by an ulp, so the exact value is used once the sum is confirmed.
  if (std::abs(scale - 1.0) < 1e-9) scale = 1.0;
  const Vector diff = sub(w_k.flat, w_star.flat);
  ModelParams out = w_k;
  axpy(scale, diff, out.flat);
  return out;
}

ZetaMode parse_zeta_mode(const std::string& name) {
  if (name == "magnitude") return ZetaMode::Magnitude;
  if (name == "indicator") return ZetaMode::Indicator;
  throw Error(ErrorKind::ConfigInvalid, "attack.zeta_mode: expected 'magnitude' or 'indicator'");
}

GradStats GradStats::zeros(std::size_t dim, double k_frac, ZetaMode mode) {
  return GradStats{Vector(dim, 0.0), Vector(dim, 0.0), 0, k_frac, mode};
}

std::size_t bottom_count(std::size_t dim, double k_frac) {
  const auto n = static_cast<std::size_t>(std::ceil(k_frac * static_cast<double>(dim) - 1e-9));
  return std::min(n, dim);
}

std::vector<std::size_t> bottom_k_indices(std::span<const double> g, double k_frac) {
  std::vector<std::size_t> idx(g.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t n = bottom_count(g.size(), k_frac);
  auto less = [&](std::size_t a, std::size_t b) {
    const double fa = std::abs(g[a]);
    const double fb = std::abs(g[b]);
    return fa < fb || (fa == fb && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), less);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Vector bottom_k(std::span<const double> g, double k_frac, ZetaMode mode) {
  Vector out(g.size(), 0.0);
  for (std::size_t i : bottom_k_indices(g, k_frac)) out[i] = mode == ZetaMode::Magnitude ? std::abs(g[i]) : 1.0;
  return out;
}

GradStats update_zeta(GradStats gs, std::span<const double> g_clean) {
  if (g_clean.size() != gs.zeta.size()) throw Error(ErrorKind::DimMismatch, "gradient and zeta sizes differ");
  if (gs.freq.size() != gs.zeta.size()) gs.freq.assign(gs.zeta.size(), 0.0);
  ++gs.rounds;
  const double w = 1.0 / static_cast<double>(gs.rounds);
  Vector b(g_clean.size(), 0.0);
  Vector hit(g_clean.size(), 0.0);
  for (std::size_t i : bottom_k_indices(g_clean, gs.k_frac)) {
    b[i] = gs.mode == ZetaMode::Magnitude ? std::abs(g_clean[i]) : 1.0;
    hit[i] = 1.0;
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    gs.zeta[i] = (1.0 - w) * gs.zeta[i] + w * b[i];
    gs.freq[i] = (1.0 - w) * gs.freq[i] + w * hit[i];
  }
  return gs;
}

std::vector<std::size_t> selection_set(const GradStats& gs) {
  const std::size_t dim = gs.zeta.size();
  std::vector<std::size_t> idx(dim);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t n = bottom_count(dim, gs.k_frac);
  const bool have_freq = gs.freq.size() == dim;
  // Coordinates most often in the clean bottom set come first; zeta breaks
  // ties, then the index.
  auto before = [&](std::size_t a, std::size_t b) {
    const double fa = have_freq ? gs.freq[a] : 0.0;
    const double fb = have_freq ? gs.freq[b] : 0.0;
    if (fa != fb) return fa > fb;
    if (gs.zeta[a] != gs.zeta[b]) return gs.zeta[a] < gs.zeta[b];
    return a < b;
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), before);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Vector mask_to_set(std::span<const double> g, std::span<const std::size_t> keep) {
  Vector out(g.size(), 0.0);
  for (std::size_t i : keep) out[i] = g[i];
  return out;
}

Vector mask_to_bottom_k(std::span<const double> g_attack, const GradStats& gs) {
  if (g_attack.size() != gs.zeta.size()) throw Error(ErrorKind::DimMismatch, "gradient and zeta sizes differ");
  return mask_to_set(g_attack, selection_set(gs));
}

}  // namespace fssl
