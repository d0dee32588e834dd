#include "fssl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fssl/encoder.hpp"
#include "fssl/losses.hpp"

namespace fssl {

namespace {

Vector random_vector(std::size_t n, RngStream& rng, double sd = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.normal(0.0, sd);
  return v;
}

UnitVector random_unit(std::size_t n, RngStream& rng) { return normalize(random_vector(n, rng)); }

double compare(const Vector& analytic, const Vector& numeric) {
  double scale = 1.0;
  for (double g : analytic) scale = std::max(scale, std::abs(g));
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

template <typename F>
Vector central_difference(Vector x, double h, F&& f) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Query off the unit sphere with a moderate norm.
Vector random_query(std::size_t d, RngStream& rng) {
  Vector v = random_unit(d, rng).vec();
  const double r = rng.uniform(0.5, 1.5);
  for (double& x : v) x *= r;
  return v;
}

MemoryQueue random_queue(std::size_t size, std::size_t d, RngStream& rng) {
  MemoryQueue q(size, d);
  for (std::size_t i = 0; i < size; ++i) q.push(random_unit(d, rng));
  return q;
}

double check_encoder(RngStream& rng, const GradCheckOptions& opts) {
  const std::size_t in = 3 + rng.index(4);
  std::vector<std::size_t> hidden{3 + rng.index(4)};
  if (rng.uniform(0.0, 1.0) < 0.5) hidden.push_back(3 + rng.index(3));
  const std::size_t emb = 2 + rng.index(3);
  const Activation act = rng.uniform(0.0, 1.0) < 0.7 ? Activation::Tanh : Activation::Relu;
  const LayerLayout layout = LayerLayout::mlp(in, hidden, emb, act);
  ModelParams p = init_params(layout, rng);
  // Non-zero biases so the bias gradients are exercised away from symmetry.
  for (std::size_t l = 0; l < layout.layers(); ++l) {
    for (std::size_t j = 0; j < layout.dims[l + 1]; ++j) p.flat[layout.bias_offset(l) + j] = rng.normal(0.0, 0.3);
  }
  const std::size_t batch = 1 + rng.index(3);
  Matrix x(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal(0.0, 1.0);
  Matrix coeff(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(emb));
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff.data()[i] = rng.normal(0.0, 1.0);

  const BatchForward fb = forward_batch(p, x);
  Vector analytic = backward_batch(p, fb.cache, coeff);
  if (opts.corrupt) opts.corrupt("encoder", analytic);
  const Vector numeric = central_difference(p.flat, opts.step, [&](const Vector& w) {
    const ModelParams q{w, layout};
    return (embed_batch(q, x).array() * coeff.array()).sum();
  });
  return compare(analytic, numeric);
}

template <typename LossFn>
double check_loss(const char* name, std::size_t d, RngStream& rng, const GradCheckOptions& opts, LossFn&& loss) {
  const Vector vq = random_query(d, rng);
  Vector analytic = loss(vq).grad_vq;
  if (opts.corrupt) opts.corrupt(name, analytic);
  const Vector numeric = central_difference(vq, opts.step, [&](const Vector& v) { return loss(v).loss; });
  return compare(analytic, numeric);
}

}  // namespace

bool GradCheckReport::passed() const {
  return !groups.empty() && std::all_of(groups.begin(), groups.end(), [](const auto& g) { return g.passed; });
}

std::string GradCheckReport::format() const {
  std::string out;
  char line[160];
  for (const auto& g : groups) {
    std::snprintf(line, sizeof line, "%-10s instances=%zu max_rel_err=%.3e %s\n", g.name.c_str(), g.instances,
                  g.max_rel_error, g.passed ? "PASS" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "gradcheck tolerance=%.1e overall %s\n", tolerance, passed() ? "PASS" : "FAIL");
  out += line;
  return out;
}

GradCheckReport run_gradcheck(const GradCheckOptions& opts) {
  GradCheckReport report;
  report.tolerance = opts.tolerance;
  const char* names[] = {"encoder", "info_nce", "loss_he", "loss_bfe"};
  for (std::size_t g = 0; g < 4; ++g) {
    RngStream rng(opts.seed, 100 + g);
    GradCheckGroup group{names[g], opts.instances, 0.0, false};
    for (std::size_t i = 0; i < opts.instances; ++i) {
      const std::size_t d = 2 + rng.index(15);
      const double tau = rng.uniform(0.1, 0.7);
      double err = 0.0;
      switch (g) {
        case 0:
          err = check_encoder(rng, opts);
          break;
        case 1: {
          const UnitVector pos = random_unit(d, rng);
          const MemoryQueue q = random_queue(1 + rng.index(32), d, rng);
          err = check_loss("info_nce", d, rng, opts, [&](const Vector& v) { return info_nce(v, pos, q, tau); });
          break;
        }
        case 2: {
          std::vector<UnitVector> hal;
          for (std::size_t j = 0, n = 1 + rng.index(6); j < n; ++j) hal.push_back(random_unit(d, rng));
          err = check_loss("loss_he", d, rng, opts, [&](const Vector& v) { return loss_he(v, hal, tau); });
          break;
        }
        default: {
          std::vector<UnitVector> pos;
          for (std::size_t j = 0, n = 1 + rng.index(6); j < n; ++j) pos.push_back(random_unit(d, rng));
          const MemoryQueue q = random_queue(1 + rng.index(32), d, rng);
          err = check_loss("loss_bfe", d, rng, opts, [&](const Vector& v) { return loss_bfe(v, pos, q, tau); });
          break;
        }
      }
      group.max_rel_error = std::max(group.max_rel_error, err);
    }
    group.passed = group.max_rel_error <= opts.tolerance;
    report.groups.push_back(group);
  }
  return report;
}

}  // namespace fssl
