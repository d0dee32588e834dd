#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fssl/core.hpp"

namespace fssl {

struct GradCheckGroup {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double tolerance = 1e-4;

  bool passed() const;
  std::string format() const;
};

struct GradCheckOptions {
  std::uint64_t seed = 7;
  std::size_t instances = 100;  // per group
  double tolerance = 1e-4;
  double step = 1e-6;
  // Test hook: may tamper with an analytic gradient before comparison.
  std::function<void(const std::string& group, Vector& grad)> corrupt;
};

// Central finite differences against the analytic gradients of the encoder
// backward pass and the three contrastive losses. Error per coordinate is
// |analytic - numeric| / max(1, max|analytic|).
GradCheckReport run_gradcheck(const GradCheckOptions& opts = {});

}  // namespace fssl
