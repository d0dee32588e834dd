#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "fssl/core.hpp"
#include "fssl/error.hpp"

namespace fssl::test {

inline Vector random_vector(std::size_t n, RngStream& rng, double sd = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.normal(0.0, sd);
  return v;
}

inline UnitVector random_unit(std::size_t n, RngStream& rng) { return normalize(random_vector(n, rng)); }

inline UnitVector basis(std::size_t n, std::size_t i, double sign = 1.0) {
  Vector v(n, 0.0);
  v[i] = sign;
  return normalize(v);
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("fssl_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

template <typename F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected an fssl::Error");
}

}  // namespace fssl::test
