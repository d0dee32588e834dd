#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "fssl/core.hpp"

namespace fssl {

using ClassId = int;

// Labels travel with the samples only for poison selection and evaluation;
// contrastive training APIs take `samples` alone.
struct Dataset {
  std::vector<Vector> samples;
  std::vector<ClassId> labels;
  std::size_t classes = 0;
  std::size_t dim = 0;

  std::size_t size() const { return samples.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> indices_of(ClassId c) const;
};

// Class means are the first C standard basis directions; samples add
// N(0, spread^2 I) noise.
Dataset synth_blobs(std::size_t classes, std::size_t dim, std::size_t per_class, double spread, RngStream& rng);

// Two independent views: additive N(0, sigma^2) noise, then floor(rho*dim)
// coordinates zeroed.
std::pair<Vector, Vector> augment_pair(std::span<const double> x, double sigma, double rho, RngStream& rng);
Vector augment_view(std::span<const double> x, double sigma, double rho, RngStream& rng);

// CIFAR-10 binary batches: 3073-byte records (label, 3072 pixels).
Dataset ingest_cifar10(const std::filesystem::path& path);

void write_dataset_csv(const Dataset& d, const std::filesystem::path& path);

}  // namespace fssl
