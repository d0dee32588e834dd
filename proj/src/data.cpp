#include "fssl/data.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>

#include "fssl/error.hpp"

namespace fssl {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.classes = classes;
  out.dim = dim;
  out.samples.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= samples.size()) throw Error(ErrorKind::IndexOutOfRange, "dataset index " + std::to_string(i));
    out.samples.push_back(samples[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_of(ClassId c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == c) out.push_back(i);
  }
  return out;
}

Dataset synth_blobs(std::size_t classes, std::size_t dim, std::size_t per_class, double spread, RngStream& rng) {
  if (classes < 2 || dim < classes) {
    throw Error(ErrorKind::DimTooSmall, "synth_blobs needs C >= 2 and dim >= C");
  }
  Dataset d;
  d.classes = classes;
  d.dim = dim;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t n = 0; n < per_class; ++n) {
      Vector x(dim);
      for (std::size_t j = 0; j < dim; ++j) x[j] = (j == c ? 1.0 : 0.0) + rng.normal(0.0, spread);
      d.samples.push_back(std::move(x));
      d.labels.push_back(static_cast<ClassId>(c));
    }
  }
  return d;
}

Vector augment_view(std::span<const double> x, double sigma, double rho, RngStream& rng) {
  Vector v(x.begin(), x.end());
  for (double& e : v) e += rng.normal(0.0, sigma);
  const auto masked = static_cast<std::size_t>(std::floor(rho * static_cast<double>(v.size()) + 1e-9));
  for (std::size_t j : rng.sample_without_replacement(v.size(), masked)) v[j] = 0.0;
  return v;
}

std::pair<Vector, Vector> augment_pair(std::span<const double> x, double sigma, double rho, RngStream& rng) {
  Vector q = augment_view(x, sigma, rho, rng);
  Vector k = augment_view(x, sigma, rho, rng);
  return {std::move(q), std::move(k)};
}

Dataset ingest_cifar10(const std::filesystem::path& path) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kRecord != 0) {
    throw Error(ErrorKind::MalformedRecord, "file length " + std::to_string(bytes.size()) +
                                                " is not a multiple of " + std::to_string(kRecord));
  }
  Dataset d;
  d.classes = 10;
  d.dim = kPixels;
  for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
    const unsigned char* rec = bytes.data() + r * kRecord;
    if (rec[0] > 9) throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(rec[0]) + " in record " + std::to_string(r));
    Vector x(kPixels);
    for (std::size_t j = 0; j < kPixels; ++j) x[j] = static_cast<double>(rec[1 + j]) / 255.0;
    d.samples.push_back(std::move(x));
    d.labels.push_back(rec[0]);
  }
  return d;
}

void write_dataset_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "label";
  for (std::size_t j = 0; j < d.dim; ++j) out << ",x" << j;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.labels[i];
    for (double v : d.samples[i]) out << ',' << v;
    out << '\n';
  }
}

}  // namespace fssl
