#include <doctest.h>

#include <fstream>

#include "fssl/data.hpp"
#include "fssl/eval.hpp"
#include "fssl/federation.hpp"
#include "test_util.hpp"

using namespace fssl;
using fssl::test::error_kind_of;

TEST_CASE("synth_blobs") {
  RngStream rng(1, 0);
  const Dataset tight = synth_blobs(3, 5, 4, 0.0, rng);
  CHECK(tight.size() == 12);
  for (std::size_t i = 0; i < tight.size(); ++i) {
    Vector mean(5, 0.0);
    mean[static_cast<std::size_t>(tight.labels[i])] = 1.0;
    CHECK(tight.samples[i] == mean);
  }
  CHECK(error_kind_of([&] { synth_blobs(4, 3, 1, 0.1, rng); }) == ErrorKind::DimTooSmall);
  CHECK(error_kind_of([&] { synth_blobs(1, 3, 1, 0.1, rng); }) == ErrorKind::DimTooSmall);
}

TEST_CASE("default blobs are linearly separable") {
  RngStream rng(2, 0);
  const Dataset train = synth_blobs(10, 32, 200, 0.15, rng);
  const Dataset test = synth_blobs(10, 32, 50, 0.15, rng);
  const LinearProbe p = train_probe(rows_to_matrix(train.samples), train.labels, 10, 200, 0.5);
  CHECK(accuracy(p, rows_to_matrix(test.samples), test.labels) >= 0.95);
}

TEST_CASE("augment_pair") {
  RngStream rng(3, 0);
  const Vector x{1, 2, 3, 4};
  const auto [q0, k0] = augment_pair(x, 0.0, 0.0, rng);
  CHECK(q0 == x);
  CHECK(k0 == x);
  for (int i = 0; i < 50; ++i) {
    const auto [q, k] = augment_pair(x, 0.0, 0.5, rng);
    CHECK(std::count(q.begin(), q.end(), 0.0) == 2);
    CHECK(std::count(k.begin(), k.end(), 0.0) == 2);
  }
  RngStream a(4, 4), b(4, 4);
  CHECK(augment_pair(x, 0.3, 0.25, a) == augment_pair(x, 0.3, 0.25, b));
}

TEST_CASE("ingest_cifar10") {
  fssl::test::TempDir dir("cifar");
  std::vector<char> rec(3073, 0);
  rec[0] = 7;
  rec[1] = static_cast<char>(255);
  rec[2] = 51;
  {
    std::ofstream f(dir.path / "one.bin", std::ios::binary);
    f.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  const Dataset d = ingest_cifar10(dir.path / "one.bin");
  REQUIRE(d.size() == 1);
  CHECK(d.labels[0] == 7);
  CHECK(d.dim == 3072);
  CHECK(d.samples[0][0] == 1.0);
  CHECK(d.samples[0][1] == doctest::Approx(0.2));
  CHECK(d.samples[0][2] == 0.0);

  {
    std::ofstream f(dir.path / "short.bin", std::ios::binary);
    f.write(rec.data(), 3000);
  }
  CHECK(error_kind_of([&] { ingest_cifar10(dir.path / "short.bin"); }) == ErrorKind::MalformedRecord);
  rec[0] = 12;
  {
    std::ofstream f(dir.path / "label.bin", std::ios::binary);
    f.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  CHECK(error_kind_of([&] { ingest_cifar10(dir.path / "label.bin"); }) == ErrorKind::LabelOutOfRange);
  CHECK(error_kind_of([&] { ingest_cifar10(dir.path / "absent.bin"); }) == ErrorKind::IoError);
}

TEST_CASE("dirichlet partition covers every sample once") {
  std::vector<ClassId> labels;
  for (int i = 0; i < 500; ++i) labels.push_back(i % 10);
  RngStream rng(5, 0);
  const PartitionPlan one = dirichlet_partition(labels, 1, 0.5, rng);
  REQUIRE(one.assignment.size() == 1);
  CHECK(one.assignment[0].size() == 500);

  for (double alpha : {0.05, 0.1, 1.0, 100.0}) {
    const PartitionPlan p = dirichlet_partition(labels, 7, alpha, rng);
    std::vector<int> seen(labels.size(), 0);
    for (const auto& client : p.assignment) {
      CHECK(!client.empty());
      CHECK(std::is_sorted(client.begin(), client.end()));
      for (std::size_t i : client) ++seen[i];
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
  }
  RngStream a(6, 0), b(6, 0);
  CHECK(dirichlet_partition(labels, 5, 0.3, a).assignment == dirichlet_partition(labels, 5, 0.3, b).assignment);
}

TEST_CASE("iid partition has near-zero heterogeneity") {
  std::vector<ClassId> labels;
  for (int i = 0; i < 500; ++i) labels.push_back(i % 10);
  RngStream rng(7, 0);
  const PartitionPlan p = iid_partition(labels, 5, rng);
  CHECK(heterogeneity_chi2(p, labels, 10) == doctest::Approx(0.0));
  RngStream r2(7, 1);
  CHECK(heterogeneity_chi2(dirichlet_partition(labels, 5, 0.1, r2), labels, 10) > 100.0);
}
