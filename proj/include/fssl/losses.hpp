#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fssl/core.hpp"

namespace fssl {

// Fixed-capacity FIFO of detached key embeddings, stored contiguously as a
// ring. Entry 0 is the oldest.
class MemoryQueue {
 public:
  MemoryQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  std::span<const double> entry(std::size_t i) const;
  // The `k` most recently enqueued entries, oldest first.
  std::vector<UnitVector> recent(std::size_t k) const;
  std::vector<UnitVector> entries() const { return recent(size_); }

  // Live rows in storage order rather than age order; row-major, size() x dim().
  std::span<const double> slots() const noexcept { return {storage_.data(), size_ * dim_}; }

  void push(const UnitVector& key);
  void push(std::span<const UnitVector> keys);

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::size_t head_ = 0;  // index of oldest entry
  std::size_t size_ = 0;
  std::vector<double> storage_;
};

MemoryQueue enqueue(MemoryQueue q, std::span<const UnitVector> keys);

struct LossResult {
  double loss = 0.0;
  Vector grad_vq;
};

// The query is taken as a free vector so gradients can be checked off the
// sphere; keys and queue entries are constants.
LossResult info_nce(std::span<const double> vq, const UnitVector& positive, const MemoryQueue& queue, double tau);

struct BatchLossResult {
  double loss = 0.0;  // mean over rows
  Matrix grad;        // gradient of the mean loss, one row per query
};

// info_nce for every row of `queries` against the matching row of
// `positives`, averaged.
BatchLossResult info_nce_batch(const Matrix& queries, const Matrix& positives, const MemoryQueue& queue, double tau);

// Mean negative scaled similarity to the hallucinated keys.
LossResult loss_he(std::span<const double> vq, std::span<const UnitVector> hallucinated, double tau);

// Entanglement loss: -(1/|B|) * log( sum_m exp(vq.v_m/tau) / sum_i exp(vq.q_i/tau) ).
// The denominator holds queue negatives only, so the value can be negative.
LossResult loss_bfe(std::span<const double> vq, std::span<const UnitVector> positives, const MemoryQueue& queue,
                    double tau);

struct LossBreakdown {
  double l_cl = 0.0;
  double l_he = 0.0;
  double l_bfe = 0.0;
  double l_total = 0.0;
  Vector grad_vq;
};

// (1-mu)*cl + mu*(he + bfe). A missing hallucination term contributes zero.
LossBreakdown total_loss(double mu, const LossResult& cl, const std::optional<LossResult>& he,
                         const std::optional<LossResult>& bfe);

double log_sum_exp(std::span<const double> values);

}  // namespace fssl
