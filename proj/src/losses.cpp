#include "fssl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fssl/error.hpp"

namespace fssl {

MemoryQueue::MemoryQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), storage_(capacity * dim, 0.0) {}

std::span<const double> MemoryQueue::entry(std::size_t i) const {
  if (i >= size_) throw Error(ErrorKind::IndexOutOfRange, "queue entry " + std::to_string(i));
  const std::size_t slot = (head_ + i) % capacity_;
  return {storage_.data() + slot * dim_, dim_};
}

std::vector<UnitVector> MemoryQueue::recent(std::size_t k) const {
  k = std::min(k, size_);
  std::vector<UnitVector> out;
  out.reserve(k);
  for (std::size_t i = size_ - k; i < size_; ++i) {
    auto e = entry(i);
    out.push_back(UnitVector::from_unit(Vector(e.begin(), e.end())));
  }
  return out;
}

void MemoryQueue::push(const UnitVector& key) {
  if (key.size() != dim_) throw Error(ErrorKind::DimMismatch, "queue key dimension");
  if (capacity_ == 0) return;
  std::size_t slot;
  if (size_ < capacity_) {
    slot = (head_ + size_) % capacity_;
    ++size_;
  } else {
    slot = head_;
    head_ = (head_ + 1) % capacity_;
  }
  std::copy(key.vec().begin(), key.vec().end(), storage_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
}

void MemoryQueue::push(std::span<const UnitVector> keys) {
  for (const auto& k : keys) push(k);
}

MemoryQueue enqueue(MemoryQueue q, std::span<const UnitVector> keys) {
  q.push(keys);
  return q;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::NonPositiveTemperature, "tau must be > 0");
}

void check_dim(std::span<const double> vq, std::size_t dim) {
  if (vq.size() != dim) throw Error(ErrorKind::DimMismatch, "query dimension does not match keys");
}

// Logits vq.q_i/tau over the queue.
std::vector<double> queue_logits(std::span<const double> vq, const MemoryQueue& queue, double tau) {
  std::vector<double> logits(queue.size());
  for (std::size_t i = 0; i < queue.size(); ++i) logits[i] = dot(vq, queue.entry(i)) / tau;
  return logits;
}

// grad += scale * sum_i softmax(logits)_i * q_i
void add_softmax_weighted_queue(const std::vector<double>& logits, double lse, const MemoryQueue& queue,
                                double scale, Vector& grad) {
  for (std::size_t i = 0; i < queue.size(); ++i) {
    axpy(scale * std::exp(logits[i] - lse), queue.entry(i), grad);
  }
}

}  // namespace

LossResult info_nce(std::span<const double> vq, const UnitVector& positive, const MemoryQueue& queue, double tau) {
  check_tau(tau);
  if (queue.empty()) throw Error(ErrorKind::EmptyQueue, "info_nce needs at least one negative");
  check_dim(vq, queue.dim());
  check_dim(vq, positive.size());

  std::vector<double> logits = queue_logits(vq, queue, tau);
  const double pos_logit = dot(vq, positive.view()) / tau;
  logits.push_back(pos_logit);
  const double lse = log_sum_exp(logits);
  logits.pop_back();

  LossResult r;
  r.loss = lse - pos_logit;
  r.grad_vq.assign(vq.size(), 0.0);
  axpy((std::exp(pos_logit - lse) - 1.0) / tau, positive.view(), r.grad_vq);
  add_softmax_weighted_queue(logits, lse, queue, 1.0 / tau, r.grad_vq);
  return r;
}

BatchLossResult info_nce_batch(const Matrix& queries, const Matrix& positives, const MemoryQueue& queue, double tau) {
  check_tau(tau);
  if (queue.empty()) throw Error(ErrorKind::EmptyQueue, "info_nce needs at least one negative");
  const auto d = static_cast<Eigen::Index>(queue.dim());
  if (queries.cols() != d || positives.cols() != d || positives.rows() != queries.rows()) {
    throw Error(ErrorKind::DimMismatch, "query/positive shapes do not match the queue");
  }
  const auto n = queries.rows();
  const Eigen::Map<const Matrix> negs(queue.slots().data(), static_cast<Eigen::Index>(queue.size()), d);
  Matrix logits = (queries * negs.transpose()) / tau;
  const Eigen::VectorXd pos = queries.cwiseProduct(positives).rowwise().sum() / tau;

  BatchLossResult r;
  Eigen::VectorXd pos_weight(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = std::max(pos(i), logits.row(i).maxCoeff());
    logits.row(i).array() = (logits.row(i).array() - m).exp();
    const double s = std::exp(pos(i) - m) + logits.row(i).sum();
    const double lse = m + std::log(s);
    r.loss += lse - pos(i);
    logits.row(i) /= s;  // softmax weights of the negatives
    pos_weight(i) = std::exp(pos(i) - lse) - 1.0;
  }
  const double scale = 1.0 / (tau * static_cast<double>(n));
  r.grad = (logits * negs + pos_weight.asDiagonal() * positives) * scale;
  r.loss /= static_cast<double>(n);
  return r;
}

LossResult loss_he(std::span<const double> vq, std::span<const UnitVector> hallucinated, double tau) {
  check_tau(tau);
  if (hallucinated.empty()) throw Error(ErrorKind::NoSelectedPositives, "no hallucinated positive survived");
  const double scale = 1.0 / (static_cast<double>(hallucinated.size()) * tau);
  LossResult r;
  r.grad_vq.assign(vq.size(), 0.0);
  for (const auto& h : hallucinated) {
    check_dim(vq, h.size());
    r.loss -= scale * dot(vq, h.view());
    axpy(-scale, h.view(), r.grad_vq);
  }
  return r;
}

LossResult loss_bfe(std::span<const double> vq, std::span<const UnitVector> positives, const MemoryQueue& queue,
                    double tau) {
  check_tau(tau);
  if (queue.empty()) throw Error(ErrorKind::EmptyQueue, "loss_bfe needs queue negatives");
  if (positives.empty()) throw Error(ErrorKind::EmptyPositives, "loss_bfe needs poisoned positives");
  check_dim(vq, queue.dim());

  std::vector<double> pos_logits(positives.size());
  for (std::size_t m = 0; m < positives.size(); ++m) {
    check_dim(vq, positives[m].size());
    pos_logits[m] = dot(vq, positives[m].view()) / tau;
  }
  const std::vector<double> neg_logits = queue_logits(vq, queue, tau);
  const double pos_lse = log_sum_exp(pos_logits);
  const double neg_lse = log_sum_exp(neg_logits);
  const double inv_b = 1.0 / static_cast<double>(positives.size());

  LossResult r;
  r.loss = -inv_b * (pos_lse - neg_lse);
  r.grad_vq.assign(vq.size(), 0.0);
  for (std::size_t m = 0; m < positives.size(); ++m) {
    axpy(-inv_b / tau * std::exp(pos_logits[m] - pos_lse), positives[m].view(), r.grad_vq);
  }
  add_softmax_weighted_queue(neg_logits, neg_lse, queue, inv_b / tau, r.grad_vq);
  return r;
}

LossBreakdown total_loss(double mu, const LossResult& cl, const std::optional<LossResult>& he,
                         const std::optional<LossResult>& bfe) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw Error(ErrorKind::MuOutOfRange, "mu must lie in [0, 1]");
  LossBreakdown b;
  b.l_cl = cl.loss;
  b.l_he = he ? he->loss : 0.0;
  b.l_bfe = bfe ? bfe->loss : 0.0;
  b.l_total = (1.0 - mu) * b.l_cl + mu * (b.l_he + b.l_bfe);
  b.grad_vq = scaled(cl.grad_vq, 1.0 - mu);
  if (he) axpy(mu, he->grad_vq, b.grad_vq);
  if (bfe) axpy(mu, bfe->grad_vq, b.grad_vq);
  return b;
}

}  // namespace fssl
