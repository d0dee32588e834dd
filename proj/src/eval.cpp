#include "fssl/eval.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "fssl/error.hpp"

namespace fssl {

std::vector<ClassId> LinearProbe::predict(const Matrix& features) const {
  Matrix logits = features * weights.transpose();
  logits.rowwise() += bias.transpose();
  std::vector<ClassId> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<ClassId>(best);
  }
  return out;
}

LinearProbe train_probe(const Matrix& features, std::span<const ClassId> labels, std::size_t classes,
                        std::size_t epochs, double lr) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw Error(ErrorKind::DimMismatch, "probe features and labels differ in count");
  }
  if (std::set<ClassId>(labels.begin(), labels.end()).size() < 2) {
    throw Error(ErrorKind::SingleClass, "linear probe needs at least two classes");
  }
  const auto n = features.rows();
  const auto c = static_cast<Eigen::Index>(classes);
  LinearProbe probe{Matrix::Zero(c, features.cols()), Eigen::VectorXd::Zero(c)};
  Matrix onehot = Matrix::Zero(n, c);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  for (std::size_t e = 0; e < epochs; ++e) {
    Matrix logits = features * probe.weights.transpose();
    logits.rowwise() += probe.bias.transpose();
    const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    logits.colwise() -= row_max;
    Matrix p = logits.array().exp().matrix();
    const Eigen::VectorXd z = p.rowwise().sum();
    p = p.array().colwise() / z.array();
    const Matrix delta = (p - onehot) / static_cast<double>(n);
    probe.weights -= lr * (delta.transpose() * features);
    probe.bias -= lr * delta.colwise().sum().transpose();
  }
  return probe;
}

LinearProbe linear_probe(const ModelParams& encoder, const Dataset& train, std::size_t epochs, double lr) {
  const Matrix feats = embed_batch(encoder, rows_to_matrix(train.samples));
  return train_probe(feats, train.labels, train.classes, epochs, lr);
}

double accuracy(const LinearProbe& probe, const Matrix& features, std::span<const ClassId> labels) {
  if (labels.empty()) throw Error(ErrorKind::EmptyTestSet, "accuracy on an empty set");
  const std::vector<ClassId> pred = probe.predict(features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double acc(const LinearProbe& probe, const ModelParams& encoder, const Dataset& test) {
  if (test.size() == 0) throw Error(ErrorKind::EmptyTestSet, "clean test set is empty");
  return accuracy(probe, embed_batch(encoder, rows_to_matrix(test.samples)), test.labels);
}

double asr(const LinearProbe& probe, const ModelParams& encoder, const Dataset& test, const TriggerSpec& trig) {
  std::vector<Vector> triggered;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] != trig.target_class) triggered.push_back(embed_trigger(test.samples[i], trig));
  }
  if (triggered.empty()) throw Error(ErrorKind::NoEligibleSamples, "no non-target samples to trigger");
  const std::vector<ClassId> pred = probe.predict(embed_batch(encoder, rows_to_matrix(triggered)));
  const auto hits = std::count(pred.begin(), pred.end(), trig.target_class);
  return static_cast<double>(hits) / static_cast<double>(triggered.size());
}

std::vector<PersistencePoint> persistence_curve(std::span<const double> asr_by_round, std::size_t stop_round,
                                                std::size_t delta) {
  std::vector<PersistencePoint> out;
  if (stop_round >= asr_by_round.size()) return out;
  const double peak = asr_by_round[stop_round];
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t r = stop_round + k * delta;
    if (r >= asr_by_round.size()) break;
    PersistencePoint pt{r, asr_by_round[r], std::nullopt};
    if (peak > 0.0) pt.retention = 100.0 * asr_by_round[r] / peak;
    out.push_back(pt);
    if (delta == 0) break;
  }
  return out;
}

bool non_divergent(std::span<const double> trace, std::size_t window) {
  if (trace.empty()) return true;
  const std::size_t w = std::min(window, trace.size());
  const double head = std::accumulate(trace.begin(), trace.begin() + static_cast<std::ptrdiff_t>(w), 0.0) / w;
  const double tail = std::accumulate(trace.end() - static_cast<std::ptrdiff_t>(w), trace.end(), 0.0) / w;
  return tail <= head;
}

double clean_contrastive_loss(const ModelParams& encoder, const Matrix& query_views, const Matrix& key_views,
                              double tau) {
  const Eigen::Index n = query_views.rows();
  const Eigen::Index half = n / 2;
  if (half == 0) throw Error(ErrorKind::EmptyTestSet, "clean loss needs at least two views");
  const Matrix q = embed_batch(encoder, query_views);
  const Matrix k = embed_batch(encoder, key_views);
  MemoryQueue negatives(static_cast<std::size_t>(n - half), static_cast<std::size_t>(k.cols()));
  for (Eigen::Index i = half; i < n; ++i) {
    negatives.push(normalize(std::span<const double>(k.row(i).data(), static_cast<std::size_t>(k.cols()))));
  }
  return info_nce_batch(q.topRows(half), k.topRows(half), negatives, tau).loss;
}

}  // namespace fssl
