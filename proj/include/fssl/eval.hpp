#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fssl/data.hpp"
#include "fssl/encoder.hpp"
#include "fssl/losses.hpp"
#include "fssl/poisoning.hpp"

namespace fssl {

// Multinomial logistic regression on frozen features.
struct LinearProbe {
  Matrix weights;        // classes x feature_dim
  Eigen::VectorXd bias;  // classes

  std::size_t classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::vector<ClassId> predict(const Matrix& features) const;
};

// Full-batch gradient descent on cross-entropy from zero initialization.
LinearProbe train_probe(const Matrix& features, std::span<const ClassId> labels, std::size_t classes,
                        std::size_t epochs, double lr);

LinearProbe linear_probe(const ModelParams& encoder, const Dataset& train, std::size_t epochs, double lr);

double accuracy(const LinearProbe& probe, const Matrix& features, std::span<const ClassId> labels);

double acc(const LinearProbe& probe, const ModelParams& encoder, const Dataset& test);

// Fraction of triggered non-target samples predicted as the target class.
double asr(const LinearProbe& probe, const ModelParams& encoder, const Dataset& test, const TriggerSpec& trig);

struct PersistencePoint {
  std::size_t round = 0;
  double asr = 0.0;
  std::optional<double> retention;  // percent of ASR at the stopping round
};

// Retention at stop, stop+delta, stop+2*delta. Rounds beyond the series are
// omitted; retention is empty when the stopping-round ASR is zero.
std::vector<PersistencePoint> persistence_curve(std::span<const double> asr_by_round, std::size_t stop_round,
                                                std::size_t delta);

// Trailing-window mean does not exceed the leading-window mean.
bool non_divergent(std::span<const double> trace, std::size_t window = 20);

// Mean InfoNCE of an encoder used as both query and key network on fixed
// views: the first half of the views are queries, the second half's keys
// form the negative queue.
double clean_contrastive_loss(const ModelParams& encoder, const Matrix& query_views, const Matrix& key_views,
                              double tau);

}  // namespace fssl
