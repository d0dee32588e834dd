#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fssl/config.hpp"
#include "fssl/data.hpp"
#include "fssl/encoder.hpp"
#include "fssl/eval.hpp"
#include "fssl/losses.hpp"
#include "fssl/poisoning.hpp"

namespace fssl {

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignment;  // per client, ascending
  double alpha = 0.0;
  std::uint64_t seed = 0;
};

// Per class, proportions ~ Dir(alpha * 1_K) rounded by largest remainder;
// empty clients take one sample from the largest client.
PartitionPlan dirichlet_partition(std::span<const ClassId> labels, std::size_t clients, double alpha, RngStream& rng);
// Every client receives an equal share of every class.
PartitionPlan iid_partition(std::span<const ClassId> labels, std::size_t clients, RngStream& rng);

// Pearson chi-square of the client x class count table against independence.
double heterogeneity_chi2(const PartitionPlan& plan, std::span<const ClassId> labels, std::size_t classes);

struct AttackState {
  PoisonSet poison;  // indices refer to the client's local dataset
  GradStats stats;
  double eps = 0.0;
  bool calibrated = false;
};

struct ClientState {
  std::size_t id = 0;
  EncoderPair pair;
  MemoryQueue queue{0, 0};
  std::vector<std::size_t> indices;  // into the training set
  bool malicious = false;
  std::optional<AttackState> attack;
};

struct LocalSettings {
  double lr = 0.001;
  double tau = 0.2;
  double aug_sigma = 0.1;
  double aug_mask = 0.1;
};

struct StepStats {
  double l_cl = 0.0;
  double l_he = 0.0;
  double l_bfe = 0.0;
  double l_total = 0.0;
  bool primed_only = false;  // queue was empty; keys enqueued, no update
  bool attack_active = false;
  std::size_t g_sel = 0;
  Vector clean_grad;         // gradient of the clean InfoNCE term
  Vector attack_grad;        // mu-weighted attack gradient as applied (after masking)
};

// One MoCo step on unlabeled samples: two views, InfoNCE against the queue,
// SGD on the online encoder, momentum update, keys enqueued.
StepStats client_step_benign(ClientState& c, std::span<const Vector> batch, const LocalSettings& s, RngStream& rng);

struct MaliciousStepContext {
  const AttackConfig* attack = nullptr;
  const ModelParams* global = nullptr;
  // Coordinates the attack gradient may touch; empty = no mask.
  std::span<const std::size_t> allowed;
  bool project = false;  // epsilon-ball projection after the step
  double eps = 0.0;
};

// Benign step plus the hallucination and entanglement terms. Draws for the
// clean part come from `rng` exactly as in the benign step; everything the
// attack samples comes from `attack_rng`.
StepStats client_step_malicious(ClientState& c, std::span<const Vector> batch, const LocalSettings& s,
                                const MaliciousStepContext& ctx, RngStream& rng, RngStream& attack_rng);

// Weighted mean, weights n_i / sum n.
ModelParams fedavg(std::span<const ModelParams> updates, std::span<const double> weights);

struct DefenseVerdict {
  std::string name = "none";
  std::vector<std::size_t> excluded;  // client ids
  std::vector<double> weights;        // per participating client, when the defense reweights
  bool fallback = false;
};

struct RoundMetrics {
  std::size_t round = 0;
  double acc = 0.0;
  double asr = 0.0;
  double l_cl = 0.0;
  double l_he = 0.0;
  double l_bfe = 0.0;
  double clean_loss = 0.0;
  double dist_to_global = 0.0;  // mean over uploads
  double mal_dist = 0.0;        // malicious upload, 0 when absent
  std::size_t attack_steps = 0;
  double g_sel = 0.0;           // mean hallucinated positives kept per anchor
  std::vector<std::size_t> participants;
  DefenseVerdict defense;
};

struct ExperimentResult {
  ExperimentConfig config;  // resolved (auto target filled in)
  std::vector<RoundMetrics> metrics;  // round 0 .. E
  ModelParams final_global;
  std::vector<std::pair<std::size_t, ModelParams>> checkpoints;
  double eps = 0.0;  // calibrated radius of the first malicious client
  std::size_t poisoned = 0;
};

class Simulation {
 public:
  explicit Simulation(ExperimentConfig cfg, std::size_t threads = 0);

  const ExperimentConfig& config() const { return cfg_; }
  const ModelParams& global() const { return global_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const Dataset& train_set() const { return train_; }
  const PartitionPlan& partition() const { return plan_; }
  const TriggerSpec& trigger() const { return cfg_.attack.trigger; }

  // Broadcast, local training, optional model replacement and defense,
  // aggregation, evaluation.
  RoundMetrics run_round(std::size_t round);
  RoundMetrics evaluate(std::size_t round) const;

 private:
  struct Upload;
  Upload train_client(ClientState& c, std::size_t round) const;
  ModelParams aggregate(std::vector<Upload>& uploads, std::size_t round, DefenseVerdict& verdict);
  ModelParams server_update(std::size_t round);

  ExperimentConfig cfg_;
  std::size_t threads_;
  Dataset train_;
  Dataset probe_;
  Dataset test_;
  Dataset root_;
  PartitionPlan plan_;
  ModelParams global_;
  std::vector<ClientState> clients_;
  std::vector<Vector> fg_history_;
  ClientState server_client_;
  Matrix clean_q_;
  Matrix clean_k_;
};

using RoundObserver = std::function<void(const RoundMetrics&, const ModelParams&)>;

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t threads = 0,
                                const RoundObserver& observer = {});

// FSSL_LAB_THREADS if set, else hardware concurrency.
std::size_t default_thread_count();

std::vector<double> asr_series(std::span<const RoundMetrics> metrics);
std::vector<double> clean_loss_series(std::span<const RoundMetrics> metrics);

}  // namespace fssl
