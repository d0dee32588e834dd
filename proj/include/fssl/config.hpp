#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fssl/hallucination.hpp"
#include "fssl/poisoning.hpp"

namespace fssl {

struct DataConfig {
  std::size_t classes = 10;
  std::size_t dim = 32;
  std::size_t per_class = 200;
  double spread = 0.15;
  std::size_t probe_per_class = 100;
  std::size_t test_per_class = 50;
  std::string cifar_path;  // optional raw CIFAR-10 batch replacing the blobs
};

struct AugmentConfig {
  double sigma = 0.1;
  double mask_frac = 0.1;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embedding = 16;
  std::string activation = "tanh";
  double momentum = 0.99;
};

struct TrainConfig {
  std::size_t rounds = 100;
  std::size_t local_epochs = 3;
  std::size_t batch_size = 128;
  double lr = 0.001;
  double tau = 0.2;
  std::size_t queue_size = 512;
};

struct FederationConfig {
  std::size_t clients = 5;
  std::vector<std::size_t> malicious{0};
  double alpha = 0.0;  // <= 0 selects the IID split
  std::size_t clients_per_round = 0;  // 0 = full participation
  double malicious_participation = 1.0;
};

struct AttackConfig {
  bool enabled = true;
  double mu = 0.5;
  HallucinationConfig hallucination;
  double poison_ratio = 0.01;
  TriggerSpec trigger{{28, 29, 30, 31}, {2.0, 2.0, 2.0, 2.0}, 0};
  bool auto_target = false;       // target_class = -1 in the file
  std::size_t bfe_batch = 0;      // 0 = every poisoned sample each step
  // Triggered copies of this many batch samples join the poisoned queries
  // each attack step; 0 restricts queries to the poisoned set.
  std::size_t trigger_queries = 0;
  bool model_constraint = true;   // epsilon-ball projection
  bool dimension_constraint = true;  // bottom-k gradient masking
  double eps = 0.0;               // > 0 fixes the radius
  double eps_scale = 0.5;         // otherwise eps = eps_scale * warmup update norm
  double k_frac = 0.2;
  ZetaMode zeta_mode = ZetaMode::Magnitude;
  bool model_replacement = false;
  std::size_t stop_round = 0;     // 0 = attack never stops
};

struct DefenseConfig {
  std::string name = "none";  // none | krum | foolsgold | flame | fltrust | norm_clip
  std::size_t krum_f = 1;
  double flame_noise = 0.01;
  std::size_t fltrust_root = 64;
  double clip_bound = 1.0;
};

struct EvalConfig {
  std::size_t probe_epochs = 200;
  double probe_lr = 0.1;
  std::size_t every = 1;
  std::size_t persistence_delta = 15;
  std::size_t clean_loss_samples = 256;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  AugmentConfig augment;
  ModelConfig model;
  TrainConfig train;
  FederationConfig federation;
  AttackConfig attack;
  DefenseConfig defense;
  EvalConfig eval;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Unknown keys and ill-typed values raise ConfigInvalid naming the field.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies a "dotted.path=value" override; the value is parsed as JSON when
// possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace fssl
