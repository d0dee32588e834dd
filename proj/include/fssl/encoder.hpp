#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fssl/core.hpp"

namespace fssl {

enum class Activation : std::uint32_t { Tanh = 0, Relu = 1 };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

// Layer widths from input to embedding plus one activation per hidden layer.
// Parameters are stored layer by layer: weights (out x in, row-major) then
// biases (out).
struct LayerLayout {
  std::vector<std::size_t> dims;
  std::vector<Activation> activations;

  static LayerLayout mlp(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t embedding,
                         Activation act = Activation::Tanh);

  void validate() const;
  std::size_t input_dim() const { return dims.front(); }
  std::size_t embedding_dim() const { return dims.back(); }
  std::size_t layers() const { return dims.size() - 1; }
  std::size_t param_count() const;
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;
  bool operator==(const LayerLayout&) const = default;
};

struct ModelParams {
  Vector flat;
  LayerLayout layout;

  std::size_t size() const { return flat.size(); }
};

// Online encoder f, momentum target g.
struct EncoderPair {
  ModelParams online;
  ModelParams target;
  double momentum = 0.99;
};

// Activation record of one batched forward pass.
struct ForwardCache {
  LayerLayout layout;
  std::vector<Matrix> activations;  // activations[0] is the input, then each hidden output
  std::vector<Matrix> preacts;      // pre-activation of every hidden layer
  Matrix raw;                       // un-normalized output
  Eigen::VectorXd raw_norm;         // per row
  Matrix emb;                       // normalized output
};

struct ForwardResult {
  UnitVector emb;
  ForwardCache cache;
};

struct BatchForward {
  Matrix emb;  // one unit-norm row per input row
  ForwardCache cache;
};

ModelParams init_params(const LayerLayout& layout, RngStream& rng);

ForwardResult forward(const ModelParams& p, std::span<const double> x);
BatchForward forward_batch(const ModelParams& p, const Matrix& inputs);
// Embeddings only, no cache retained.
Matrix embed_batch(const ModelParams& p, const Matrix& inputs);

// Vector-Jacobian product: gradient of sum_i d_emb_i . emb_i w.r.t. the flat
// parameter vector, including the normalization Jacobian.
Vector backward(const ModelParams& p, const ForwardCache& cache, std::span<const double> d_emb);
Vector backward_batch(const ModelParams& p, const ForwardCache& cache, const Matrix& d_emb);

// target <- m*target + (1-m)*online
EncoderPair momentum_update(EncoderPair pair);
void momentum_update_inplace(EncoderPair& pair);

// Checkpoint: "FSSL", u32 version, u32 layer-count+1, u32 dims..., u32
// activation per hidden layer, u32 parameter count, then little-endian f32
// parameters.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const ModelParams& p, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

Matrix rows_to_matrix(std::span<const Vector> rows);

}  // namespace fssl
