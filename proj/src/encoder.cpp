#include "fssl/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fssl/error.hpp"

namespace fssl {

using RowMap = Eigen::Map<const Matrix>;

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw Error(ErrorKind::ConfigInvalid, "model.activation: unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

LayerLayout LayerLayout::mlp(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t embedding,
                             Activation act) {
  LayerLayout layout;
  layout.dims.push_back(input);
  for (std::size_t h : hidden) layout.dims.push_back(h);
  layout.dims.push_back(embedding);
  layout.activations.assign(hidden.size(), act);
  layout.validate();
  return layout;
}

void LayerLayout::validate() const {
  if (dims.size() < 3) throw Error(ErrorKind::LayoutMismatch, "layout needs at least one hidden layer");
  if (dims.back() < 2) throw Error(ErrorKind::LayoutMismatch, "embedding dimension must be >= 2");
  if (activations.size() != dims.size() - 2) {
    throw Error(ErrorKind::LayoutMismatch, "one activation per hidden layer required");
  }
  for (std::size_t d : dims) {
    if (d == 0) throw Error(ErrorKind::LayoutMismatch, "zero-width layer");
  }
}

std::size_t LayerLayout::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
  return n;
}

std::size_t LayerLayout::weight_offset(std::size_t layer) const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layer; ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
  return n;
}

std::size_t LayerLayout::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + dims[layer] * dims[layer + 1];
}

ModelParams init_params(const LayerLayout& layout, RngStream& rng) {
  layout.validate();
  ModelParams p{Vector(layout.param_count(), 0.0), layout};
  for (std::size_t l = 0; l < layout.layers(); ++l) {
    const std::size_t fan_in = layout.dims[l];
    const std::size_t fan_out = layout.dims[l + 1];
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    const std::size_t off = layout.weight_offset(l);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) p.flat[off + i] = rng.uniform(-s, s);
  }
  return p;
}

namespace {

void check_params(const ModelParams& p) {
  if (p.flat.size() != p.layout.param_count()) {
    throw Error(ErrorKind::LayoutMismatch, "parameter vector size does not match its layout");
  }
}

void apply_activation(Activation a, Matrix& m) {
  if (a == Activation::Tanh) {
    m = m.array().tanh().matrix();
  } else {
    m = m.array().max(0.0).matrix();
  }
}

// d act / d z evaluated from pre-activation z and activation h.
Matrix activation_grad(Activation a, const Matrix& z, const Matrix& h) {
  if (a == Activation::Tanh) return (1.0 - h.array().square()).matrix();
  return (z.array() > 0.0).cast<double>().matrix();
}

}  // namespace

BatchForward forward_batch(const ModelParams& p, const Matrix& inputs) {
  check_params(p);
  const LayerLayout& layout = p.layout;
  if (static_cast<std::size_t>(inputs.cols()) != layout.input_dim()) {
    throw Error(ErrorKind::DimMismatch, "input width " + std::to_string(inputs.cols()) + " != layout input " +
                                            std::to_string(layout.input_dim()));
  }
  BatchForward out;
  ForwardCache& cache = out.cache;
  cache.layout = layout;
  cache.activations.push_back(inputs);
  for (std::size_t l = 0; l < layout.layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(layout.dims[l]);
    const auto outw = static_cast<Eigen::Index>(layout.dims[l + 1]);
    RowMap w(p.flat.data() + layout.weight_offset(l), outw, in);
    Eigen::Map<const Eigen::RowVectorXd> b(p.flat.data() + layout.bias_offset(l), outw);
    Matrix z = cache.activations.back() * w.transpose();
    z.rowwise() += b;
    if (l + 1 < layout.layers()) {
      Matrix h = z;
      apply_activation(layout.activations[l], h);
      cache.preacts.push_back(std::move(z));
      cache.activations.push_back(std::move(h));
    } else {
      cache.raw = std::move(z);
    }
  }
  cache.raw_norm = cache.raw.rowwise().norm();
  for (Eigen::Index i = 0; i < cache.raw_norm.size(); ++i) {
    if (!(cache.raw_norm(i) >= 1e-12)) {
      throw Error(ErrorKind::ZeroNorm, "encoder raw output has zero norm");
    }
  }
  cache.emb = cache.raw.array().colwise() / cache.raw_norm.array();
  out.emb = cache.emb;
  return out;
}

Matrix embed_batch(const ModelParams& p, const Matrix& inputs) { return forward_batch(p, inputs).emb; }

ForwardResult forward(const ModelParams& p, std::span<const double> x) {
  Matrix input(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) input(0, static_cast<Eigen::Index>(i)) = x[i];
  BatchForward bf = forward_batch(p, input);
  Vector emb(bf.emb.data(), bf.emb.data() + bf.emb.cols());
  return {UnitVector::from_unit(std::move(emb)), std::move(bf.cache)};
}

Vector backward_batch(const ModelParams& p, const ForwardCache& cache, const Matrix& d_emb) {
  check_params(p);
  const LayerLayout& layout = p.layout;
  if (!(cache.layout == layout) || cache.activations.size() != layout.layers()) {
    throw Error(ErrorKind::CacheMismatch, "forward cache was produced by a different layout");
  }
  if (d_emb.rows() != cache.emb.rows() || static_cast<std::size_t>(d_emb.cols()) != layout.embedding_dim()) {
    throw Error(ErrorKind::CacheMismatch, "cotangent shape does not match the cached batch");
  }
  Vector grad(layout.param_count(), 0.0);

  // Through normalization: (I - e e^T) g / |raw|.
  const Eigen::VectorXd proj = (cache.emb.array() * d_emb.array()).rowwise().sum();
  Matrix delta = d_emb - (cache.emb.array().colwise() * proj.array()).matrix();
  delta = delta.array().colwise() / cache.raw_norm.array();

  for (std::size_t l = layout.layers(); l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(layout.dims[l]);
    const auto outw = static_cast<Eigen::Index>(layout.dims[l + 1]);
    Eigen::Map<Matrix> gw(grad.data() + layout.weight_offset(l), outw, in);
    Eigen::Map<Eigen::RowVectorXd> gb(grad.data() + layout.bias_offset(l), outw);
    gw.noalias() = delta.transpose() * cache.activations[l];
    gb = delta.colwise().sum();
    if (l > 0) {
      RowMap w(p.flat.data() + layout.weight_offset(l), outw, in);
      Matrix dh = delta * w;
      delta = dh.cwiseProduct(activation_grad(layout.activations[l - 1], cache.preacts[l - 1], cache.activations[l]));
    }
  }
  return grad;
}

Vector backward(const ModelParams& p, const ForwardCache& cache, std::span<const double> d_emb) {
  if (cache.emb.rows() != 1) throw Error(ErrorKind::CacheMismatch, "single-sample backward needs a batch of 1");
  if (d_emb.size() != p.layout.embedding_dim()) {
    throw Error(ErrorKind::CacheMismatch, "cotangent has wrong embedding dimension");
  }
  Matrix g(1, static_cast<Eigen::Index>(d_emb.size()));
  for (std::size_t i = 0; i < d_emb.size(); ++i) g(0, static_cast<Eigen::Index>(i)) = d_emb[i];
  return backward_batch(p, cache, g);
}

void momentum_update_inplace(EncoderPair& pair) {
  if (!(pair.online.layout == pair.target.layout) || pair.online.flat.size() != pair.target.flat.size()) {
    throw Error(ErrorKind::LayoutMismatch, "online and target layouts differ");
  }
  const double m = pair.momentum;
  if (m == 0.0) {
    pair.target.flat = pair.online.flat;
    return;
  }
  // target + (1-m)(online - target): leaves target bit-identical when it
  // already equals online.
  for (std::size_t i = 0; i < pair.target.flat.size(); ++i) {
    pair.target.flat[i] += (1.0 - m) * (pair.online.flat[i] - pair.target.flat[i]);
  }
}

EncoderPair momentum_update(EncoderPair pair) {
  momentum_update_inplace(pair);
  return pair;
}

Matrix rows_to_matrix(std::span<const Vector> rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw Error(ErrorKind::DimMismatch, "ragged rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void write_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw Error(ErrorKind::BadCheckpoint, "truncated header");
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  check_params(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write("FSSL", 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(p.layout.dims.size()));
  for (std::size_t d : p.layout.dims) write_u32(out, static_cast<std::uint32_t>(d));
  for (Activation a : p.layout.activations) write_u32(out, static_cast<std::uint32_t>(a));
  write_u32(out, static_cast<std::uint32_t>(p.flat.size()));
  for (double v : p.flat) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FSSL", 4) != 0) {
    throw Error(ErrorKind::BadCheckpoint, "bad magic in " + path.string());
  }
  if (read_u32(in) != kCheckpointVersion) throw Error(ErrorKind::BadCheckpoint, "unsupported version");
  const std::uint32_t ndims = read_u32(in);
  if (ndims < 3 || ndims > 64) throw Error(ErrorKind::BadCheckpoint, "implausible layer count");
  LayerLayout layout;
  for (std::uint32_t i = 0; i < ndims; ++i) layout.dims.push_back(read_u32(in));
  for (std::uint32_t i = 0; i + 2 < ndims; ++i) {
    const std::uint32_t a = read_u32(in);
    if (a > 1) throw Error(ErrorKind::BadCheckpoint, "unknown activation code");
    layout.activations.push_back(static_cast<Activation>(a));
  }
  layout.validate();
  const std::uint32_t count = read_u32(in);
  if (count != layout.param_count()) throw Error(ErrorKind::BadCheckpoint, "parameter count mismatch");
  ModelParams p{Vector(count), layout};
  for (std::uint32_t i = 0; i < count; ++i) {
    float f = 0.0F;
    if (!in.read(reinterpret_cast<char*>(&f), 4)) throw Error(ErrorKind::BadCheckpoint, "truncated parameters");
    p.flat[i] = f;
  }
  return p;
}

}  // namespace fssl
