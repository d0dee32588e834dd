#include "fssl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fssl/error.hpp"

namespace fssl {

using nlohmann::json;

namespace {

// Reads the members of one JSON object, remembering which keys were used so
// leftovers can be reported as unknown fields.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(full(key), e.what());
    }
  }

  Section child(const char* key) {
    used_.insert(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, full(key));
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) fail(full(k.c_str()), "unknown field");
    }
  }

  std::string full(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& field, const std::string& why) {
    throw Error(ErrorKind::ConfigInvalid, field + ": " + why);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) Section::fail(field, why);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(data.classes >= 2, "data.classes", "must be >= 2");
  require(data.dim >= data.classes || !data.cifar_path.empty(), "data.dim", "must be >= data.classes");
  require(data.per_class >= 1, "data.per_class", "must be >= 1");
  require(data.spread >= 0.0, "data.spread", "must be >= 0");
  require(data.probe_per_class >= 1, "data.probe_per_class", "must be >= 1");
  require(data.test_per_class >= 1, "data.test_per_class", "must be >= 1");
  require(augment.sigma >= 0.0, "augment.sigma", "must be >= 0");
  require(augment.mask_frac >= 0.0 && augment.mask_frac < 1.0, "augment.mask_frac", "must lie in [0, 1)");
  require(!model.hidden.empty(), "model.hidden", "needs at least one hidden layer");
  require(model.embedding >= 2, "model.embedding", "must be >= 2");
  require(model.activation == "tanh" || model.activation == "relu", "model.activation", "expected tanh or relu");
  require(model.momentum >= 0.0 && model.momentum < 1.0, "model.momentum", "must lie in [0, 1)");
  require(train.local_epochs >= 1, "train.local_epochs", "must be >= 1");
  require(train.batch_size >= 1, "train.batch_size", "must be >= 1");
  require(train.lr >= 0.0, "train.lr", "must be >= 0");
  require(train.tau > 0.0, "train.tau", "must be > 0");
  require(train.queue_size >= 1, "train.queue_size", "must be >= 1");
  require(federation.clients >= 1, "federation.clients", "must be >= 1");
  for (std::size_t m : federation.malicious) {
    require(m < federation.clients, "federation.malicious", "client id " + std::to_string(m) + " out of range");
  }
  require(federation.clients_per_round <= federation.clients, "federation.clients_per_round",
          "cannot exceed federation.clients");
  require(federation.malicious_participation >= 0.0 && federation.malicious_participation <= 1.0,
          "federation.malicious_participation", "must lie in [0, 1]");
  require(attack.mu >= 0.0 && attack.mu <= 1.0, "attack.mu", "must lie in [0, 1]");
  require(attack.poison_ratio >= 0.0 && attack.poison_ratio <= 1.0, "attack.poison_ratio", "must lie in [0, 1]");
  require(attack.k_frac > 0.0 && attack.k_frac <= 1.0, "attack.k_frac", "must lie in (0, 1]");
  require(attack.eps >= 0.0, "attack.eps", "must be >= 0");
  require(attack.eps_scale > 0.0, "attack.eps_scale", "must be > 0");
  require(attack.hallucination.top_k <= train.queue_size, "attack.top_k", "cannot exceed train.queue_size");
  attack.hallucination.validate();
  try {
    if (data.cifar_path.empty()) attack.trigger.validate(data.dim);
  } catch (const Error& e) {
    Section::fail("attack.trigger", e.what());
  }
  if (!attack.auto_target) {
    require(attack.trigger.target_class >= 0 && static_cast<std::size_t>(attack.trigger.target_class) < data.classes,
            "attack.target_class", "must be a valid class id or -1");
  }
  static const std::set<std::string> kDefenses{"none", "krum", "foolsgold", "flame", "fltrust", "norm_clip"};
  require(kDefenses.count(defense.name) == 1, "defense.name",
          "expected one of none, krum, foolsgold, flame, fltrust, norm_clip");
  require(defense.clip_bound > 0.0, "defense.clip_bound", "must be > 0");
  require(defense.flame_noise >= 0.0, "defense.flame_noise", "must be >= 0");
  require(defense.fltrust_root >= 2, "defense.fltrust_root", "must be >= 2");
  require(eval.every >= 1, "eval.every", "must be >= 1");
  require(eval.probe_lr >= 0.0, "eval.probe_lr", "must be >= 0");
  require(eval.clean_loss_samples >= 4, "eval.clean_loss_samples", "must be >= 4");
}

json to_json(const ExperimentConfig& c) {
  const auto& h = c.attack.hallucination;
  return json{
      {"seed", c.seed},
      {"data",
       {{"classes", c.data.classes},
        {"dim", c.data.dim},
        {"per_class", c.data.per_class},
        {"spread", c.data.spread},
        {"probe_per_class", c.data.probe_per_class},
        {"test_per_class", c.data.test_per_class},
        {"cifar_path", c.data.cifar_path}}},
      {"augment", {{"sigma", c.augment.sigma}, {"mask_frac", c.augment.mask_frac}}},
      {"model",
       {{"hidden", c.model.hidden},
        {"embedding", c.model.embedding},
        {"activation", c.model.activation},
        {"momentum", c.model.momentum}}},
      {"train",
       {{"rounds", c.train.rounds},
        {"local_epochs", c.train.local_epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"tau", c.train.tau},
        {"queue_size", c.train.queue_size}}},
      {"federation",
       {{"clients", c.federation.clients},
        {"malicious", c.federation.malicious},
        {"alpha", c.federation.alpha},
        {"clients_per_round", c.federation.clients_per_round},
        {"malicious_participation", c.federation.malicious_participation}}},
      {"attack",
       {{"enabled", c.attack.enabled},
        {"mu", c.attack.mu},
        {"lambda", h.lambda},
        {"candidates", h.candidates},
        {"top_k", h.top_k},
        {"prototypes", h.prototypes},
        {"grid_step", h.grid_step},
        {"refine_tol", h.refine_tol},
        {"kmeans_iters", h.kmeans_iters},
        {"poison_ratio", c.attack.poison_ratio},
        {"target_class", c.attack.auto_target ? -1 : c.attack.trigger.target_class},
        {"trigger", {{"coords", c.attack.trigger.coords}, {"values", c.attack.trigger.values}}},
        {"bfe_batch", c.attack.bfe_batch},
        {"trigger_queries", c.attack.trigger_queries},
        {"model_constraint", c.attack.model_constraint},
        {"dimension_constraint", c.attack.dimension_constraint},
        {"eps", c.attack.eps},
        {"eps_scale", c.attack.eps_scale},
        {"k_frac", c.attack.k_frac},
        {"zeta_mode", c.attack.zeta_mode == ZetaMode::Magnitude ? "magnitude" : "indicator"},
        {"model_replacement", c.attack.model_replacement},
        {"stop_round", c.attack.stop_round}}},
      {"defense",
       {{"name", c.defense.name},
        {"krum_f", c.defense.krum_f},
        {"flame_noise", c.defense.flame_noise},
        {"fltrust_root", c.defense.fltrust_root},
        {"clip_bound", c.defense.clip_bound}}},
      {"eval",
       {{"probe_epochs", c.eval.probe_epochs},
        {"probe_lr", c.eval.probe_lr},
        {"every", c.eval.every},
        {"persistence_delta", c.eval.persistence_delta},
        {"clean_loss_samples", c.eval.clean_loss_samples}}},
      {"checkpoint_every", c.checkpoint_every},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  root.read("checkpoint_every", c.checkpoint_every);
  {
    Section s = root.child("data");
    s.read("classes", c.data.classes);
    s.read("dim", c.data.dim);
    s.read("per_class", c.data.per_class);
    s.read("spread", c.data.spread);
    s.read("probe_per_class", c.data.probe_per_class);
    s.read("test_per_class", c.data.test_per_class);
    s.read("cifar_path", c.data.cifar_path);
    s.finish();
  }
  {
    Section s = root.child("augment");
    s.read("sigma", c.augment.sigma);
    s.read("mask_frac", c.augment.mask_frac);
    s.finish();
  }
  {
    Section s = root.child("model");
    s.read("hidden", c.model.hidden);
    s.read("embedding", c.model.embedding);
    s.read("activation", c.model.activation);
    s.read("momentum", c.model.momentum);
    s.finish();
  }
  {
    Section s = root.child("train");
    s.read("rounds", c.train.rounds);
    s.read("local_epochs", c.train.local_epochs);
    s.read("batch_size", c.train.batch_size);
    s.read("lr", c.train.lr);
    s.read("tau", c.train.tau);
    s.read("queue_size", c.train.queue_size);
    s.finish();
  }
  {
    Section s = root.child("federation");
    s.read("clients", c.federation.clients);
    s.read("malicious", c.federation.malicious);
    s.read("alpha", c.federation.alpha);
    s.read("clients_per_round", c.federation.clients_per_round);
    s.read("malicious_participation", c.federation.malicious_participation);
    s.finish();
  }
  {
    Section s = root.child("attack");
    auto& h = c.attack.hallucination;
    s.read("enabled", c.attack.enabled);
    s.read("mu", c.attack.mu);
    s.read("lambda", h.lambda);
    s.read("candidates", h.candidates);
    s.read("top_k", h.top_k);
    s.read("prototypes", h.prototypes);
    s.read("grid_step", h.grid_step);
    s.read("refine_tol", h.refine_tol);
    s.read("kmeans_iters", h.kmeans_iters);
    s.read("poison_ratio", c.attack.poison_ratio);
    int target = c.attack.trigger.target_class;
    s.read("target_class", target);
    c.attack.auto_target = target < 0;
    c.attack.trigger.target_class = target < 0 ? 0 : target;
    {
      Section t = s.child("trigger");
      t.read("coords", c.attack.trigger.coords);
      t.read("values", c.attack.trigger.values);
      t.finish();
    }
    s.read("bfe_batch", c.attack.bfe_batch);
    s.read("trigger_queries", c.attack.trigger_queries);
    s.read("model_constraint", c.attack.model_constraint);
    s.read("dimension_constraint", c.attack.dimension_constraint);
    s.read("eps", c.attack.eps);
    s.read("eps_scale", c.attack.eps_scale);
    s.read("k_frac", c.attack.k_frac);
    std::string zeta = c.attack.zeta_mode == ZetaMode::Magnitude ? "magnitude" : "indicator";
    s.read("zeta_mode", zeta);
    try {
      c.attack.zeta_mode = parse_zeta_mode(zeta);
    } catch (const Error&) {
      Section::fail("attack.zeta_mode", "expected magnitude or indicator");
    }
    s.read("model_replacement", c.attack.model_replacement);
    s.read("stop_round", c.attack.stop_round);
    s.finish();
  }
  {
    Section s = root.child("defense");
    s.read("name", c.defense.name);
    s.read("krum_f", c.defense.krum_f);
    s.read("flame_noise", c.defense.flame_noise);
    s.read("fltrust_root", c.defense.fltrust_root);
    s.read("clip_bound", c.defense.clip_bound);
    s.finish();
  }
  {
    Section s = root.child("eval");
    s.read("probe_epochs", c.eval.probe_epochs);
    s.read("probe_lr", c.eval.probe_lr);
    s.read("every", c.eval.every);
    s.read("persistence_delta", c.eval.persistence_delta);
    s.read("clean_loss_samples", c.eval.clean_loss_samples);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigInvalid, "config: cannot read " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, "config: " + std::string(e.what()));
  }
  return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::ConfigInvalid, "override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw Error(ErrorKind::ConfigInvalid, key + ": cannot descend into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw Error(ErrorKind::ConfigInvalid, key + ": cannot descend into a non-object");
  (*node)[parts.back()] = value;
}

}  // namespace fssl
