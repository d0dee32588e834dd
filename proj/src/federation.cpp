#include "fssl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

#include "fssl/defenses.hpp"
#include "fssl/error.hpp"
#include "fssl/hallucination.hpp"

namespace fssl {

namespace {

// Stream tags; every random decision in a run derives from (seed, tag, ...).
enum StreamTag : std::uint64_t {
  kStreamData = 1,
  kStreamProbe,
  kStreamTest,
  kStreamPartition,
  kStreamInit,
  kStreamPoison,
  kStreamSchedule,
  kStreamClient,
  kStreamAttack,
  kStreamDefense,
  kStreamEvalViews,
  kStreamRoot,
  kStreamServer,
};

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

UnitVector row_unit(const Matrix& m, Eigen::Index i) {
  return UnitVector::from_unit(Vector(m.row(i).data(), m.row(i).data() + m.cols()));
}

std::span<const double> row_span(const Matrix& m, Eigen::Index i) {
  return {m.row(i).data(), static_cast<std::size_t>(m.cols())};
}

struct Views {
  Matrix q;
  Matrix k;
};

Views make_views(std::span<const Vector> batch, double sigma, double mask, RngStream& rng) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(batch.front().size());
  Views v{Matrix(n, d), Matrix(n, d)};
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [xq, xk] = augment_pair(batch[static_cast<std::size_t>(i)], sigma, mask, rng);
    v.q.row(i) = Eigen::Map<const Eigen::RowVectorXd>(xq.data(), d);
    v.k.row(i) = Eigen::Map<const Eigen::RowVectorXd>(xk.data(), d);
  }
  return v;
}

struct CleanPass {
  bool primed = false;
  std::vector<UnitVector> keys;
  double loss = 0.0;
  Vector grad;
};

CleanPass clean_pass(const ClientState& c, std::span<const Vector> batch, const LocalSettings& s, RngStream& rng) {
  if (batch.empty()) throw Error(ErrorKind::EmptyUpdateSet, "training batch is empty");
  const Views views = make_views(batch, s.aug_sigma, s.aug_mask, rng);
  const Matrix keys = embed_batch(c.pair.target, views.k);
  CleanPass out;
  out.keys.reserve(batch.size());
  for (Eigen::Index i = 0; i < keys.rows(); ++i) out.keys.push_back(row_unit(keys, i));
  if (c.queue.empty()) {
    out.primed = true;
    return out;
  }
  const BatchForward fq = forward_batch(c.pair.online, views.q);
  BatchLossResult loss = info_nce_batch(fq.emb, keys, c.queue, s.tau);
  out.loss = loss.loss;
  const Matrix& g = loss.grad;
  out.grad = backward_batch(c.pair.online, fq.cache, g);
  return out;
}

void finish_step(ClientState& c, const std::vector<UnitVector>& keys) {
  momentum_update_inplace(c.pair);
  c.queue.push(keys);
}

}  // namespace

StepStats client_step_benign(ClientState& c, std::span<const Vector> batch, const LocalSettings& s, RngStream& rng) {
  CleanPass cp = clean_pass(c, batch, s, rng);
  StepStats st;
  if (cp.primed) {
    st.primed_only = true;
    c.queue.push(cp.keys);
    return st;
  }
  st.l_cl = st.l_total = cp.loss;
  axpy(-s.lr, cp.grad, c.pair.online.flat);
  st.clean_grad = std::move(cp.grad);
  finish_step(c, cp.keys);
  return st;
}

StepStats client_step_malicious(ClientState& c, std::span<const Vector> batch, const LocalSettings& s,
                                const MaliciousStepContext& ctx, RngStream& rng, RngStream& attack_rng) {
  if (!c.malicious || !c.attack || ctx.attack == nullptr) {
    throw Error(ErrorKind::ConfigInvalid, "malicious step on a client without attack state");
  }
  const AttackConfig& a = *ctx.attack;
  CleanPass cp = clean_pass(c, batch, s, rng);
  StepStats st;
  if (cp.primed) {
    st.primed_only = true;
    c.queue.push(cp.keys);
    return st;
  }
  st.l_cl = cp.loss;
  const double mu = a.mu;
  const std::vector<Vector>& poison = c.attack->poison.poisoned.samples;
  st.attack_active = a.enabled && mu > 0.0 && !poison.empty() && c.queue.size() >= a.hallucination.top_k;

  Vector update = cp.grad;
  if (st.attack_active) {
    update = scaled(cp.grad, 1.0 - mu);
    const PrototypeSet ps = build_prototypes(c.queue, a.hallucination, attack_rng);

    std::vector<Vector> picked;
    if (a.bfe_batch == 0 || a.bfe_batch >= poison.size()) {
      picked = poison;
    } else {
      for (std::size_t i : attack_rng.sample_without_replacement(poison.size(), a.bfe_batch)) {
        picked.push_back(poison[i]);
      }
    }
    const Views views = make_views(picked, s.aug_sigma, s.aug_mask, attack_rng);
    const Matrix key_emb = embed_batch(c.pair.target, views.k);
    std::vector<UnitVector> pos_keys;
    for (Eigen::Index i = 0; i < key_emb.rows(); ++i) pos_keys.push_back(row_unit(key_emb, i));

    // Queries: the poisoned samples themselves, then optionally triggered
    // copies of batch samples, each paired with a poisoned anchor.
    Matrix queries = views.q;
    std::vector<std::size_t> anchor(picked.size());
    std::iota(anchor.begin(), anchor.end(), 0);
    if (a.trigger_queries > 0) {
      std::vector<Vector> triggered;
      for (std::size_t i : attack_rng.sample_without_replacement(batch.size(), std::min(a.trigger_queries, batch.size()))) {
        triggered.push_back(embed_trigger(batch[i], a.trigger));
        anchor.push_back(attack_rng.index(picked.size()));
      }
      const Views tv = make_views(triggered, s.aug_sigma, s.aug_mask, attack_rng);
      queries.conservativeResize(queries.rows() + tv.q.rows(), Eigen::NoChange);
      queries.bottomRows(tv.q.rows()) = tv.q;
    }
    const BatchForward fq = forward_batch(c.pair.online, queries);

    std::vector<HallucinatedPositives> hallucinated;
    for (const auto& key : pos_keys) {
      hallucinated.push_back(generate_positives(key, ps, a.hallucination, attack_rng));
      st.g_sel += hallucinated.back().selected;
    }

    const double na = static_cast<double>(anchor.size());
    Matrix g = Matrix::Zero(fq.emb.rows(), fq.emb.cols());
    for (Eigen::Index i = 0; i < fq.emb.rows(); ++i) {
      const auto vq = row_span(fq.emb, i);
      const HallucinatedPositives& hp = hallucinated[anchor[static_cast<std::size_t>(i)]];
      std::optional<LossResult> he;
      if (hp.selected > 0) he = loss_he(vq, hp.positives, s.tau);
      const LossResult bfe = loss_bfe(vq, pos_keys, c.queue, s.tau);
      st.l_bfe += bfe.loss / na;
      Vector gi = bfe.grad_vq;
      if (he) {
        st.l_he += he->loss / na;
        axpy(1.0, he->grad_vq, gi);
      }
      for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = gi[static_cast<std::size_t>(j)] / na;
    }
    Vector attack_grad = backward_batch(c.pair.online, fq.cache, g);
    for (double& v : attack_grad) v *= mu;
    if (!ctx.allowed.empty()) attack_grad = mask_to_set(attack_grad, ctx.allowed);
    axpy(1.0, attack_grad, update);
    st.attack_grad = std::move(attack_grad);
  }
  st.l_total = (1.0 - (st.attack_active ? mu : 0.0)) * st.l_cl + (st.attack_active ? mu : 0.0) * (st.l_he + st.l_bfe);

  axpy(-s.lr, update, c.pair.online.flat);
  if (ctx.project && mu > 0.0 && ctx.global != nullptr) {
    c.pair.online = project_eps_ball(c.pair.online, *ctx.global, ctx.eps);
  }
  st.clean_grad = std::move(cp.grad);
  finish_step(c, cp.keys);
  return st;
}

ModelParams fedavg(std::span<const ModelParams> updates, std::span<const double> weights) {
  if (updates.empty()) throw Error(ErrorKind::EmptyUpdateSet, "nothing to aggregate");
  if (weights.size() != updates.size()) throw Error(ErrorKind::DimMismatch, "one weight per update required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw Error(ErrorKind::EmptyUpdateSet, "aggregation weights must be positive");
    total += w;
  }
  ModelParams out{Vector(updates.front().flat.size(), 0.0), updates.front().layout};
  for (std::size_t i = 0; i < updates.size(); ++i) {
    if (!(updates[i].layout == out.layout) || updates[i].flat.size() != out.flat.size()) {
      throw Error(ErrorKind::LayoutMismatch, "update layouts differ");
    }
    axpy(weights[i] / total, updates[i].flat, out.flat);
  }
  return out;
}

namespace {

std::vector<std::size_t> largest_remainder(std::span<const double> props, std::size_t total) {
  std::vector<std::size_t> counts(props.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < props.size(); ++k) {
    const double exact = props[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    rem.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[rem[i % rem.size()].second];
  while (assigned > total) {
    // Only reachable through floating-point overshoot.
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  return counts;
}

std::map<ClassId, std::vector<std::size_t>> by_class(std::span<const ClassId> labels) {
  std::map<ClassId, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
  return out;
}

void repair_empty(PartitionPlan& plan) {
  for (std::size_t k = 0; k < plan.assignment.size(); ++k) {
    if (!plan.assignment[k].empty()) continue;
    std::size_t largest = 0;
    for (std::size_t j = 1; j < plan.assignment.size(); ++j) {
      if (plan.assignment[j].size() > plan.assignment[largest].size()) largest = j;
    }
    if (plan.assignment[largest].size() < 2) continue;
    plan.assignment[k].push_back(plan.assignment[largest].back());
    plan.assignment[largest].pop_back();
  }
}

}  // namespace

PartitionPlan dirichlet_partition(std::span<const ClassId> labels, std::size_t clients, double alpha, RngStream& rng) {
  if (clients == 0) throw Error(ErrorKind::ConfigInvalid, "federation.clients must be >= 1");
  if (!(alpha > 0.0)) throw Error(ErrorKind::ConfigInvalid, "federation.alpha must be > 0 for a Dirichlet split");
  PartitionPlan plan{std::vector<std::vector<std::size_t>>(clients), alpha, rng.seed()};
  for (auto& [cls, idx] : by_class(labels)) {
    rng.shuffle(idx);
    std::vector<double> props(clients);
    double sum = 0.0;
    for (double& p : props) sum += (p = rng.gamma(alpha));
    if (!(sum > 0.0)) {
      std::fill(props.begin(), props.end(), 0.0);
      props[rng.index(clients)] = 1.0;
      sum = 1.0;
    }
    for (double& p : props) p /= sum;
    const std::vector<std::size_t> counts = largest_remainder(props, idx.size());
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      for (std::size_t j = 0; j < counts[k]; ++j) plan.assignment[k].push_back(idx[pos++]);
    }
  }
  repair_empty(plan);
  for (auto& a : plan.assignment) std::sort(a.begin(), a.end());
  return plan;
}

PartitionPlan iid_partition(std::span<const ClassId> labels, std::size_t clients, RngStream& rng) {
  if (clients == 0) throw Error(ErrorKind::ConfigInvalid, "federation.clients must be >= 1");
  PartitionPlan plan{std::vector<std::vector<std::size_t>>(clients), 0.0, rng.seed()};
  std::size_t offset = 0;
  for (auto& [cls, idx] : by_class(labels)) {
    rng.shuffle(idx);
    for (std::size_t j = 0; j < idx.size(); ++j) plan.assignment[(j + offset) % clients].push_back(idx[j]);
    offset += idx.size() % clients;
  }
  repair_empty(plan);
  for (auto& a : plan.assignment) std::sort(a.begin(), a.end());
  return plan;
}

double heterogeneity_chi2(const PartitionPlan& plan, std::span<const ClassId> labels, std::size_t classes) {
  const std::size_t k = plan.assignment.size();
  std::vector<std::vector<double>> table(k, std::vector<double>(classes, 0.0));
  std::vector<double> rows(k, 0.0);
  std::vector<double> cols(classes, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t idx : plan.assignment[i]) {
      const auto c = static_cast<std::size_t>(labels[idx]);
      table[i][c] += 1.0;
      rows[i] += 1.0;
      cols[c] += 1.0;
      total += 1.0;
    }
  }
  double chi2 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double expected = rows[i] * cols[c] / total;
      if (expected > 0.0) chi2 += (table[i][c] - expected) * (table[i][c] - expected) / expected;
    }
  }
  return chi2;
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("FSSL_LAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct Simulation::Upload {
  std::size_t client = 0;
  ModelParams params;
  std::size_t samples = 0;
  bool armed = false;
  double l_cl = 0.0;
  std::size_t cl_steps = 0;
  double l_he = 0.0;
  double l_bfe = 0.0;
  std::size_t attack_steps = 0;
  std::size_t g_sel = 0;
};

namespace {

Dataset take(const Dataset& d, std::size_t n, RngStream& rng) {
  const std::vector<std::size_t> idx = rng.sample_without_replacement(d.size(), n);
  return d.subset(idx);
}

ClassId majority_class(const Dataset& d) {
  std::vector<std::size_t> counts(d.classes, 0);
  for (ClassId c : d.labels) ++counts[static_cast<std::size_t>(c)];
  return static_cast<ClassId>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

Simulation::Simulation(ExperimentConfig cfg, std::size_t threads)
    : cfg_(std::move(cfg)), threads_(threads == 0 ? default_thread_count() : threads) {
  cfg_.validate();
  const std::uint64_t seed = cfg_.seed;
  const auto& dc = cfg_.data;

  if (!dc.cifar_path.empty()) {
    Dataset all = ingest_cifar10(dc.cifar_path);
    cfg_.data.dim = all.dim;
    cfg_.attack.trigger.validate(all.dim);
    RngStream rng(seed, kStreamData);
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const std::size_t n_probe = dc.probe_per_class * all.classes;
    const std::size_t n_test = dc.test_per_class * all.classes;
    const std::size_t n_root = cfg_.defense.fltrust_root;
    if (order.size() <= n_probe + n_test + n_root) {
      throw Error(ErrorKind::ConfigInvalid, "data.cifar_path: too few records for the requested splits");
    }
    auto slice = [&](std::size_t from, std::size_t to) {
      return all.subset(std::span<const std::size_t>(order).subspan(from, to - from));
    };
    probe_ = slice(0, n_probe);
    test_ = slice(n_probe, n_probe + n_test);
    root_ = slice(n_probe + n_test, n_probe + n_test + n_root);
    train_ = slice(n_probe + n_test + n_root, order.size());
  } else {
    RngStream data_rng(seed, kStreamData);
    RngStream probe_rng(seed, kStreamProbe);
    RngStream test_rng(seed, kStreamTest);
    RngStream root_rng(seed, kStreamRoot);
    train_ = synth_blobs(dc.classes, dc.dim, dc.per_class, dc.spread, data_rng);
    probe_ = synth_blobs(dc.classes, dc.dim, dc.probe_per_class, dc.spread, probe_rng);
    test_ = synth_blobs(dc.classes, dc.dim, dc.test_per_class, dc.spread, test_rng);
    const std::size_t root_per_class = (cfg_.defense.fltrust_root + dc.classes - 1) / dc.classes;
    Dataset root_pool = synth_blobs(dc.classes, dc.dim, root_per_class, dc.spread, root_rng);
    root_ = take(root_pool, cfg_.defense.fltrust_root, root_rng);
  }

  RngStream part_rng(seed, kStreamPartition);
  plan_ = cfg_.federation.alpha > 0.0
              ? dirichlet_partition(train_.labels, cfg_.federation.clients, cfg_.federation.alpha, part_rng)
              : iid_partition(train_.labels, cfg_.federation.clients, part_rng);

  const LayerLayout layout = LayerLayout::mlp(cfg_.data.dim, cfg_.model.hidden, cfg_.model.embedding,
                                              parse_activation(cfg_.model.activation));
  RngStream init_rng(seed, kStreamInit);
  global_ = init_params(layout, init_rng);

  const bool attacking = cfg_.attack.enabled;
  bool target_resolved = !cfg_.attack.auto_target;
  for (std::size_t k = 0; k < cfg_.federation.clients; ++k) {
    ClientState c;
    c.id = k;
    c.pair = EncoderPair{global_, global_, cfg_.model.momentum};
    c.queue = MemoryQueue(cfg_.train.queue_size, cfg_.model.embedding);
    c.indices = plan_.assignment[k];
    const auto& mal = cfg_.federation.malicious;
    c.malicious = attacking && std::find(mal.begin(), mal.end(), k) != mal.end();
    if (c.malicious) {
      const Dataset local = train_.subset(c.indices);
      if (!target_resolved) {
        cfg_.attack.trigger.target_class = majority_class(local);
        target_resolved = true;
      }
      RngStream poison_rng = RngStream(seed, kStreamPoison).fork(k);
      AttackState st;
      st.poison = make_poison_set(local, cfg_.attack.poison_ratio, cfg_.attack.trigger, poison_rng);
      st.stats = GradStats::zeros(layout.param_count(), cfg_.attack.k_frac, cfg_.attack.zeta_mode);
      c.attack = std::move(st);
    }
    clients_.push_back(std::move(c));
  }
  fg_history_.assign(cfg_.federation.clients, Vector(layout.param_count(), 0.0));
  server_client_.id = cfg_.federation.clients;
  server_client_.pair = EncoderPair{global_, global_, cfg_.model.momentum};
  server_client_.queue = MemoryQueue(cfg_.train.queue_size, cfg_.model.embedding);

  RngStream view_rng(seed, kStreamEvalViews);
  const std::size_t n_views = std::min(cfg_.eval.clean_loss_samples, probe_.size());
  const Dataset eval_pool = take(probe_, n_views, view_rng);
  const Views v = make_views(eval_pool.samples, cfg_.augment.sigma, cfg_.augment.mask_frac, view_rng);
  clean_q_ = v.q;
  clean_k_ = v.k;
}

Simulation::Upload Simulation::train_client(ClientState& c, std::size_t round) const {
  const LocalSettings s{cfg_.train.lr, cfg_.train.tau, cfg_.augment.sigma, cfg_.augment.mask_frac};
  const AttackConfig& a = cfg_.attack;
  c.pair.online = global_;
  c.pair.target = global_;
  RngStream rng = RngStream(cfg_.seed, kStreamClient).fork(round).fork(c.id);
  RngStream attack_rng = RngStream(cfg_.seed, kStreamAttack).fork(round).fork(c.id);

  Upload up;
  up.client = c.id;
  up.samples = c.indices.size();
  up.armed = c.attack.has_value() && a.mu > 0.0 && c.attack->calibrated &&
             (a.stop_round == 0 || round <= a.stop_round);

  std::vector<std::size_t> allowed;
  if (up.armed && a.dimension_constraint) allowed = selection_set(c.attack->stats);
  MaliciousStepContext ctx;
  ctx.attack = &a;
  ctx.global = &global_;
  ctx.allowed = allowed;
  ctx.project = up.armed && a.model_constraint;
  ctx.eps = up.armed ? c.attack->eps : 0.0;

  Vector clean_sum;
  if (c.attack) clean_sum.assign(global_.flat.size(), 0.0);

  std::vector<std::size_t> order = c.indices;
  const std::size_t bs = cfg_.train.batch_size;
  for (std::size_t epoch = 0; epoch < cfg_.train.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<Vector> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(train_.samples[order[i]]);
      const StepStats st = up.armed ? client_step_malicious(c, batch, s, ctx, rng, attack_rng)
                                    : client_step_benign(c, batch, s, rng);
      if (st.primed_only) continue;
      up.l_cl += st.l_cl;
      ++up.cl_steps;
      if (st.attack_active) {
        up.l_he += st.l_he;
        up.l_bfe += st.l_bfe;
        up.g_sel += st.g_sel;
        ++up.attack_steps;
      }
      if (c.attack) axpy(1.0, st.clean_grad, clean_sum);
    }
  }
  if (c.attack) {
    c.attack->stats = update_zeta(c.attack->stats, clean_sum);
    if (!c.attack->calibrated) {
      c.attack->eps = a.eps > 0.0 ? a.eps : a.eps_scale * norm2(sub(c.pair.online.flat, global_.flat));
      c.attack->calibrated = true;
    }
  }
  up.params = c.pair.online;
  return up;
}

ModelParams Simulation::server_update(std::size_t round) {
  const LocalSettings s{cfg_.train.lr, cfg_.train.tau, cfg_.augment.sigma, cfg_.augment.mask_frac};
  ClientState& c = server_client_;
  c.pair.online = global_;
  c.pair.target = global_;
  RngStream rng = RngStream(cfg_.seed, kStreamServer).fork(round);
  std::vector<std::size_t> order(root_.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg_.train.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg_.train.batch_size) {
      std::vector<Vector> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg_.train.batch_size); ++i) {
        batch.push_back(root_.samples[order[i]]);
      }
      client_step_benign(c, batch, s, rng);
    }
  }
  return c.pair.online;
}

ModelParams Simulation::aggregate(std::vector<Upload>& uploads, std::size_t round, DefenseVerdict& verdict) {
  const DefenseConfig& dc = cfg_.defense;
  verdict.name = dc.name;
  std::vector<ModelParams> params;
  std::vector<double> sizes;
  std::vector<Vector> deltas;
  for (const auto& u : uploads) {
    params.push_back(u.params);
    sizes.push_back(static_cast<double>(std::max<std::size_t>(1, u.samples)));
    deltas.push_back(sub(u.params.flat, global_.flat));
  }
  auto shifted = [&](const Vector& delta) {
    ModelParams out = global_;
    axpy(1.0, delta, out.flat);
    return out;
  };

  if (dc.name == "none") return fedavg(params, sizes);

  if (dc.name == "krum") {
    const std::size_t pick = krum(deltas, dc.krum_f);
    for (std::size_t i = 0; i < uploads.size(); ++i) {
      if (i != pick) verdict.excluded.push_back(uploads[i].client);
    }
    return params[pick];
  }

  if (dc.name == "foolsgold") {
    std::vector<Vector> history;
    for (std::size_t i = 0; i < uploads.size(); ++i) {
      axpy(1.0, deltas[i], fg_history_[uploads[i].client]);
      history.push_back(fg_history_[uploads[i].client]);
    }
    verdict.weights = foolsgold(history);
    std::vector<ModelParams> kept;
    std::vector<double> w;
    for (std::size_t i = 0; i < uploads.size(); ++i) {
      if (verdict.weights[i] > 0.0) {
        kept.push_back(params[i]);
        w.push_back(verdict.weights[i] * sizes[i]);
      } else {
        verdict.excluded.push_back(uploads[i].client);
      }
    }
    if (kept.empty()) {
      verdict.fallback = true;
      return global_;
    }
    return fedavg(kept, w);
  }

  if (dc.name == "flame") {
    RngStream rng = RngStream(cfg_.seed, kStreamDefense).fork(round);
    const FlameResult fr = flame_lite(deltas, rng, dc.flame_noise);
    for (std::size_t i = 0; i < uploads.size(); ++i) {
      if (std::find(fr.kept.begin(), fr.kept.end(), i) == fr.kept.end()) verdict.excluded.push_back(uploads[i].client);
    }
    return shifted(fr.aggregate);
  }

  if (dc.name == "fltrust") {
    const ModelParams server = server_update(round);
    const FltrustResult fr = fltrust(deltas, sub(server.flat, global_.flat));
    verdict.weights = fr.trust;
    verdict.fallback = fr.fallback;
    for (std::size_t i = 0; i < uploads.size(); ++i) {
      if (fr.trust[i] <= 0.0) verdict.excluded.push_back(uploads[i].client);
    }
    return shifted(fr.aggregate);
  }

  // norm_clip
  const std::vector<Vector> clipped = norm_clip(deltas, dc.clip_bound);
  std::vector<ModelParams> clipped_params;
  for (const auto& d : clipped) clipped_params.push_back(shifted(d));
  return fedavg(clipped_params, sizes);
}

RoundMetrics Simulation::evaluate(std::size_t round) const {
  RoundMetrics m;
  m.round = round;
  const bool last = round == cfg_.train.rounds;
  if (round % cfg_.eval.every == 0 || last) {
    const LinearProbe probe = linear_probe(global_, probe_, cfg_.eval.probe_epochs, cfg_.eval.probe_lr);
    m.acc = acc(probe, global_, test_);
    m.asr = asr(probe, global_, test_, cfg_.attack.trigger);
  } else {
    m.acc = m.asr = std::numeric_limits<double>::quiet_NaN();
  }
  m.clean_loss = clean_contrastive_loss(global_, clean_q_, clean_k_, cfg_.train.tau);
  return m;
}

RoundMetrics Simulation::run_round(std::size_t round) {
  const FederationConfig& fc = cfg_.federation;
  RngStream sched = RngStream(cfg_.seed, kStreamSchedule).fork(round);
  std::vector<std::size_t> chosen;
  if (fc.clients_per_round == 0 || fc.clients_per_round >= fc.clients) {
    chosen.resize(fc.clients);
    std::iota(chosen.begin(), chosen.end(), 0);
  } else {
    chosen = sched.sample_without_replacement(fc.clients, fc.clients_per_round);
    std::sort(chosen.begin(), chosen.end());
  }
  std::vector<std::size_t> participants;
  for (std::size_t k : chosen) {
    if (clients_[k].malicious && fc.malicious_participation < 1.0 && sched.uniform(0.0, 1.0) >= fc.malicious_participation) {
      continue;
    }
    participants.push_back(k);
  }

  std::vector<Upload> uploads(participants.size());
  parallel_for(participants.size(), threads_,
               [&](std::size_t i) { uploads[i] = train_client(clients_[participants[i]], round); });

  if (cfg_.attack.model_replacement && uploads.size() >= 2) {
    std::vector<std::size_t> sizes;
    for (const auto& u : uploads) sizes.push_back(u.samples);
    for (std::size_t i = 0; i < uploads.size(); ++i) {
      if (uploads[i].armed) uploads[i].params = model_replace(uploads[i].params, global_, sizes, i);
    }
  }

  RoundMetrics m;
  double dist_sum = 0.0;
  std::size_t cl_steps = 0;
  std::size_t sel_steps = 0;
  double l_cl = 0.0;
  for (const auto& u : uploads) {
    const double d = norm2(sub(u.params.flat, global_.flat));
    dist_sum += d;
    if (clients_[u.client].malicious) m.mal_dist = d;
    l_cl += u.l_cl;
    cl_steps += u.cl_steps;
    m.l_he += u.l_he;
    m.l_bfe += u.l_bfe;
    m.attack_steps += u.attack_steps;
    m.g_sel += static_cast<double>(u.g_sel);
    if (u.attack_steps > 0) sel_steps += u.attack_steps * clients_[u.client].attack->poison.poisoned.size();
  }
  DefenseVerdict verdict;
  if (!uploads.empty()) {
    global_ = aggregate(uploads, round, verdict);
    m.dist_to_global = dist_sum / static_cast<double>(uploads.size());
  }
  const std::size_t attack_steps = m.attack_steps;
  const double l_he = m.l_he;
  const double l_bfe = m.l_bfe;
  const double g_sel = m.g_sel;
  const double mal_dist = m.mal_dist;
  const double dist = m.dist_to_global;

  m = evaluate(round);
  m.l_cl = cl_steps > 0 ? l_cl / static_cast<double>(cl_steps) : 0.0;
  m.attack_steps = attack_steps;
  m.l_he = attack_steps > 0 ? l_he / static_cast<double>(attack_steps) : 0.0;
  m.l_bfe = attack_steps > 0 ? l_bfe / static_cast<double>(attack_steps) : 0.0;
  m.g_sel = sel_steps > 0 ? g_sel / static_cast<double>(sel_steps) : 0.0;
  m.mal_dist = mal_dist;
  m.dist_to_global = dist;
  m.participants = participants;
  m.defense = std::move(verdict);
  return m;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t threads, const RoundObserver& observer) {
  Simulation sim(cfg, threads);
  ExperimentResult result;
  result.metrics.push_back(sim.evaluate(0));
  if (observer) observer(result.metrics.back(), sim.global());
  for (std::size_t r = 1; r <= cfg.train.rounds; ++r) {
    result.metrics.push_back(sim.run_round(r));
    if (cfg.checkpoint_every > 0 && r % cfg.checkpoint_every == 0 && r != cfg.train.rounds) {
      result.checkpoints.emplace_back(r, sim.global());
    }
    if (observer) observer(result.metrics.back(), sim.global());
  }
  result.config = sim.config();
  result.final_global = sim.global();
  for (const auto& c : sim.clients()) {
    if (c.attack) {
      result.eps = c.attack->eps;
      result.poisoned = c.attack->poison.poisoned.size();
      break;
    }
  }
  return result;
}

std::vector<double> asr_series(std::span<const RoundMetrics> metrics) {
  std::vector<double> out;
  for (const auto& m : metrics) out.push_back(m.asr);
  return out;
}

std::vector<double> clean_loss_series(std::span<const RoundMetrics> metrics) {
  std::vector<double> out;
  for (const auto& m : metrics) out.push_back(m.clean_loss);
  return out;
}

}  // namespace fssl
