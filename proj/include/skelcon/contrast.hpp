#pragma once

// Contrastive training engine: InfoNCE, momentum key encoders, per-branch
// negative queues, and intra/inter-representation training steps.
//
// A trainer owns one branch per participating representation. Each branch
// has a query encoder (optimized), a key encoder (moving average of the
// query) and a queue of past key embeddings. A loss term pairs a query
// branch with a key branch: intra mode uses (a, a); inter mode uses (a, b)
// and (b, a), so each query is matched against the other representation's
// key and that representation's queue.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelcon/augment.hpp"
#include "skelcon/checkpoint.hpp"
#include "skelcon/encoders.hpp"
#include "skelcon/error.hpp"
#include "skelcon/nn/optim.hpp"
#include "skelcon/represent.hpp"
#include "skelcon/rng.hpp"
#include "skelcon/skeleton.hpp"

namespace skelcon {

inline constexpr double kUnitNormTolerance = 1e-3;

/// Fixed-capacity FIFO of unit-norm key embeddings stored as a ring of rows.
/// Rows [0, size()) of storage() are the live negatives (physical order).
template <class T>
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim), buf_(capacity * dim) {
    if (capacity == 0) throw ArgumentError("queue capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  bool full() const { return count_ == capacity_; }
  std::size_t head() const { return head_; }
  const T* storage() const { return buf_.data(); }

  void push(std::span<const Embedding<T>> batch) {
    if (batch.size() > capacity_)
      throw ArgumentError("batch of " + std::to_string(batch.size()) + " exceeds queue capacity " +
                          std::to_string(capacity_));
    for (const auto& z : batch) push_one(z);
  }

  void push_one(std::span<const T> z) {
    if (z.size() != dim_) throw ContractError("embedding dimension does not match queue");
    double sq = 0.0;
    for (T v : z) sq += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) throw ContractError("queue entries must be unit-norm");
    std::copy(z.begin(), z.end(), buf_.begin() + head_ * dim_);
    head_ = (head_ + 1) % capacity_;
    count_ = std::min(count_ + 1, capacity_);
  }

  /// Entries from oldest to newest.
  std::vector<Embedding<T>> ordered() const {
    std::vector<Embedding<T>> out;
    const std::size_t start = full() ? head_ : 0;
    for (std::size_t i = 0; i < count_; ++i) {
      const T* row = buf_.data() + ((start + i) % capacity_) * dim_;
      out.emplace_back(row, row + dim_);
    }
    return out;
  }

  /// Restores an exact physical state (used when resuming from checkpoints).
  void restore(std::vector<T> rows, std::size_t count, std::size_t head) {
    if (count > capacity_ || head >= capacity_ || rows.size() != count * dim_)
      throw SchemaError("inconsistent queue state in checkpoint");
    std::fill(buf_.begin(), buf_.end(), T(0));
    std::copy(rows.begin(), rows.end(), buf_.begin());
    count_ = count;
    head_ = head;
  }

 private:
  std::size_t capacity_ = 0, dim_ = 0;
  std::vector<T> buf_;
  std::size_t head_ = 0, count_ = 0;
};

template <class T>
struct InfoNceResult {
  double loss = 0.0;
  std::vector<T> grad;  // d loss / d z_q
  double positive_logit = 0.0;
  double negative_logit_mean = 0.0;
};

namespace detail {

template <class T>
void require_unit(std::span<const T> z, const char* what) {
  double sq = 0.0;
  for (T v : z) sq += static_cast<double>(v) * v;
  if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance)
    throw ContractError(std::string(what) + " is not unit-norm (norm " + std::to_string(std::sqrt(sq)) + ")");
}

}  // namespace detail

/// -log( e^{q.k/tau} / (e^{q.k/tau} + sum_n e^{q.n/tau}) ) over `count`
/// negative rows, evaluated with max-subtraction; the gradient is taken with
/// respect to z_q only (keys and negatives are constants).
template <class T>
InfoNceResult<T> info_nce(std::span<const T> zq, std::span<const T> zk, const T* negatives, std::size_t count,
                          double tau) {
  if (!(tau > 0.0)) throw PreconditionError("temperature must be positive");
  if (count == 0) throw PreconditionError("InfoNCE needs at least one negative");
  if (zq.size() != zk.size()) throw ContractError("query and key dimensions differ");
  detail::require_unit(zq, "query embedding");
  detail::require_unit(zk, "key embedding");
  const std::size_t D = zq.size();
  auto dotd = [&](const T* a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < D; ++i) acc += static_cast<double>(zq[i]) * static_cast<double>(a[i]);
    return acc;
  };
  std::vector<double> logits(count + 1);
  logits[0] = dotd(zk.data()) / tau;
  double neg_sum = 0.0;
  for (std::size_t n = 0; n < count; ++n) {
    logits[n + 1] = dotd(negatives + n * D) / tau;
    neg_sum += logits[n + 1];
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - mx);
    denom += l;
  }
  InfoNceResult<T> r;
  r.positive_logit = dotd(zk.data()) / tau;
  r.negative_logit_mean = neg_sum / static_cast<double>(count);
  r.loss = std::log(denom) - (r.positive_logit - mx);
  std::vector<double> g(D, 0.0);
  const double p0 = logits[0] / denom;
  for (std::size_t i = 0; i < D; ++i) g[i] = (p0 - 1.0) * static_cast<double>(zk[i]);
  for (std::size_t n = 0; n < count; ++n) {
    const double p = logits[n + 1] / denom;
    const T* row = negatives + n * D;
    for (std::size_t i = 0; i < D; ++i) g[i] += p * static_cast<double>(row[i]);
  }
  r.grad.resize(D);
  for (std::size_t i = 0; i < D; ++i) r.grad[i] = static_cast<T>(g[i] / tau);
  return r;
}

template <class T>
InfoNceResult<T> info_nce(std::span<const T> zq, std::span<const T> zk, const NegativeQueue<T>& negatives,
                          double tau) {
  if (negatives.empty()) throw PreconditionError("InfoNCE called with an empty negative queue");
  if (negatives.dim() != zq.size()) throw ContractError("queue dimension does not match embeddings");
  return info_nce<T>(zq, zk, negatives.storage(), negatives.size(), tau);
}

/// theta_k <- m * theta_k + (1 - m) * theta_q, elementwise.
template <class T>
void momentum_update(std::span<T> key, std::span<const T> query, double m) {
  if (key.size() != query.size()) throw ContractError("momentum update between mismatched parameter sets");
  const T a = static_cast<T>(m), b = static_cast<T>(1.0 - m);
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = a * key[i] + b * query[i];
}

template <class T>
struct MomentumPair {
  EncoderState<T> query;
  EncoderState<T> key;
  double momentum = 0.999;

  void update() {
    if (!key.params.same_layout(query.params)) throw ContractError("query/key encoders have different layouts");
    momentum_update<T>(key.params.values(), query.params.values(), momentum);
  }
};

template <class T>
MomentumPair<T> make_momentum_pair(const EncoderConfig& config, std::uint64_t seed, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ArgumentError("momentum coefficient must lie in [0, 1]");
  MomentumPair<T> p;
  p.query = init_encoder<T>(config, seed);
  p.key = p.query;
  p.momentum = momentum;
  return p;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

enum class ContrastMode { intra, inter, inter3 };
enum class Inter3Variant { six_term, pairwise };

inline std::string to_string(ContrastMode m) {
  switch (m) {
    case ContrastMode::intra: return "intra";
    case ContrastMode::inter: return "inter";
    case ContrastMode::inter3: return "inter3";
  }
  return "?";
}
inline ContrastMode parse_contrast_mode(const std::string& s) {
  if (s == "intra") return ContrastMode::intra;
  if (s == "inter") return ContrastMode::inter;
  if (s == "inter3") return ContrastMode::inter3;
  throw ArgumentError("unknown contrast mode '" + s + "'");
}
inline std::string to_string(Inter3Variant v) { return v == Inter3Variant::six_term ? "six_term" : "pairwise"; }
inline Inter3Variant parse_inter3_variant(const std::string& s) {
  if (s == "six_term") return Inter3Variant::six_term;
  if (s == "pairwise") return Inter3Variant::pairwise;
  throw ArgumentError("unknown inter3 variant '" + s + "'");
}

struct TrainerOptions {
  ContrastMode mode = ContrastMode::intra;
  std::vector<Representation> representations{Representation::SEQ};
  Inter3Variant inter3_variant = Inter3Variant::six_term;
  double tau = 0.07;
  std::size_t queue_size = 16384;
  double momentum = 0.999;
  double lr = 0.01;
  double weight_decay = 1e-4;
  double sgd_momentum = 0.9;
  AugmentationSpec augmentation;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TrainerOptions& o) {
  nlohmann::json reps = nlohmann::json::array();
  for (auto r : o.representations) reps.push_back(to_string(r));
  return {{"mode", to_string(o.mode)},         {"representations", reps},
          {"inter3_variant", to_string(o.inter3_variant)},
          {"tau", o.tau},                      {"queue_size", o.queue_size},
          {"momentum", o.momentum},            {"lr", o.lr},
          {"weight_decay", o.weight_decay},    {"sgd_momentum", o.sgd_momentum},
          {"augmentation", to_json(o.augmentation)}, {"seed", o.seed}};
}

inline TrainerOptions trainer_options_from_json(const nlohmann::json& j) {
  TrainerOptions o;
  o.mode = parse_contrast_mode(j.at("mode").get<std::string>());
  o.representations.clear();
  for (const auto& r : j.at("representations")) o.representations.push_back(parse_representation(r.get<std::string>()));
  o.inter3_variant = parse_inter3_variant(j.at("inter3_variant").get<std::string>());
  o.tau = j.at("tau").get<double>();
  o.queue_size = j.at("queue_size").get<std::size_t>();
  o.momentum = j.at("momentum").get<double>();
  o.lr = j.at("lr").get<double>();
  o.weight_decay = j.at("weight_decay").get<double>();
  o.sgd_momentum = j.at("sgd_momentum").get<double>();
  o.augmentation = augmentation_from_json(j.at("augmentation"));
  o.seed = j.at("seed").get<std::uint64_t>();
  return o;
}

struct BranchSpec {
  EncoderConfig config;
  std::uint64_t init_seed = 0;
};

struct LossTerm {
  std::size_t query_branch = 0;
  std::size_t key_branch = 0;
  double weight = 1.0;
};

template <class T>
struct Branch {
  MomentumPair<T> pair;
  NegativeQueue<T> queue;
  nn::Sgd<T> optimizer;
  std::string label;

  Representation representation() const { return pair.query.config.representation; }
};

struct LossReport {
  std::uint64_t step = 0;
  int epoch = 0;
  double total = 0.0;
  std::vector<std::pair<std::string, double>> per_representation;  // keyed by query branch
  double positive_logit_mean = 0.0;
  double negative_logit_mean = 0.0;

  double term(const std::string& label) const {
    for (const auto& [k, v] : per_representation)
      if (k == label) return v;
    throw ArgumentError("no loss term for '" + label + "'");
  }
};

inline nlohmann::json to_json(const LossReport& r) {
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& [k, v] : r.per_representation) terms[k] = v;
  return {{"step", r.step},
          {"epoch", r.epoch},
          {"total", r.total},
          {"per_rep_terms", terms},
          {"pos_logit_mean", r.positive_logit_mean},
          {"neg_logit_mean", r.negative_logit_mean}};
}

/// Derives the branch set and loss terms from the contrast mode.
inline std::vector<LossTerm> terms_for(const TrainerOptions& o) {
  const auto n = o.representations.size();
  std::vector<LossTerm> terms;
  switch (o.mode) {
    case ContrastMode::intra:
      if (n != 1) throw ArgumentError("intra mode takes exactly one representation");
      terms.push_back({0, 0, 1.0});
      break;
    case ContrastMode::inter:
      if (n != 2) throw ArgumentError("inter mode takes exactly two representations");
      terms.push_back({0, 1, 1.0});
      terms.push_back({1, 0, 1.0});
      break;
    case ContrastMode::inter3:
      if (n != 3) throw ArgumentError("inter3 mode takes exactly three representations");
      if (o.inter3_variant == Inter3Variant::six_term) {
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b)
            if (a != b) terms.push_back({a, b, 1.0});
      } else {
        for (std::size_t a = 0; a < 3; ++a) terms.push_back({a, (a + 1) % 3, 2.0});
      }
      break;
  }
  return terms;
}

template <class T>
class Trainer {
 public:
  Trainer(TrainerOptions options, const std::vector<BranchSpec>& specs, std::vector<LossTerm> terms,
          std::shared_ptr<const GraphTopology> graph)
      : options_(std::move(options)), terms_(std::move(terms)), graph_(std::move(graph)) {
    if (!(options_.tau > 0.0)) throw ArgumentError("temperature must be positive");
    if (specs.empty()) throw ArgumentError("trainer needs at least one branch");
    std::map<std::string, int> seen;
    for (const auto& s : specs) ++seen[to_string(s.config.representation)];
    for (std::size_t i = 0; i < specs.size(); ++i) {
      Branch<T> b;
      b.pair = make_momentum_pair<T>(specs[i].config, specs[i].init_seed, options_.momentum);
      b.queue = NegativeQueue<T>(options_.queue_size, specs[i].config.projection_dim);
      b.optimizer.lr = options_.lr;
      b.optimizer.weight_decay = options_.weight_decay;
      b.optimizer.momentum = options_.sgd_momentum;
      const auto rep = to_string(specs[i].config.representation);
      b.label = seen[rep] > 1 ? rep + "#" + std::to_string(i) : rep;
      branches_.push_back(std::move(b));
    }
    for (const auto& t : terms_) {
      if (t.query_branch >= branches_.size() || t.key_branch >= branches_.size())
        throw ArgumentError("loss term references a missing branch");
      if (branches_[t.query_branch].pair.query.config.projection_dim !=
          branches_[t.key_branch].pair.query.config.projection_dim)
        throw ArgumentError("contrasted branches must share the projection dimension");
    }
  }

  /// Standard construction: one branch per representation in `options`,
  /// encoder init seeds derived from (seed, representation).
  static Trainer create(const TrainerOptions& options, const std::map<Representation, EncoderConfig>& configs,
                        std::shared_ptr<const GraphTopology> graph) {
    std::vector<BranchSpec> specs;
    for (auto rep : options.representations) {
      auto it = configs.find(rep);
      if (it == configs.end()) throw ArgumentError("no encoder config for " + to_string(rep));
      specs.push_back({it->second, derive_seed({options.seed, 0xB4A9C4, static_cast<std::uint64_t>(rep)})});
    }
    return Trainer(options, specs, terms_for(options), std::move(graph));
  }

  const TrainerOptions& options() const { return options_; }
  const std::vector<LossTerm>& terms() const { return terms_; }
  std::vector<Branch<T>>& branches() { return branches_; }
  const std::vector<Branch<T>>& branches() const { return branches_; }
  const std::shared_ptr<const GraphTopology>& graph() const { return graph_; }

  std::uint64_t step = 0;
  int epoch = 0;

 private:
  TrainerOptions options_;
  std::vector<Branch<T>> branches_;
  std::vector<LossTerm> terms_;
  std::shared_ptr<const GraphTopology> graph_;
};

/// Augmented views for one batch: a single (query, key) draw per sample is
/// shared by every branch, converted to each branch's representation.
struct PreparedBatch {
  std::vector<std::vector<RepresentationView>> query;  // [sample][branch]
  std::vector<std::vector<RepresentationView>> key;
};

template <class T>
PreparedBatch prepare_batch(const Trainer<T>& trainer, std::span<const SkeletonSequence* const> batch,
                            std::uint64_t step) {
  PreparedBatch out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng(derive_seed({trainer.options().seed, 0xA06, step, i}));
    const auto pair = make_query_key_pair(*batch[i], trainer.options().augmentation, rng);
    std::vector<RepresentationView> q, k;
    for (const auto& b : trainer.branches()) {
      q.push_back(make_view(b.representation(), pair.query.sequence, trainer.graph()));
      k.push_back(make_view(b.representation(), pair.key.sequence, trainer.graph()));
    }
    out.query.push_back(std::move(q));
    out.key.push_back(std::move(k));
  }
  return out;
}

template <class T>
struct BatchGradients {
  std::vector<std::vector<T>> per_branch;          // d loss / d query params
  std::vector<std::vector<Embedding<T>>> keys;     // [branch][sample]
};

/// Batch-mean loss for fixed views, queues and parameters; no state changes.
/// Fills query-parameter gradients and key embeddings when `out` is given.
template <class T>
LossReport compute_batch_loss(const Trainer<T>& trainer, const PreparedBatch& batch, BatchGradients<T>* out) {
  const auto& branches = trainer.branches();
  const auto& terms = trainer.terms();
  const std::size_t B = batch.query.size();
  if (B == 0) throw ArgumentError("empty batch");
  const double tau = trainer.options().tau;
  std::vector<bool> is_query(branches.size(), false);
  for (const auto& t : terms) is_query[t.query_branch] = true;
  if (out) {
    out->per_branch.assign(branches.size(), {});
    out->keys.assign(branches.size(), {});
    for (std::size_t b = 0; b < branches.size(); ++b)
      if (is_query[b]) out->per_branch[b].assign(branches[b].pair.query.params.size(), T(0));
  }
  std::vector<double> term_loss(branches.size(), 0.0);
  double pos = 0.0, neg = 0.0;
  for (std::size_t s = 0; s < B; ++s) {
    std::vector<EncoderTape<T>> tapes(branches.size());
    std::vector<Embedding<T>> zq(branches.size()), zk(branches.size());
    for (std::size_t b = 0; b < branches.size(); ++b) {
      if (is_query[b]) zq[b] = embed<T>(branches[b].pair.query, batch.query[s][b], out ? &tapes[b] : nullptr);
      zk[b] = embed<T>(branches[b].pair.key, batch.key[s][b], nullptr);
    }
    std::vector<std::vector<T>> dz(branches.size());
    for (const auto& t : terms) {
      const auto r = info_nce<T>(zq[t.query_branch], zk[t.key_branch], branches[t.key_branch].queue, tau);
      term_loss[t.query_branch] += t.weight * r.loss / static_cast<double>(B);
      pos += r.positive_logit;
      neg += r.negative_logit_mean;
      auto& d = dz[t.query_branch];
      if (d.empty()) d.assign(r.grad.size(), T(0));
      const T scale = static_cast<T>(t.weight / static_cast<double>(B));
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * r.grad[i];
    }
    if (out) {
      for (std::size_t b = 0; b < branches.size(); ++b) {
        if (is_query[b]) embed_backward<T>(branches[b].pair.query, tapes[b], dz[b], out->per_branch[b].data());
        out->keys[b].push_back(std::move(zk[b]));
      }
    }
  }
  LossReport report;
  report.step = trainer.step;
  report.epoch = trainer.epoch;
  for (std::size_t b = 0; b < branches.size(); ++b)
    if (is_query[b]) {
      report.per_representation.emplace_back(branches[b].label, term_loss[b]);
      report.total += term_loss[b];
    }
  const double n = static_cast<double>(B * terms.size());
  report.positive_logit_mean = pos / n;
  report.negative_logit_mean = neg / n;
  return report;
}

/// One optimization step: loss on fresh augmentations, SGD on query encoders,
/// momentum update of every key encoder, then enqueue this batch's keys.
template <class T>
LossReport train_step(Trainer<T>& trainer, std::span<const SkeletonSequence* const> batch) {
  for (const auto& b : trainer.branches())
    if (b.queue.empty()) throw PreconditionError("negative queue for " + b.label + " is empty; run warmup_queues first");
  const auto prepared = prepare_batch(trainer, batch, trainer.step);
  BatchGradients<T> grads;
  auto report = compute_batch_loss(trainer, prepared, &grads);
  if (!std::isfinite(report.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << trainer.step << " (epoch " << trainer.epoch << "):";
    for (const auto& [k, v] : report.per_representation) msg << ' ' << k << '=' << v;
    msg << " pos_logit_mean=" << report.positive_logit_mean << " neg_logit_mean=" << report.negative_logit_mean;
    throw NonFiniteError(msg.str());
  }
  auto& branches = trainer.branches();
  for (std::size_t b = 0; b < branches.size(); ++b) {
    if (grads.per_branch[b].empty()) continue;
    auto& q = branches[b].pair.query;
    branches[b].optimizer.step(q.params.values(), grads.per_branch[b]);
    ++q.step;
  }
  for (auto& b : branches) {
    b.pair.update();
    ++b.pair.key.step;
  }
  for (std::size_t b = 0; b < branches.size(); ++b) branches[b].queue.push(grads.keys[b]);
  ++trainer.step;
  return report;
}

template <class T>
LossReport intra_step(Trainer<T>& trainer, std::span<const SkeletonSequence* const> batch) {
  if (trainer.options().mode != ContrastMode::intra) throw PreconditionError("intra_step requires an intra-mode trainer");
  return train_step(trainer, batch);
}

template <class T>
LossReport inter_step(Trainer<T>& trainer, std::span<const SkeletonSequence* const> batch) {
  if (trainer.options().mode == ContrastMode::intra)
    throw PreconditionError("inter_step requires an inter-mode trainer");
  return train_step(trainer, batch);
}

/// Fills every queue with key-encoder embeddings of augmented training
/// samples (one pass at most) so the first steps see on-manifold negatives.
template <class T>
void warmup_queues(Trainer<T>& trainer, const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> order(indices.begin(), indices.end());
  Rng shuffle_rng(derive_seed({trainer.options().seed, 0x3A3}));
  shuffle_rng.shuffle(std::span(order));
  auto& branches = trainer.branches();
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (std::all_of(branches.begin(), branches.end(), [](const auto& b) { return b.queue.full(); })) break;
    Rng rng(derive_seed({trainer.options().seed, 0x3A3, i}));
    const auto pair = make_query_key_pair(ds.samples[order[i]].sequence, trainer.options().augmentation, rng);
    for (auto& b : branches) {
      const auto view = make_view(b.representation(), pair.key.sequence, trainer.graph());
      b.queue.push_one(embed<T>(b.pair.key, view, nullptr));
    }
  }
}

// ---------------------------------------------------------------------------
// Trainer checkpoints
// ---------------------------------------------------------------------------

inline constexpr const char* kTrainerFormat = "TRAINER1";

inline std::string branch_file(std::size_t i, const std::string& label, const std::string& part) {
  std::string safe = label;
  std::replace(safe.begin(), safe.end(), '#', '_');
  return "branch" + std::to_string(i) + "_" + safe + "_" + part + ".ckpt";
}

template <class T>
void save_trainer(const std::string& dir, const Trainer<T>& trainer) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest = {{"format", kTrainerFormat},
                             {"options", to_json(trainer.options())},
                             {"step", trainer.step},
                             {"epoch", trainer.epoch},
                             {"branches", nlohmann::json::array()},
                             {"terms", nlohmann::json::array()}};
  for (const auto& t : trainer.terms())
    manifest["terms"].push_back({{"query", t.query_branch}, {"key", t.key_branch}, {"weight", t.weight}});
  const auto& branches = trainer.branches();
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const auto& b = branches[i];
    const auto qf = branch_file(i, b.label, "query"), kf = branch_file(i, b.label, "key"),
               sf = branch_file(i, b.label, "state");
    save_encoder<T>((fs::path(dir) / qf).string(), b.pair.query);
    save_encoder<T>((fs::path(dir) / kf).string(), b.pair.key);
    std::vector<ArrayRecord> arrays;
    const auto& vel = b.optimizer.velocity;
    arrays.push_back(make_array<T>("velocity", {vel.size()}, vel));
    const std::size_t rows = b.queue.size(), D = b.queue.dim();
    arrays.push_back(make_array<T>("queue", {rows, D}, std::span<const T>(b.queue.storage(), rows * D)));
    write_container((fs::path(dir) / sf).string(),
                    {{"kind", "branch-state"}, {"queue_capacity", b.queue.capacity()}, {"queue_head", b.queue.head()}},
                    arrays);
    manifest["branches"].push_back({{"label", b.label},
                                    {"representation", to_string(b.representation())},
                                    {"config", to_json(b.pair.query.config)},
                                    {"momentum", b.pair.momentum},
                                    {"query", qf},
                                    {"key", kf},
                                    {"state", sf}});
  }
  std::ofstream os(fs::path(dir) / "trainer.json");
  if (!os) throw IoError("cannot write trainer manifest in '" + dir + "'");
  os << manifest.dump(2) << '\n';
}

inline nlohmann::json read_trainer_manifest(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "trainer.json";
  std::ifstream is(path);
  if (!is) throw IoError("no trainer manifest at '" + path.string() + "'");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (m.value("format", "") != kTrainerFormat) throw ParseError(path.string() + ": not a TRAINER1 manifest");
  return m;
}

template <class T>
Trainer<T> load_trainer(const std::string& dir, std::shared_ptr<const GraphTopology> graph) {
  namespace fs = std::filesystem;
  const auto m = read_trainer_manifest(dir);
  const auto options = trainer_options_from_json(m.at("options"));
  std::vector<BranchSpec> specs;
  for (const auto& b : m.at("branches")) specs.push_back({encoder_config_from_json(b.at("config")), 0});
  std::vector<LossTerm> terms;
  for (const auto& t : m.at("terms"))
    terms.push_back({t.at("query").get<std::size_t>(), t.at("key").get<std::size_t>(), t.at("weight").get<double>()});
  Trainer<T> trainer(options, specs, terms, std::move(graph));
  trainer.step = m.at("step").get<std::uint64_t>();
  trainer.epoch = m.at("epoch").get<int>();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& e = m.at("branches")[i];
    auto& b = trainer.branches()[i];
    b.pair.query = load_encoder<T>((fs::path(dir) / e.at("query").get<std::string>()).string());
    b.pair.key = load_encoder<T>((fs::path(dir) / e.at("key").get<std::string>()).string());
    b.pair.momentum = e.at("momentum").get<double>();
    const auto state = read_container((fs::path(dir) / e.at("state").get<std::string>()).string());
    const auto& vel = state.get("velocity").values;
    b.optimizer.velocity.assign(vel.begin(), vel.end());
    const auto& q = state.get("queue");
    std::vector<T> rows(q.values.begin(), q.values.end());
    b.queue.restore(std::move(rows), q.shape.at(0), state.manifest.at("queue_head").get<std::size_t>());
  }
  return trainer;
}

/// Query encoder for `rep` inside a trainer checkpoint directory.
template <class T>
EncoderState<T> load_query_encoder(const std::string& dir, Representation rep) {
  const auto m = read_trainer_manifest(dir);
  for (const auto& b : m.at("branches"))
    if (b.at("representation").get<std::string>() == to_string(rep))
      return load_encoder<T>((std::filesystem::path(dir) / b.at("query").get<std::string>()).string());
  throw ArgumentError("checkpoint '" + dir + "' has no " + to_string(rep) + " encoder");
}

// ---------------------------------------------------------------------------
// Pretraining loop
// ---------------------------------------------------------------------------

struct PretrainSchedule {
  int epochs = 450;
  std::size_t batch_size = 16;
  int checkpoint_every = 0;  // epochs; 0 = final epoch only
  std::string output_dir;    // empty = keep everything in memory
  bool resume = false;
};

struct PretrainResult {
  std::vector<LossReport> log;
  std::vector<std::string> checkpoints;
};

inline std::string latest_checkpoint(const std::string& output_dir) {
  const auto marker = std::filesystem::path(output_dir) / "checkpoints" / "LATEST";
  std::ifstream is(marker);
  std::string name;
  if (!is || !std::getline(is, name) || name.empty()) return {};
  return (std::filesystem::path(output_dir) / "checkpoints" / name).string();
}

namespace detail {

/// Keeps loss-log lines with step < `next_step` (resume truncation).
inline void truncate_loss_log(const std::filesystem::path& path, std::uint64_t next_step) {
  std::vector<std::string> kept;
  {
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (nlohmann::json::parse(line).at("step").get<std::uint64_t>() < next_step) kept.push_back(line);
    }
  }
  std::ofstream os(path, std::ios::trunc);
  for (const auto& l : kept) os << l << '\n';
}

}  // namespace detail

/// Shuffled epochs of train_step over `indices`; the trailing partial batch is
/// dropped unless the whole split is smaller than one batch. With an output
/// directory, writes loss_log.jsonl and checkpoints/epoch_NNNN plus a LATEST
/// marker; `resume` continues from the latest checkpoint bit-identically.
template <class T>
PretrainResult pretrain(Trainer<T>& trainer, const Dataset& ds, std::span<const std::size_t> indices,
                        const PretrainSchedule& schedule,
                        const std::function<void(const LossReport&)>& on_step = {}) {
  namespace fs = std::filesystem;
  if (indices.empty()) throw ArgumentError("pretraining split is empty");
  if (schedule.batch_size == 0) throw ArgumentError("batch size must be positive");
  if (schedule.batch_size > trainer.options().queue_size)
    throw ArgumentError("batch size exceeds queue capacity");
  PretrainResult result;
  const bool persist = !schedule.output_dir.empty();
  fs::path log_path;
  if (persist) {
    fs::create_directories(fs::path(schedule.output_dir) / "checkpoints");
    log_path = fs::path(schedule.output_dir) / "loss_log.jsonl";
  }
  if (persist && schedule.resume) {
    if (const auto last = latest_checkpoint(schedule.output_dir); !last.empty()) {
      trainer = load_trainer<T>(last, trainer.graph());
      detail::truncate_loss_log(log_path, trainer.step);
    }
  } else if (persist) {
    std::ofstream(log_path, std::ios::trunc);
  }
  if (trainer.step == 0 && std::any_of(trainer.branches().begin(), trainer.branches().end(),
                                       [](const auto& b) { return b.queue.empty(); }))
    warmup_queues(trainer, ds, indices);

  std::ofstream log;
  if (persist) log.open(log_path, std::ios::app);
  const std::size_t n = indices.size();
  const std::size_t B = std::min(schedule.batch_size, n);
  const std::size_t batches = n / B;
  for (; trainer.epoch < schedule.epochs;) {
    std::vector<std::size_t> order(indices.begin(), indices.end());
    Rng rng(derive_seed({trainer.options().seed, 0xE90C, static_cast<std::uint64_t>(trainer.epoch)}));
    rng.shuffle(std::span(order));
    for (std::size_t bi = 0; bi < batches; ++bi) {
      std::vector<const SkeletonSequence*> batch;
      for (std::size_t k = 0; k < B; ++k) batch.push_back(&ds.samples[order[bi * B + k]].sequence);
      auto report = train_step(trainer, std::span<const SkeletonSequence* const>(batch));
      if (persist) log << to_json(report).dump() << '\n';
      if (on_step) on_step(report);
      result.log.push_back(std::move(report));
    }
    ++trainer.epoch;
    const bool last = trainer.epoch == schedule.epochs;
    const bool cadence = schedule.checkpoint_every > 0 && trainer.epoch % schedule.checkpoint_every == 0;
    if (persist && (last || cadence)) {
      log.flush();
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << trainer.epoch;
      const auto dir = fs::path(schedule.output_dir) / "checkpoints" / name.str();
      save_trainer<T>(dir.string(), trainer);
      std::ofstream(fs::path(schedule.output_dir) / "checkpoints" / "LATEST", std::ios::trunc) << name.str() << '\n';
      result.checkpoints.push_back(dir.string());
    }
  }
  return result;
}

}  // namespace skelcon
