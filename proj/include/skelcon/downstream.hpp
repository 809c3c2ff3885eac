#pragma once

// Evaluation harness: frozen-feature extraction, linear probe, k=1 cosine
// retrieval, end-to-end finetuning with labeled fractions, combined-backbone
// probing and embedding export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelcon/augment.hpp"
#include "skelcon/encoders.hpp"
#include "skelcon/error.hpp"
#include "skelcon/nn/layers.hpp"
#include "skelcon/nn/optim.hpp"
#include "skelcon/represent.hpp"
#include "skelcon/rng.hpp"
#include "skelcon/skeleton.hpp"

namespace skelcon {

/// Row-major feature matrix with one label and id per row.
struct FeatureSet {
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t rows() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

struct Metrics {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  std::vector<double> per_class;  // NaN for classes absent from the test set
  std::string protocol;
};

inline Metrics score_predictions(std::span<const int> predicted, std::span<const int> truth, int num_classes,
                                 std::string protocol = {}) {
  if (predicted.size() != truth.size()) throw ContractError("prediction and label counts differ");
  Metrics m;
  m.protocol = std::move(protocol);
  m.total = truth.size();
  std::vector<std::size_t> hit(num_classes, 0), seen(num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool ok = predicted[i] == truth[i];
    m.correct += ok;
    if (truth[i] >= 0 && truth[i] < num_classes) {
      ++seen[truth[i]];
      hit[truth[i]] += ok;
    }
  }
  m.accuracy = m.total ? static_cast<double>(m.correct) / static_cast<double>(m.total) : 0.0;
  for (int c = 0; c < num_classes; ++c)
    m.per_class.push_back(seen[c] ? static_cast<double>(hit[c]) / static_cast<double>(seen[c])
                                  : std::numeric_limits<double>::quiet_NaN());
  return m;
}

inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json per = nlohmann::json::array();
  for (double a : m.per_class) per.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
  return {{"correct", m.correct}, {"total", m.total}, {"accuracy", m.accuracy}, {"per_class", per},
          {"protocol", m.protocol}};
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

inline int label_of(const LabeledSample& s) { return s.label.value_or(-1); }

/// Backbone features (projection head removed) of a centered temporal crop.
template <class T>
FeatureSet extract_features(const EncoderState<T>& encoder, const Dataset& ds, std::span<const std::size_t> indices,
                            int crop_length, const std::shared_ptr<const GraphTopology>& graph) {
  if (indices.empty()) throw ArgumentError("feature extraction over an empty split");
  if (ds.joints != encoder.config.joints)
    throw ArgumentError("encoder expects " + std::to_string(encoder.config.joints) + " joints, dataset has " +
                        std::to_string(ds.joints));
  FeatureSet f;
  f.dim = static_cast<std::size_t>(encoder.config.feature_dim);
  f.values.reserve(indices.size() * f.dim);
  for (auto i : indices) {
    const auto& s = ds.samples.at(i);
    const auto view = make_view(encoder.config.representation, center_crop(s.sequence, crop_length), graph);
    const auto feat = backbone_forward<T>(encoder, view, nullptr);
    f.values.insert(f.values.end(), feat.begin(), feat.end());
    f.labels.push_back(label_of(s));
    f.ids.push_back(s.sequence.sample_id);
  }
  return f;
}

/// Row-wise concatenation of two feature sets over the same samples.
inline FeatureSet concat_features(const FeatureSet& a, const FeatureSet& b) {
  if (a.rows() != b.rows() || a.labels != b.labels) throw ArgumentError("feature sets cover different samples");
  FeatureSet out;
  out.dim = a.dim + b.dim;
  out.labels = a.labels;
  out.ids = a.ids;
  out.values.reserve(a.rows() * out.dim);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ra = a.row(i), rb = b.row(i);
    out.values.insert(out.values.end(), ra.begin(), ra.end());
    out.values.insert(out.values.end(), rb.begin(), rb.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct ProbeSchedule {
  int epochs = 80;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<int> milestones{50, 70};
  std::size_t batch_size = 32;
  bool standardize = true;  // z-score features with training-split statistics
  std::uint64_t seed = 0;
};

/// Affine classifier over features; W is [classes][dim].
struct ProbeHead {
  int classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights, bias;
  std::vector<double> mean, inv_std;  // empty unless standardized

  std::vector<double> logits(std::span<const double> x) const {
    std::vector<double> xs(x.begin(), x.end());
    if (!mean.empty())
      for (std::size_t d = 0; d < dim; ++d) xs[d] = (xs[d] - mean[d]) * inv_std[d];
    std::vector<double> out(classes);
    for (int c = 0; c < classes; ++c) out[c] = bias[c] + nn::dot(&weights[c * dim], xs.data(), dim);
    return out;
  }

  int predict(std::span<const double> x) const {
    const auto l = logits(x);
    return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
  }
};

namespace detail {

/// Softmax cross-entropy; overwrites `logits` with d loss / d logits.
inline double softmax_xent(std::vector<double>& logits, int label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) z += (l = std::exp(l - mx));
  const double loss = -std::log(logits[label] / z);
  for (double& l : logits) l /= z;
  logits[label] -= 1.0;
  return loss;
}

inline int count_classes(std::span<const int> labels) {
  int mx = -1;
  for (int l : labels) {
    if (l < 0) throw ArgumentError("unlabeled sample in a supervised split");
    mx = std::max(mx, l);
  }
  return mx + 1;
}

inline void require_two_classes(std::span<const int> labels) {
  std::vector<int> u(labels.begin(), labels.end());
  std::sort(u.begin(), u.end());
  if (std::unique(u.begin(), u.end()) - u.begin() < 2)
    throw DegenerateError("training split contains fewer than 2 classes");
}

}  // namespace detail

inline ProbeHead train_probe(const FeatureSet& train, int num_classes, const ProbeSchedule& s) {
  detail::require_two_classes(train.labels);
  if (train.dim == 0) throw ArgumentError("zero-dimensional features");
  ProbeHead h;
  h.classes = num_classes;
  h.dim = train.dim;
  h.weights.assign(num_classes * train.dim, 0.0);
  h.bias.assign(num_classes, 0.0);
  const std::size_t N = train.rows(), D = train.dim;
  if (s.standardize) {
    h.mean.assign(D, 0.0);
    h.inv_std.assign(D, 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t d = 0; d < D; ++d) h.mean[d] += train.row(i)[d] / N;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t d = 0; d < D; ++d) {
        const double e = train.row(i)[d] - h.mean[d];
        h.inv_std[d] += e * e / N;
      }
    for (double& v : h.inv_std) v = 1.0 / std::sqrt(v + 1e-8);
  }
  std::vector<double> xs(N * D);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d)
      xs[i * D + d] = h.mean.empty() ? train.row(i)[d] : (train.row(i)[d] - h.mean[d]) * h.inv_std[d];

  // Parameters packed as [W | b] so one optimizer covers both.
  std::vector<double> params(num_classes * (D + 1), 0.0), grad(params.size());
  nn::Sgd<double> opt;
  opt.momentum = s.momentum;
  opt.weight_decay = s.weight_decay;
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed({s.seed, 0x9B0BE}));
  const std::size_t B = std::max<std::size_t>(1, std::min(s.batch_size, N));
  for (int epoch = 0; epoch < s.epochs; ++epoch) {
    opt.lr = nn::step_decay(s.lr, epoch, s.milestones);
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < N; start += B) {
      const std::size_t end = std::min(N, start + B);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const double* x = &xs[order[k] * D];
        std::vector<double> l(num_classes);
        for (int c = 0; c < num_classes; ++c) l[c] = params[num_classes * D + c] + nn::dot(&params[c * D], x, D);
        detail::softmax_xent(l, train.labels[order[k]]);
        const double inv = 1.0 / static_cast<double>(end - start);
        for (int c = 0; c < num_classes; ++c) {
          nn::axpy(l[c] * inv, x, &grad[c * D], D);
          grad[num_classes * D + c] += l[c] * inv;
        }
      }
      opt.step(params, grad);
    }
  }
  std::copy(params.begin(), params.begin() + num_classes * D, h.weights.begin());
  std::copy(params.begin() + num_classes * D, params.end(), h.bias.begin());
  return h;
}

inline Metrics evaluate_probe(const ProbeHead& h, const FeatureSet& test, std::string protocol = "linear-probe") {
  if (test.dim != h.dim) throw ArgumentError("probe/feature dimension mismatch");
  std::vector<int> pred;
  pred.reserve(test.rows());
  for (std::size_t i = 0; i < test.rows(); ++i) pred.push_back(h.predict(test.row(i)));
  return score_predictions(pred, test.labels, h.classes, std::move(protocol));
}

inline Metrics linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeSchedule& s,
                            int num_classes = 0) {
  if (train.dim != test.dim) throw ArgumentError("train/test feature dimensions differ");
  if (num_classes <= 0)
    num_classes = std::max(detail::count_classes(train.labels), detail::count_classes(test.labels));
  return evaluate_probe(train_probe(train, num_classes, s), test);
}

// ---------------------------------------------------------------------------
// k = 1 cosine retrieval
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> unit_rows(const FeatureSet& f, const char* role) {
  std::vector<double> out(f.values.size());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    const auto r = f.row(i);
    const double n = std::sqrt(nn::dot(r.data(), r.data(), f.dim));
    if (!(n > 0.0) || !std::isfinite(n))
      throw DegenerateError(std::string(role) + " feature for sample '" +
                            (i < f.ids.size() ? f.ids[i] : std::to_string(i)) + "' has zero or non-finite norm");
    for (std::size_t d = 0; d < f.dim; ++d) out[i * f.dim + d] = r[d] / n;
  }
  return out;
}

}  // namespace detail

class RetrievalIndex {
 public:
  explicit RetrievalIndex(const FeatureSet& gallery)
      : dim_(gallery.dim), labels_(gallery.labels), unit_(detail::unit_rows(gallery, "gallery")) {
    if (gallery.rows() == 0) throw ArgumentError("retrieval gallery is empty");
  }

  std::size_t size() const { return labels_.size(); }

  /// Gallery position of the most cosine-similar item; ties go to the lowest index.
  std::vector<std::size_t> nearest(const FeatureSet& queries) const {
    if (queries.dim != dim_) throw ArgumentError("query/gallery dimension mismatch");
    const auto q = detail::unit_rows(queries, "query");
    std::vector<std::size_t> out(queries.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t g = 0; g < labels_.size(); ++g) {
        const double sim = nn::dot(&q[i * dim_], &unit_[g * dim_], dim_);
        if (sim > best) best = sim, arg = g;
      }
      out[i] = arg;
    }
    return out;
  }

  int label(std::size_t g) const { return labels_.at(g); }

 private:
  std::size_t dim_;
  std::vector<int> labels_;
  std::vector<double> unit_;
};

struct RetrievalResult {
  std::vector<int> predicted;
  Metrics metrics;
};

inline RetrievalResult knn_retrieve(const RetrievalIndex& index, const FeatureSet& queries, int num_classes = 0) {
  RetrievalResult r;
  for (auto g : index.nearest(queries)) r.predicted.push_back(index.label(g));
  if (num_classes <= 0) {
    num_classes = detail::count_classes(queries.labels);
    for (int p : r.predicted) num_classes = std::max(num_classes, p + 1);
  }
  r.metrics = score_predictions(r.predicted, queries.labels, num_classes, "knn-1");
  return r;
}

// ---------------------------------------------------------------------------
// Finetuning
// ---------------------------------------------------------------------------

enum class FinetuneMode { semi_supervised, transfer, supervised_only };

inline std::string to_string(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::semi_supervised: return "semi-supervised";
    case FinetuneMode::transfer: return "transfer";
    case FinetuneMode::supervised_only: return "supervised-only";
  }
  return "?";
}
inline FinetuneMode parse_finetune_mode(const std::string& s) {
  if (s == "semi-supervised") return FinetuneMode::semi_supervised;
  if (s == "transfer") return FinetuneMode::transfer;
  if (s == "supervised-only") return FinetuneMode::supervised_only;
  throw ArgumentError("unknown finetune mode '" + s + "'");
}

struct LabeledSubset {
  std::vector<std::size_t> indices;
  bool stratified = true;
  std::string warning;
};

/// Seeded labeled subset of `pool`: round(rho * n_c) per class when every
/// class keeps at least one label, otherwise round(rho * N) uniformly.
inline LabeledSubset select_labeled_subset(const Dataset& ds, std::span<const std::size_t> pool, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("labeled fraction must lie in (0, 1]");
  Rng rng(derive_seed({seed, 0x5B5E7}));
  std::map<int, std::vector<std::size_t>> by_class;
  for (auto i : pool) by_class[label_of(ds.samples.at(i))].push_back(i);
  LabeledSubset out;
  bool ok = true;
  for (const auto& [c, members] : by_class)
    if (std::lround(fraction * static_cast<double>(members.size())) < 1) ok = false;
  if (ok) {
    for (auto& [c, members] : by_class) {
      auto m = members;
      rng.shuffle(std::span(m));
      const auto k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(m.size())));
      out.indices.insert(out.indices.end(), m.begin(), m.begin() + k);
    }
  } else {
    out.stratified = false;
    out.warning = "labeled fraction " + std::to_string(fraction) +
                  " leaves some class without labels; falling back to a non-stratified subset";
    std::vector<std::size_t> m(pool.begin(), pool.end());
    rng.shuffle(std::span(m));
    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * m.size())));
    out.indices.assign(m.begin(), m.begin() + std::min(k, m.size()));
  }
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

struct FinetuneSchedule {
  int epochs = 50;
  double lr = 1e-4;
  std::vector<int> milestones{30, 40};
  std::size_t batch_size = 16;
  int crop_length = 64;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  // Classifier input z-scored with statistics of the initial backbone's
  // features on the labeled subset, frozen for the whole run.
  bool standardize = true;
};

struct FinetuneReport {
  FinetuneMode mode = FinetuneMode::semi_supervised;
  double fraction = 1.0;
  std::vector<Metrics> per_seed;
  std::vector<std::string> warnings;
  double mean = 0.0;
  double std = 0.0;
};

inline void summarize(FinetuneReport& r) {
  const double n = static_cast<double>(r.per_seed.size());
  r.mean = 0.0;
  for (const auto& m : r.per_seed) r.mean += m.accuracy / n;
  double var = 0.0;
  for (const auto& m : r.per_seed) var += (m.accuracy - r.mean) * (m.accuracy - r.mean);
  r.std = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
}

/// Trains backbone and a linear classifier jointly on a labeled subset of
/// `train`, evaluates on `test`. `pretrained` is required unless the mode is
/// supervised-only, which initializes the backbone from scratch with `config`.
template <class T>
FinetuneReport finetune(const std::optional<EncoderState<T>>& pretrained, const EncoderConfig& config,
                        const Dataset& train_ds, std::span<const std::size_t> train,
                        const Dataset& test_ds, std::span<const std::size_t> test, double fraction,
                        FinetuneMode mode, const FinetuneSchedule& s,
                        const std::shared_ptr<const GraphTopology>& graph) {
  if (mode != FinetuneMode::supervised_only && !pretrained)
    throw PreconditionError(to_string(mode) + " finetuning needs a pretrained checkpoint");
  if (s.seeds.empty()) throw ArgumentError("finetuning needs at least one seed");
  const int classes = std::max(train_ds.num_classes, test_ds.num_classes);
  if (classes < 2) throw DegenerateError("finetuning needs at least 2 classes");
  FinetuneReport report;
  report.mode = mode;
  report.fraction = fraction;
  for (auto seed : s.seeds) {
    const auto subset = select_labeled_subset(train_ds, train, fraction, seed);
    if (!subset.warning.empty()) report.warnings.push_back("seed " + std::to_string(seed) + ": " + subset.warning);
    std::vector<int> sub_labels;
    for (auto i : subset.indices) sub_labels.push_back(label_of(train_ds.samples[i]));
    detail::require_two_classes(sub_labels);

    EncoderState<T> enc = mode == FinetuneMode::supervised_only
                              ? init_encoder<T>(config, derive_seed({seed, 0xF17E, 1}))
                              : *pretrained;
    const std::size_t P = enc.backbone_size;
    const std::size_t F = static_cast<std::size_t>(enc.config.feature_dim);
    // Flat parameters: backbone block copied out of the encoder, then the
    // classifier [W (classes x F) | b].
    std::vector<T> params(enc.params.values().begin(), enc.params.values().begin() + P);
    const std::size_t w_off = params.size();
    params.resize(w_off + classes * F + classes, T(0));
    {
      Rng init(derive_seed({seed, 0xF17E, 2}));
      const double bound = 1.0 / std::sqrt(static_cast<double>(F));
      for (std::size_t k = w_off; k < params.size(); ++k) params[k] = static_cast<T>(init.uniform(-bound, bound));
    }
    std::vector<double> mean(F, 0.0), inv_std(F, 1.0);
    if (s.standardize) {
      const auto f0 = extract_features<T>(enc, train_ds, subset.indices, s.crop_length, graph);
      const double n = static_cast<double>(f0.rows());
      for (std::size_t i = 0; i < f0.rows(); ++i)
        for (std::size_t d = 0; d < F; ++d) mean[d] += f0.row(i)[d] / n;
      for (std::size_t d = 0; d < F; ++d) {
        double var = 0.0;
        for (std::size_t i = 0; i < f0.rows(); ++i) var += (f0.row(i)[d] - mean[d]) * (f0.row(i)[d] - mean[d]) / n;
        inv_std[d] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
      }
    }
    auto logits = [&](auto feat, std::vector<double>& z) {
      std::vector<double> l(classes);
      for (std::size_t d = 0; d < F; ++d) z[d] = (static_cast<double>(feat[d]) - mean[d]) * inv_std[d];
      for (int c = 0; c < classes; ++c) {
        double acc = params[w_off + classes * F + c];
        for (std::size_t d = 0; d < F; ++d) acc += static_cast<double>(params[w_off + c * F + d]) * z[d];
        l[c] = acc;
      }
      return l;
    };
    std::vector<double> z(F);
    nn::Adam<T> opt;
    std::vector<T> grad(params.size());
    std::vector<T> backbone_grad(enc.params.size());
    std::vector<std::size_t> order = subset.indices;
    Rng rng(derive_seed({seed, 0xF17E, 3}));
    const std::size_t B = std::max<std::size_t>(1, std::min(s.batch_size, order.size()));
    auto sync = [&] { std::copy(params.begin(), params.begin() + P, enc.params.values().begin()); };
    for (int epoch = 0; epoch < s.epochs; ++epoch) {
      opt.lr = nn::step_decay(s.lr, epoch, s.milestones);
      rng.shuffle(std::span(order));
      for (std::size_t start = 0; start < order.size(); start += B) {
        const std::size_t end = std::min(order.size(), start + B);
        std::fill(grad.begin(), grad.end(), T(0));
        std::fill(backbone_grad.begin(), backbone_grad.end(), T(0));
        const T inv = static_cast<T>(1.0 / static_cast<double>(end - start));
        for (std::size_t k = start; k < end; ++k) {
          const auto& sample = train_ds.samples[order[k]];
          const auto view =
              make_view(enc.config.representation, random_crop(sample.sequence, s.crop_length, rng), graph);
          BackboneTape<T> tape;
          const auto feat = backbone_forward<T>(enc, view, &tape);
          auto l = logits(feat, z);
          detail::softmax_xent(l, label_of(sample));
          std::vector<T> dfeat(F, T(0));
          for (int c = 0; c < classes; ++c) {
            const T g = static_cast<T>(l[c]) * inv;
            for (std::size_t d = 0; d < F; ++d) {
              grad[w_off + c * F + d] += g * static_cast<T>(z[d]);
              dfeat[d] += g * params[w_off + c * F + d] * static_cast<T>(inv_std[d]);
            }
            grad[w_off + classes * F + c] += g;
          }
          backbone_backward<T>(enc, tape, dfeat, backbone_grad.data());
        }
        for (std::size_t k = 0; k < P; ++k) grad[k] = backbone_grad[k];
        opt.step(params, grad);
        sync();
      }
    }
    if (!nn::all_finite<T>(params)) throw NonFiniteError("finetuning diverged (seed " + std::to_string(seed) + ")");
    const auto feats = extract_features<T>(enc, test_ds, test, s.crop_length, graph);
    std::vector<int> pred;
    for (std::size_t i = 0; i < feats.rows(); ++i) {
      const auto l = logits(feats.row(i), z);
      pred.push_back(static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin()));
    }
    report.per_seed.push_back(score_predictions(pred, feats.labels, classes, to_string(mode)));
  }
  summarize(report);
  return report;
}

// ---------------------------------------------------------------------------
// Combined probing and export
// ---------------------------------------------------------------------------

template <class T>
Metrics combined_probe(const EncoderState<T>& a, const EncoderState<T>& b, const Dataset& ds,
                       std::span<const std::size_t> train, std::span<const std::size_t> test, int crop_length,
                       const ProbeSchedule& s, const std::shared_ptr<const GraphTopology>& graph) {
  const auto tr = concat_features(extract_features<T>(a, ds, train, crop_length, graph),
                                  extract_features<T>(b, ds, train, crop_length, graph));
  const auto te = concat_features(extract_features<T>(a, ds, test, crop_length, graph),
                                  extract_features<T>(b, ds, test, crop_length, graph));
  auto m = linear_probe(tr, te, s, ds.num_classes);
  m.protocol = "combined-probe";
  return m;
}

enum class Projector { none, pca2d };

inline Projector parse_projector(const std::string& s) {
  if (s == "none") return Projector::none;
  if (s == "pca2d") return Projector::pca2d;
  throw ArgumentError("unknown projector '" + s + "'");
}

struct Pca2d {
  std::vector<double> mean;
  std::vector<double> components[2];  // unit-norm principal axes
  std::vector<double> coords;         // [row][2]
  double variance[2] = {0, 0};
};

/// Top-2 principal components via power iteration with deflation on the
/// sample covariance.
inline Pca2d pca_top2(const FeatureSet& f, std::uint64_t seed = 0, int iterations = 2000) {
  const std::size_t N = f.rows(), D = f.dim;
  if (N < 2 || D < 2) throw ArgumentError("PCA needs at least 2 rows and 2 dimensions");
  Pca2d p;
  p.mean.assign(D, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) p.mean[d] += f.row(i)[d] / static_cast<double>(N);
  std::vector<double> cov(D * D, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto r = f.row(i);
    for (std::size_t a = 0; a < D; ++a) {
      const double ea = r[a] - p.mean[a];
      for (std::size_t b = a; b < D; ++b) cov[a * D + b] += ea * (r[b] - p.mean[b]);
    }
  }
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = a; b < D; ++b) cov[b * D + a] = (cov[a * D + b] /= static_cast<double>(N - 1));
  Rng rng(derive_seed({seed, 0x9CA}));
  for (int k = 0; k < 2; ++k) {
    std::vector<double> v(D), w(D);
    for (double& x : v) x = rng.normal();
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t a = 0; a < D; ++a) w[a] = nn::dot(&cov[a * D], v.data(), D);
      const double n = std::sqrt(nn::dot(w.data(), w.data(), D));
      if (n == 0.0) break;
      double delta = 0.0;
      for (std::size_t a = 0; a < D; ++a) {
        const double nv = w[a] / n;
        delta = std::max(delta, std::abs(nv - v[a]));
        v[a] = nv;
      }
      lambda = n;
      if (delta < 1e-13) break;
    }
    p.components[k] = v;
    p.variance[k] = lambda;
    for (std::size_t a = 0; a < D; ++a)
      for (std::size_t b = 0; b < D; ++b) cov[a * D + b] -= lambda * v[a] * v[b];
  }
  p.coords.resize(N * 2);
  for (std::size_t i = 0; i < N; ++i)
    for (int k = 0; k < 2; ++k) {
      double acc = 0.0;
      for (std::size_t d = 0; d < D; ++d) acc += (f.row(i)[d] - p.mean[d]) * p.components[k][d];
      p.coords[i * 2 + k] = acc;
    }
  return p;
}

/// Line-delimited {id, label, vector} records, plus "pca" with pca2d.
inline void export_embeddings(const std::string& path, const FeatureSet& f, Projector projector) {
  std::optional<Pca2d> pca;
  if (projector == Projector::pca2d) pca = pca_top2(f);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write embeddings to '" + path + "'");
  for (std::size_t i = 0; i < f.rows(); ++i) {
    const auto r = f.row(i);
    nlohmann::json rec = {{"id", f.ids.at(i)},
                          {"label", f.labels[i] < 0 ? nlohmann::json(nullptr) : nlohmann::json(f.labels[i])},
                          {"vector", std::vector<double>(r.begin(), r.end())}};
    if (pca) rec["pca"] = {pca->coords[i * 2], pca->coords[i * 2 + 1]};
    os << rec.dump() << '\n';
  }
  if (!os) throw IoError("failed writing embeddings to '" + path + "'");
}

inline FeatureSet read_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read embeddings '" + path + "'");
  FeatureSet f;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto v = j.at("vector").get<std::vector<double>>();
    if (f.rows() == 0) f.dim = v.size();
    f.values.insert(f.values.end(), v.begin(), v.end());
    f.ids.push_back(j.at("id").get<std::string>());
    f.labels.push_back(j.at("label").is_null() ? -1 : j.at("label").get<int>());
  }
  return f;
}

}  // namespace skelcon
