#pragma once

// Encoder families for the three representations plus the shared projection
// head. Everything is templated on the scalar type: float for training runs,
// double for gradient checking.
//
//   SEQ  bidirectional GRU stack; feature = [last forward state, last backward state]
//   IMG  point-wise stem, temporal conv, joint co-occurrence mixing, temporal
//        conv(s), mean pool over frames
//   STG  blocks of (A_hat X W, temporal conv), mean pool over frames and nodes

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "skelcon/checkpoint.hpp"
#include "skelcon/error.hpp"
#include "skelcon/nn/layers.hpp"
#include "skelcon/nn/params.hpp"
#include "skelcon/represent.hpp"
#include "skelcon/rng.hpp"

namespace skelcon {

enum class EncoderScale { desk, paper };

inline std::string to_string(EncoderScale s) { return s == EncoderScale::desk ? "desk" : "paper"; }
inline EncoderScale parse_encoder_scale(const std::string& s) {
  if (s == "desk") return EncoderScale::desk;
  if (s == "paper") return EncoderScale::paper;
  throw ArgumentError("unknown encoder scale '" + s + "'");
}

struct EncoderConfig {
  Representation representation = Representation::SEQ;
  EncoderScale scale = EncoderScale::desk;
  int joints = 25;
  int depth = 1;            // GRU layers, extra IMG convs + 1, or STG blocks
  int hidden = 32;          // H
  int feature_dim = 64;     // backbone output; 2H for SEQ
  int projection_dim = 128;
  int stem_channels = 8;    // IMG only

  static EncoderConfig desk(Representation rep, int joints) {
    EncoderConfig c;
    c.representation = rep;
    c.joints = joints;
    c.scale = EncoderScale::desk;
    switch (rep) {
      case Representation::SEQ: c.depth = 1, c.hidden = 32, c.feature_dim = 64; break;
      case Representation::IMG: c.depth = 1, c.hidden = 32, c.feature_dim = 64, c.stem_channels = 8; break;
      case Representation::STG: c.depth = 2, c.hidden = 32, c.feature_dim = 64; break;
    }
    return c;
  }

  /// Full-scale shapes: 3-layer BiGRU with H=1024 (2048-d features),
  /// 4096-d IMG features, 256-d STG features.
  static EncoderConfig paper(Representation rep, int joints) {
    EncoderConfig c;
    c.representation = rep;
    c.joints = joints;
    c.scale = EncoderScale::paper;
    switch (rep) {
      case Representation::SEQ: c.depth = 3, c.hidden = 1024, c.feature_dim = 2048; break;
      case Representation::IMG: c.depth = 2, c.hidden = 256, c.feature_dim = 4096, c.stem_channels = 64; break;
      case Representation::STG: c.depth = 10, c.hidden = 128, c.feature_dim = 256; break;
    }
    return c;
  }

  void validate() const {
    auto bad = [](const std::string& what) { throw ArgumentError("encoder config: " + what); };
    if (joints < 2) bad("joints must be >= 2");
    if (depth < 1) bad("depth must be >= 1");
    if (hidden < 1) bad("hidden must be >= 1");
    if (feature_dim < 1) bad("feature_dim must be >= 1");
    if (projection_dim < 2) bad("projection_dim must be >= 2");
    if (stem_channels < 1) bad("stem_channels must be >= 1");
    if (representation == Representation::SEQ && feature_dim != 2 * hidden)
      bad("SEQ feature_dim must equal 2 * hidden (" + std::to_string(2 * hidden) + ")");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"representation", to_string(c.representation)},
          {"scale", to_string(c.scale)},
          {"joints", c.joints},
          {"depth", c.depth},
          {"hidden", c.hidden},
          {"feature_dim", c.feature_dim},
          {"projection_dim", c.projection_dim},
          {"stem_channels", c.stem_channels}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.representation = parse_representation(j.at("representation").get<std::string>());
  c.scale = parse_encoder_scale(j.at("scale").get<std::string>());
  c.joints = j.at("joints").get<int>();
  c.depth = j.at("depth").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.projection_dim = j.at("projection_dim").get<int>();
  c.stem_channels = j.at("stem_channels").get<int>();
  return c;
}

template <class T>
using Embedding = std::vector<T>;

namespace detail {

inline void check_view_shape(int view_joints, int view_actors, int frames, const EncoderConfig& cfg) {
  if (view_joints != cfg.joints)
    throw ArgumentError("view has " + std::to_string(view_joints) + " joints but the encoder expects " +
                        std::to_string(cfg.joints));
  if (view_actors != kActors) throw ArgumentError("view must carry exactly 2 actors");
  if (frames < 1) throw ArgumentError("view has no frames");
}

}  // namespace detail

template <class T>
class SeqBackbone {
 public:
  struct Tape {
    int frames = 0;
    std::vector<std::vector<T>> inputs;  // per layer, [frames][width]
    std::vector<std::array<typename nn::GruDirection<T>::Cache, 2>> caches;
  };

  SeqBackbone() = default;
  SeqBackbone(const EncoderConfig& cfg, nn::ParamSet<T>& p) : hidden_(cfg.hidden), input_(kActors * cfg.joints * 3) {
    for (int l = 0; l < cfg.depth; ++l) {
      const int in = l == 0 ? input_ : 2 * hidden_;
      const std::string name = "backbone.gru.l" + std::to_string(l);
      layers_.push_back({nn::GruDirection<T>::make(p, name + ".fwd", in, hidden_, false),
                         nn::GruDirection<T>::make(p, name + ".bwd", in, hidden_, true)});
    }
  }

  void init(nn::ParamSet<T>& p, Rng& rng) const {
    for (const auto& l : layers_)
      for (const auto& d : l) d.init(p, rng);
  }

  std::vector<T> forward(const nn::ParamSet<T>& p, const SeqView& v, Tape* tape) const {
    Tape local;
    Tape& tp = tape ? *tape : local;
    const int frames = v.frames;
    tp.frames = frames;
    tp.inputs.assign(layers_.size(), {});
    tp.caches.assign(layers_.size(), {});
    tp.inputs[0].assign(v.data.begin(), v.data.end());
    std::vector<T> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::size_t in_w = l == 0 ? input_ : 2 * hidden_;
      out.assign(static_cast<std::size_t>(frames) * 2 * hidden_, T(0));
      for (int d = 0; d < 2; ++d)
        layers_[l][d].forward(p.data(), tp.inputs[l].data(), in_w, frames, out.data(), 2 * hidden_,
                              static_cast<std::size_t>(d) * hidden_, tp.caches[l][d]);
      if (l + 1 < layers_.size()) tp.inputs[l + 1] = out;
    }
    std::vector<T> feature(2 * hidden_);
    const T* last = out.data() + static_cast<std::size_t>(frames - 1) * 2 * hidden_;
    std::copy(last, last + hidden_, feature.begin());
    std::copy(out.begin() + hidden_, out.begin() + 2 * hidden_, feature.begin() + hidden_);
    return feature;
  }

  void backward(const nn::ParamSet<T>& p, const Tape& tp, std::span<const T> dfeat, T* grad) const {
    const int frames = tp.frames;
    const std::size_t W = 2 * hidden_;
    std::vector<T> dout(frames * W, T(0));
    std::copy(dfeat.begin(), dfeat.begin() + hidden_, dout.begin() + (frames - 1) * W);
    std::copy(dfeat.begin() + hidden_, dfeat.end(), dout.begin() + hidden_);
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const std::size_t in_w = l == 0 ? input_ : W;
      std::vector<T> din(l == 0 ? 0 : frames * in_w, T(0));
      for (int d = 0; d < 2; ++d)
        layers_[l][d].backward(p.data(), tp.inputs[l].data(), in_w, tp.caches[l][d], dout.data(), W,
                               static_cast<std::size_t>(d) * hidden_, grad, l == 0 ? nullptr : din.data());
      dout.swap(din);
    }
  }

 private:
  int hidden_ = 0;
  int input_ = 0;
  std::vector<std::array<nn::GruDirection<T>, 2>> layers_;
};

template <class T>
class ImgBackbone {
 public:
  struct Tape {
    int frames = 0;
    std::vector<T> x;                  // [frames][points][3]
    std::vector<std::vector<T>> acts;  // post-ReLU output of every conv
  };

  ImgBackbone() = default;
  ImgBackbone(const EncoderConfig& cfg, nn::ParamSet<T>& p) : points_(kActors * cfg.joints) {
    const int cs = cfg.stem_channels;
    convs_.push_back(nn::TemporalConv<T>::make(p, "backbone.stem", 3, cs, 1));
    convs_.push_back(nn::TemporalConv<T>::make(p, "backbone.temporal", cs, cs, 3));
    convs_.push_back(nn::TemporalConv<T>::make(p, "backbone.cooccurrence", points_ * cs, cfg.hidden, 1));
    for (int d = 1; d < cfg.depth; ++d)
      convs_.push_back(nn::TemporalConv<T>::make(p, "backbone.conv" + std::to_string(d), cfg.hidden, cfg.hidden, 3));
    convs_.push_back(nn::TemporalConv<T>::make(p, "backbone.out", cfg.hidden, cfg.feature_dim, 3));
  }

  void init(nn::ParamSet<T>& p, Rng& rng) const {
    for (const auto& c : convs_) c.init(p, rng);
  }

  std::vector<T> forward(const nn::ParamSet<T>& p, const ImageView& v, Tape* tape) const {
    Tape local;
    Tape& tp = tape ? *tape : local;
    const int frames = v.frames;
    tp.frames = frames;
    tp.x.resize(static_cast<std::size_t>(frames) * points_ * 3);
    for (int c = 0; c < 3; ++c)
      for (int t = 0; t < frames; ++t)
        for (int q = 0; q < points_; ++q)
          tp.x[(static_cast<std::size_t>(t) * points_ + q) * 3 + c] = static_cast<T>(v.at(c, t, q));
    tp.acts.assign(convs_.size(), {});
    const T* in = tp.x.data();
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const int groups = groups_of(i);
      tp.acts[i].resize(static_cast<std::size_t>(frames) * groups * convs_[i].out);
      convs_[i].forward(p.data(), in, frames, groups, tp.acts[i].data());
      nn::relu_inplace(tp.acts[i]);
      in = tp.acts[i].data();
    }
    const auto& top = tp.acts.back();
    const int F = convs_.back().out;
    std::vector<T> feature(F, T(0));
    for (int t = 0; t < frames; ++t)
      for (int f = 0; f < F; ++f) feature[f] += top[static_cast<std::size_t>(t) * F + f];
    for (auto& f : feature) f /= static_cast<T>(frames);
    return feature;
  }

  void backward(const nn::ParamSet<T>& p, const Tape& tp, std::span<const T> dfeat, T* grad) const {
    const int frames = tp.frames;
    const int F = convs_.back().out;
    std::vector<T> dy(static_cast<std::size_t>(frames) * F);
    for (int t = 0; t < frames; ++t)
      for (int f = 0; f < F; ++f) dy[static_cast<std::size_t>(t) * F + f] = dfeat[f] / static_cast<T>(frames);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      nn::relu_backward_inplace(tp.acts[i], dy);
      const T* in = i == 0 ? tp.x.data() : tp.acts[i - 1].data();
      std::vector<T> dx(i == 0 ? 0 : tp.acts[i - 1].size(), T(0));
      convs_[i].backward(p.data(), in, dy.data(), frames, groups_of(i), grad, i == 0 ? nullptr : dx.data());
      dy.swap(dx);
    }
  }

 private:
  // Stem and first temporal conv run per point; later layers see each frame
  // as one group whose channels are all (point, channel) pairs.
  int groups_of(std::size_t i) const { return i < 2 ? points_ : 1; }

  int points_ = 0;
  std::vector<nn::TemporalConv<T>> convs_;
};

template <class T>
class GraphBackbone {
 public:
  struct Tape {
    int frames = 0;
    std::vector<T> x;                             // [frames][nodes][3]
    std::vector<std::vector<T>> agg, spatial, out;  // per block
    std::shared_ptr<const GraphTopology> graph;
  };

  GraphBackbone() = default;
  GraphBackbone(const EncoderConfig& cfg, nn::ParamSet<T>& p) : joints_(cfg.joints) {
    for (int b = 0; b < cfg.depth; ++b) {
      const int cin = b == 0 ? 3 : cfg.hidden;
      const int cout = b + 1 == cfg.depth ? cfg.feature_dim : cfg.hidden;
      const std::string name = "backbone.block" + std::to_string(b);
      gcn_.push_back(nn::TemporalConv<T>::make(p, name + ".gcn", cin, cout, 1));
      tcn_.push_back(nn::TemporalConv<T>::make(p, name + ".tcn", cout, cout, 3));
    }
  }

  void init(nn::ParamSet<T>& p, Rng& rng) const {
    for (std::size_t b = 0; b < gcn_.size(); ++b) {
      gcn_[b].init(p, rng);
      tcn_[b].init(p, rng);
    }
  }

  std::vector<T> forward(const nn::ParamSet<T>& p, const GraphView& v, Tape* tape) const {
    if (!v.graph) throw ArgumentError("graph view carries no adjacency");
    Tape local;
    Tape& tp = tape ? *tape : local;
    const int frames = v.frames;
    const int nodes = v.node_count();
    tp.frames = frames;
    tp.graph = v.graph;
    tp.x.resize(static_cast<std::size_t>(frames) * nodes * 3);
    for (int n = 0; n < nodes; ++n)
      for (int t = 0; t < frames; ++t)
        for (int c = 0; c < 3; ++c)
          tp.x[(static_cast<std::size_t>(t) * nodes + n) * 3 + c] = static_cast<T>(v.at(n, t, c));
    const std::size_t blocks = gcn_.size();
    tp.agg.assign(blocks, {});
    tp.spatial.assign(blocks, {});
    tp.out.assign(blocks, {});
    const T* in = tp.x.data();
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t cells = static_cast<std::size_t>(frames) * nodes;
      tp.agg[b].resize(cells * gcn_[b].in);
      nn::graph_aggregate(v.graph->neighbors, joints_, kActors, in, frames, gcn_[b].in, tp.agg[b].data());
      tp.spatial[b].resize(cells * gcn_[b].out);
      gcn_[b].forward(p.data(), tp.agg[b].data(), frames, nodes, tp.spatial[b].data());
      nn::relu_inplace(tp.spatial[b]);
      tp.out[b].resize(cells * tcn_[b].out);
      tcn_[b].forward(p.data(), tp.spatial[b].data(), frames, nodes, tp.out[b].data());
      nn::relu_inplace(tp.out[b]);
      in = tp.out[b].data();
    }
    const int F = tcn_.back().out;
    std::vector<T> feature(F, T(0));
    const auto& top = tp.out.back();
    const std::size_t cells = static_cast<std::size_t>(frames) * nodes;
    for (std::size_t k = 0; k < cells; ++k)
      for (int f = 0; f < F; ++f) feature[f] += top[k * F + f];
    for (auto& f : feature) f /= static_cast<T>(cells);
    return feature;
  }

  void backward(const nn::ParamSet<T>& p, const Tape& tp, std::span<const T> dfeat, T* grad) const {
    const int frames = tp.frames;
    const int nodes = kActors * joints_;
    const std::size_t cells = static_cast<std::size_t>(frames) * nodes;
    const int F = tcn_.back().out;
    std::vector<T> dy(cells * F);
    for (std::size_t k = 0; k < cells; ++k)
      for (int f = 0; f < F; ++f) dy[k * F + f] = dfeat[f] / static_cast<T>(cells);
    for (std::size_t b = gcn_.size(); b-- > 0;) {
      nn::relu_backward_inplace(tp.out[b], dy);
      std::vector<T> ds(tp.spatial[b].size(), T(0));
      tcn_[b].backward(p.data(), tp.spatial[b].data(), dy.data(), frames, nodes, grad, ds.data());
      nn::relu_backward_inplace(tp.spatial[b], ds);
      const bool need_input_grad = b > 0;
      std::vector<T> dagg(need_input_grad ? tp.agg[b].size() : 0, T(0));
      gcn_[b].backward(p.data(), tp.agg[b].data(), ds.data(), frames, nodes, grad,
                       need_input_grad ? dagg.data() : nullptr);
      if (!need_input_grad) break;
      dy.assign(dagg.size(), T(0));
      nn::graph_aggregate(tp.graph->neighbors, joints_, kActors, dagg.data(), frames, gcn_[b].in, dy.data());
    }
  }

 private:
  int joints_ = 0;
  std::vector<nn::TemporalConv<T>> gcn_, tcn_;
};

template <class T>
using Backbone = std::variant<ImgBackbone<T>, SeqBackbone<T>, GraphBackbone<T>>;

template <class T>
using BackboneTape =
    std::variant<typename ImgBackbone<T>::Tape, typename SeqBackbone<T>::Tape, typename GraphBackbone<T>::Tape>;

/// Query or key encoder: backbone plus projection head, parameters in one
/// flat ParamSet (backbone entries first).
template <class T>
struct EncoderState {
  EncoderConfig config;
  nn::ParamSet<T> params;
  std::uint64_t step = 0;
  Backbone<T> backbone;
  nn::Dense<T> head_hidden, head_out;
  std::size_t backbone_size = 0;
};

/// Builds the parameter layout for `config` with all parameters zero.
template <class T>
EncoderState<T> make_encoder_layout(const EncoderConfig& config) {
  config.validate();
  EncoderState<T> s;
  s.config = config;
  switch (config.representation) {
    case Representation::IMG: s.backbone = ImgBackbone<T>(config, s.params); break;
    case Representation::SEQ: s.backbone = SeqBackbone<T>(config, s.params); break;
    case Representation::STG: s.backbone = GraphBackbone<T>(config, s.params); break;
    default: throw ArgumentError("unsupported representation");
  }
  s.backbone_size = s.params.size();
  s.head_hidden = nn::Dense<T>::make(s.params, "head.fc1", config.feature_dim, config.feature_dim);
  s.head_out = nn::Dense<T>::make(s.params, "head.fc2", config.feature_dim, config.projection_dim);
  return s;
}

template <class T>
EncoderState<T> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  auto s = make_encoder_layout<T>(config);
  Rng rng(derive_seed({seed, 0xE1C0DE}));
  std::visit([&](const auto& b) { b.init(s.params, rng); }, s.backbone);
  s.head_hidden.init(s.params, rng);
  s.head_out.init(s.params, rng);
  return s;
}

template <class T>
std::size_t parameter_count(const EncoderConfig& config) {
  return make_encoder_layout<T>(config).params.size();
}

/// Backbone features (projection head excluded).
template <class T>
std::vector<T> backbone_forward(const EncoderState<T>& s, const RepresentationView& view, BackboneTape<T>* tape) {
  if (representation_of(view) != s.config.representation)
    throw ArgumentError("view representation " + to_string(representation_of(view)) + " does not match encoder " +
                        to_string(s.config.representation));
  return std::visit(
      [&](const auto& v) -> std::vector<T> {
        using V = std::decay_t<decltype(v)>;
        detail::check_view_shape(v.joints, v.actors, v.frames, s.config);
        if constexpr (std::is_same_v<V, ImageView>) {
          auto* tp = tape ? &tape->template emplace<0>() : nullptr;
          return std::get<ImgBackbone<T>>(s.backbone).forward(s.params, v, tp);
        } else if constexpr (std::is_same_v<V, SeqView>) {
          auto* tp = tape ? &tape->template emplace<1>() : nullptr;
          return std::get<SeqBackbone<T>>(s.backbone).forward(s.params, v, tp);
        } else {
          auto* tp = tape ? &tape->template emplace<2>() : nullptr;
          return std::get<GraphBackbone<T>>(s.backbone).forward(s.params, v, tp);
        }
      },
      view);
}

template <class T>
void backbone_backward(const EncoderState<T>& s, const BackboneTape<T>& tape, std::span<const T> dfeat, T* grad) {
  std::visit(
      [&](const auto& b) {
        using B = std::decay_t<decltype(b)>;
        b.backward(s.params, std::get<typename B::Tape>(tape), dfeat, grad);
      },
      s.backbone);
}

template <class T>
std::vector<T> encode(const RepresentationView& view, const EncoderState<T>& s) {
  return backbone_forward<T>(s, view, nullptr);
}

template <class T>
struct HeadTape {
  std::vector<T> feature, hidden, projected;
};

/// Two-layer head (ReLU between), before normalization.
template <class T>
std::vector<T> project(const EncoderState<T>& s, std::span<const T> feature, HeadTape<T>* tape) {
  if (static_cast<int>(feature.size()) != s.config.feature_dim)
    throw ArgumentError("feature has dimension " + std::to_string(feature.size()) + ", head expects " +
                        std::to_string(s.config.feature_dim));
  std::vector<T> hidden(s.config.feature_dim), projected(s.config.projection_dim);
  s.head_hidden.forward(s.params.data(), feature.data(), hidden.data());
  nn::relu_inplace(hidden);
  s.head_out.forward(s.params.data(), hidden.data(), projected.data());
  if (tape) {
    tape->feature.assign(feature.begin(), feature.end());
    tape->hidden = hidden;
    tape->projected = projected;
  }
  return projected;
}

template <class T>
std::vector<T> head_backward(const EncoderState<T>& s, const HeadTape<T>& tape, std::span<const T> dprojected,
                             T* grad) {
  std::vector<T> dhidden(s.config.feature_dim, T(0)), dfeature(s.config.feature_dim, T(0));
  s.head_out.backward(s.params.data(), tape.hidden.data(), dprojected.data(), grad, dhidden.data());
  nn::relu_backward_inplace(tape.hidden, dhidden);
  s.head_hidden.backward(s.params.data(), tape.feature.data(), dhidden.data(), grad, dfeature.data());
  return dfeature;
}

inline constexpr double kMinProjectionNorm = 1e-12;

/// Exact L2 normalization; zero-norm projections raise instead of clamping.
template <class T>
Embedding<T> normalize_embedding(std::span<const T> projected, double* norm_out = nullptr) {
  double sq = 0.0;
  for (T v : projected) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (!(norm >= kMinProjectionNorm))
    throw DegenerateError("projected embedding has norm " + std::to_string(norm) + " (< 1e-12)");
  if (norm_out) *norm_out = norm;
  Embedding<T> z(projected.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<T>(static_cast<double>(projected[i]) / norm);
  return z;
}

template <class T>
Embedding<T> project_and_normalize(std::span<const T> feature, const EncoderState<T>& s) {
  const auto projected = project<T>(s, feature, nullptr);
  return normalize_embedding<T>(projected);
}

template <class T>
struct EncoderTape {
  BackboneTape<T> backbone;
  HeadTape<T> head;
  Embedding<T> embedding;
  double norm = 1.0;
};

/// Full path view -> unit-norm embedding, recording what backward needs.
template <class T>
Embedding<T> embed(const EncoderState<T>& s, const RepresentationView& view, EncoderTape<T>* tape) {
  const auto feature = backbone_forward<T>(s, view, tape ? &tape->backbone : nullptr);
  const auto projected = project<T>(s, feature, tape ? &tape->head : nullptr);
  double norm = 0.0;
  auto z = normalize_embedding<T>(projected, &norm);
  if (tape) {
    tape->embedding = z;
    tape->norm = norm;
  }
  return z;
}

/// Accumulates d(loss)/d(params) given d(loss)/d(embedding).
template <class T>
void embed_backward(const EncoderState<T>& s, const EncoderTape<T>& tape, std::span<const T> dz, T* grad) {
  const auto& z = tape.embedding;
  T zdz = T(0);
  for (std::size_t i = 0; i < z.size(); ++i) zdz += z[i] * dz[i];
  std::vector<T> dprojected(z.size());
  const T inv = static_cast<T>(1.0 / tape.norm);
  for (std::size_t i = 0; i < z.size(); ++i) dprojected[i] = (dz[i] - z[i] * zdz) * inv;
  const auto dfeature = head_backward<T>(s, tape.head, dprojected, grad);
  backbone_backward<T>(s, tape.backbone, dfeature, grad);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

template <class T>
std::vector<ArrayRecord> encoder_arrays(const EncoderState<T>& s, const std::string& prefix = {}) {
  std::vector<ArrayRecord> arrays;
  for (const auto& e : s.params.entries()) arrays.push_back(make_array<T>(prefix + e.name, e.shape, s.params.view(e)));
  return arrays;
}

template <class T>
void load_encoder_arrays(EncoderState<T>& s, const Container& c, const std::string& prefix = {}) {
  for (const auto& e : s.params.entries()) {
    const auto& a = c.get(prefix + e.name);
    if (a.shape != e.shape) throw SchemaError("checkpoint array '" + a.name + "' has the wrong shape");
    auto dst = s.params.view(e);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.values[i]);
  }
}

template <class T>
void save_encoder(const std::string& path, const EncoderState<T>& s) {
  write_container(path, {{"kind", "encoder"}, {"config", to_json(s.config)}, {"step", s.step}}, encoder_arrays(s));
}

template <class T>
EncoderState<T> load_encoder(const std::string& path) {
  const auto c = read_container(path);
  if (c.manifest.value("kind", "") != "encoder") throw SchemaError(path + ": not an encoder checkpoint");
  auto s = make_encoder_layout<T>(encoder_config_from_json(c.manifest.at("config")));
  s.step = c.manifest.at("step").get<std::uint64_t>();
  load_encoder_arrays(s, c);
  return s;
}

}  // namespace skelcon
