#pragma once

// Packing of a skeleton sequence into the three input representations.
// Two actors are concatenated along the joint axis (IMG), the feature axis
// (SEQ), or stored as two disjoint graph components (STG).

#include <cmath>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "skelcon/error.hpp"
#include "skelcon/skeleton.hpp"

namespace skelcon {

enum class Representation { IMG, SEQ, STG };

inline std::string to_string(Representation r) {
  switch (r) {
    case Representation::IMG: return "IMG";
    case Representation::SEQ: return "SEQ";
    case Representation::STG: return "STG";
  }
  return "?";
}

inline Representation parse_representation(const std::string& s) {
  if (s == "IMG") return Representation::IMG;
  if (s == "SEQ") return Representation::SEQ;
  if (s == "STG") return Representation::STG;
  throw ArgumentError("unknown representation '" + s + "' (expected IMG, SEQ or STG)");
}

/// Pseudo-image, channel-first: [xyz][frame][actor * J + joint].
struct ImageView {
  int frames = 0, actors = kActors, joints = 0;
  std::vector<double> data;

  int width() const { return actors * joints; }
  double at(int c, int t, int p) const {
    return data[(static_cast<std::size_t>(c) * frames + t) * width() + p];
  }
};

/// Time series: [frame][actor * J * 3 + joint * 3 + xyz].
struct SeqView {
  int frames = 0, actors = kActors, joints = 0;
  std::vector<double> data;

  int width() const { return actors * joints * 3; }
  const double* row(int t) const { return &data[static_cast<std::size_t>(t) * width()]; }
};

/// Per-actor adjacency with self loops plus its symmetric degree
/// normalization D^-1/2 A D^-1/2, computed once per topology.
struct GraphTopology {
  int joints = 0;
  std::vector<int> adjacency;    // J x J, 0/1
  std::vector<double> normalized;  // J x J
  // Sparse form of `normalized`: for each joint, (neighbour, weight) pairs.
  std::vector<std::vector<std::pair<int, double>>> neighbors;

  static std::shared_ptr<const GraphTopology> build(const Topology& topo) {
    topo.validate();
    auto g = std::make_shared<GraphTopology>();
    const int J = topo.joints;
    g->joints = J;
    g->adjacency.assign(static_cast<std::size_t>(J) * J, 0);
    for (int j = 0; j < J; ++j) g->adjacency[j * J + j] = 1;
    for (auto [a, b] : topo.bones) {
      g->adjacency[a * J + b] = 1;
      g->adjacency[b * J + a] = 1;
    }
    std::vector<double> inv_sqrt_deg(J);
    for (int i = 0; i < J; ++i) {
      int deg = 0;
      for (int j = 0; j < J; ++j) deg += g->adjacency[i * J + j];
      inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(deg));
    }
    g->normalized.assign(static_cast<std::size_t>(J) * J, 0.0);
    g->neighbors.resize(J);
    for (int i = 0; i < J; ++i)
      for (int j = 0; j < J; ++j)
        if (g->adjacency[i * J + j]) {
          const double w = inv_sqrt_deg[i] * inv_sqrt_deg[j];
          g->normalized[i * J + j] = w;
          g->neighbors[i].emplace_back(j, w);
        }
    return g;
  }
};

/// Node features [actor * J + joint][frame][xyz]; temporal edges link the same
/// node in consecutive frames implicitly.
struct GraphView {
  int frames = 0, actors = kActors, joints = 0;
  std::vector<double> nodes;
  std::shared_ptr<const GraphTopology> graph;

  int node_count() const { return actors * joints; }
  double at(int n, int t, int c) const { return nodes[(static_cast<std::size_t>(n) * frames + t) * 3 + c]; }
};

using RepresentationView = std::variant<ImageView, SeqView, GraphView>;

inline Representation representation_of(const RepresentationView& v) {
  return static_cast<Representation>(v.index());
}

inline ImageView to_image(const SkeletonSequence& seq) {
  ImageView v{seq.frames, seq.actors, seq.joints, {}};
  v.data.resize(seq.coords.size());
  const int W = v.width();
  for (int t = 0; t < seq.frames; ++t)
    for (int m = 0; m < seq.actors; ++m)
      for (int j = 0; j < seq.joints; ++j)
        for (int c = 0; c < 3; ++c)
          v.data[(static_cast<std::size_t>(c) * seq.frames + t) * W + m * seq.joints + j] = seq.at(t, m, j, c);
  return v;
}

inline SeqView to_sequence(const SkeletonSequence& seq) {
  // Row-major flattening of coords[t] is exactly the canonical layout.
  return SeqView{seq.frames, seq.actors, seq.joints, seq.coords};
}

inline GraphView to_graph(const SkeletonSequence& seq, std::shared_ptr<const GraphTopology> graph) {
  if (!graph || graph->joints != seq.joints)
    throw ArgumentError("graph topology has " + std::to_string(graph ? graph->joints : 0) +
                        " joints but the sequence has " + std::to_string(seq.joints));
  GraphView v{seq.frames, seq.actors, seq.joints, {}, std::move(graph)};
  v.nodes.resize(seq.coords.size());
  for (int t = 0; t < seq.frames; ++t)
    for (int m = 0; m < seq.actors; ++m)
      for (int j = 0; j < seq.joints; ++j)
        for (int c = 0; c < 3; ++c)
          v.nodes[(static_cast<std::size_t>(m * seq.joints + j) * seq.frames + t) * 3 + c] = seq.at(t, m, j, c);
  return v;
}

inline RepresentationView make_view(Representation rep, const SkeletonSequence& seq,
                                    const std::shared_ptr<const GraphTopology>& graph) {
  switch (rep) {
    case Representation::IMG: return to_image(seq);
    case Representation::SEQ: return to_sequence(seq);
    case Representation::STG: return to_graph(seq, graph);
  }
  throw ArgumentError("unsupported representation");
}

inline SkeletonSequence from_image(const ImageView& v) {
  auto s = SkeletonSequence::zeros(v.frames, v.joints);
  s.actors = v.actors;
  s.coords.resize(v.data.size());
  for (int t = 0; t < v.frames; ++t)
    for (int m = 0; m < v.actors; ++m)
      for (int j = 0; j < v.joints; ++j)
        for (int c = 0; c < 3; ++c) s.at(t, m, j, c) = v.at(c, t, m * v.joints + j);
  return s;
}

inline SkeletonSequence from_sequence(const SeqView& v) {
  auto s = SkeletonSequence::zeros(v.frames, v.joints);
  s.actors = v.actors;
  s.coords = v.data;
  return s;
}

inline SkeletonSequence from_graph(const GraphView& v) {
  auto s = SkeletonSequence::zeros(v.frames, v.joints);
  s.actors = v.actors;
  s.coords.resize(v.nodes.size());
  for (int t = 0; t < v.frames; ++t)
    for (int m = 0; m < v.actors; ++m)
      for (int j = 0; j < v.joints; ++j)
        for (int c = 0; c < 3; ++c) s.at(t, m, j, c) = v.at(m * v.joints + j, t, c);
  return s;
}

}  // namespace skelcon
