#pragma once

// Skeleton sequence types, the canonical SKL1 line format, dataset splits and
// the synthetic action generator used for desk-scale experiments.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "skelcon/error.hpp"
#include "skelcon/rng.hpp"

namespace skelcon {

inline constexpr int kActors = 2;
inline constexpr const char* kSkeletonFormat = "SKL1";

/// Raw sample: coordinates laid out [frame][actor][joint][xyz], meters.
struct SkeletonSequence {
  std::string sample_id;
  int frames = 0;
  int actors = kActors;
  int joints = 0;
  std::vector<double> coords;

  static SkeletonSequence zeros(int frames, int joints, std::string id = {}) {
    SkeletonSequence s;
    s.sample_id = std::move(id);
    s.frames = frames;
    s.joints = joints;
    s.coords.assign(static_cast<std::size_t>(frames) * kActors * joints * 3, 0.0);
    return s;
  }

  std::size_t index(int t, int m, int j, int c) const {
    return ((static_cast<std::size_t>(t) * actors + m) * joints + j) * 3 + c;
  }
  double& at(int t, int m, int j, int c) { return coords[index(t, m, j, c)]; }
  double at(int t, int m, int j, int c) const { return coords[index(t, m, j, c)]; }

  std::size_t frame_stride() const { return static_cast<std::size_t>(actors) * joints * 3; }

  friend bool operator==(const SkeletonSequence&, const SkeletonSequence&) = default;
};

struct ValidationReport {
  bool ok = true;
  std::string message;
  // Location of the first offending coordinate, when there is one.
  int frame = -1, actor = -1, joint = -1, coord = -1;

  explicit operator bool() const { return ok; }
};

inline ValidationReport validate_sequence(const SkeletonSequence& seq) {
  ValidationReport r;
  auto fail = [&](std::string msg) {
    r.ok = false;
    r.message = "sample '" + seq.sample_id + "': " + std::move(msg);
    return r;
  };
  if (seq.actors != kActors)
    return fail("expected " + std::to_string(kActors) + " actors (pad absent actors with zeros), got " +
                std::to_string(seq.actors));
  if (seq.frames < 1) return fail("frame count must be >= 1");
  if (seq.joints < 2) return fail("joint count must be >= 2");
  if (seq.coords.size() != static_cast<std::size_t>(seq.frames) * seq.actors * seq.joints * 3)
    return fail("coordinate buffer size does not match T x M x J x 3");
  for (int t = 0; t < seq.frames; ++t)
    for (int m = 0; m < seq.actors; ++m)
      for (int j = 0; j < seq.joints; ++j)
        for (int c = 0; c < 3; ++c)
          if (!std::isfinite(seq.at(t, m, j, c))) {
            r.frame = t;
            r.actor = m;
            r.joint = j;
            r.coord = c;
            return fail("non-finite coordinate at frame " + std::to_string(t) + ", actor " +
                        std::to_string(m) + ", joint " + std::to_string(j) + ", coord " +
                        std::to_string(c));
          }
  return r;
}

/// Bone edge list over J joints; joint 0 is the root.
struct Topology {
  int joints = 0;
  std::vector<std::pair<int, int>> bones;

  /// The 25-joint NTU RGB+D layout (0-based), rooted at the spine base.
  static Topology ntu25() {
    static constexpr int kEdges[24][2] = {
        {1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},   {7, 6},   {8, 7},
        {9, 21},  {10, 9},  {11, 10}, {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15},
        {17, 1},  {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8},  {24, 25}, {25, 12}};
    Topology t;
    t.joints = 25;
    for (const auto& e : kEdges) t.bones.emplace_back(e[0] - 1, e[1] - 1);
    return t;
  }

  /// Five kinematic chains hanging off joint 0; used for synthetic skeletons
  /// with J != 25.
  static Topology chains(int joints) {
    if (joints < 2) throw ArgumentError("topology needs at least 2 joints");
    Topology t;
    t.joints = joints;
    for (int j = 1; j < joints; ++j) t.bones.emplace_back(j <= 5 ? 0 : j - 5, j);
    return t;
  }

  static Topology default_for(int joints) { return joints == 25 ? ntu25() : chains(joints); }

  void validate() const {
    std::set<std::pair<int, int>> seen;
    for (auto [a, b] : bones) {
      if (a < 0 || b < 0 || a >= joints || b >= joints)
        throw SchemaError("bone (" + std::to_string(a) + "," + std::to_string(b) +
                          ") references a joint outside [0," + std::to_string(joints) + ")");
      if (a == b) throw SchemaError("bone with identical endpoints " + std::to_string(a));
      if (!seen.insert(std::minmax(a, b)).second)
        throw SchemaError("duplicate bone (" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
  }

  /// Parent of every joint under a breadth-first traversal from joint 0
  /// (-1 for the root and for joints unreachable from it).
  std::vector<int> parents() const {
    std::vector<std::vector<int>> adj(joints);
    for (auto [a, b] : bones) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<int> parent(joints, -1);
    std::vector<bool> visited(joints, false);
    std::vector<int> frontier{0};
    visited[0] = true;
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      int u = frontier[i];
      for (int v : adj[u])
        if (!visited[v]) {
          visited[v] = true;
          parent[v] = u;
          frontier.push_back(v);
        }
    }
    return parent;
  }

  friend bool operator==(const Topology&, const Topology&) = default;
};

struct LabeledSample {
  SkeletonSequence sequence;
  std::optional<int> label;
  std::optional<int> subject;
  std::optional<int> view;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  int joints = 0;
  Topology topology;

  std::size_t size() const { return samples.size(); }
  bool labeled() const {
    return !samples.empty() &&
           std::all_of(samples.begin(), samples.end(), [](const auto& s) { return s.label.has_value(); });
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Canonical SKL1 format
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json optional_int(const std::optional<int>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<int> read_optional_int(const nlohmann::json& obj, const char* key,
                                            const std::string& where) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  if (!obj[key].is_number_integer()) throw ParseError(where + ": field '" + key + "' must be an integer or null");
  return obj[key].get<int>();
}

inline int read_int(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number_integer())
    throw ParseError(where + ": missing or non-integer field '" + key + "'");
  return obj[key].get<int>();
}

}  // namespace detail

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  nlohmann::json header = {{"format", kSkeletonFormat},
                           {"J", ds.joints},
                           {"num_classes", ds.num_classes},
                           {"bones", nlohmann::json::array()}};
  for (auto [a, b] : ds.topology.bones) header["bones"].push_back({a, b});
  os << header.dump() << '\n';
  for (const auto& s : ds.samples) {
    const auto& q = s.sequence;
    nlohmann::json coords = nlohmann::json::array();
    for (int t = 0; t < q.frames; ++t) {
      nlohmann::json frame = nlohmann::json::array();
      for (int m = 0; m < q.actors; ++m) {
        nlohmann::json actor = nlohmann::json::array();
        for (int j = 0; j < q.joints; ++j)
          actor.push_back({q.at(t, m, j, 0), q.at(t, m, j, 1), q.at(t, m, j, 2)});
        frame.push_back(std::move(actor));
      }
      coords.push_back(std::move(frame));
    }
    nlohmann::json rec = {{"id", q.sample_id},
                          {"label", detail::optional_int(s.label)},
                          {"subject", detail::optional_int(s.subject)},
                          {"view", detail::optional_int(s.view)},
                          {"T", q.frames},
                          {"M", q.actors},
                          {"J", q.joints},
                          {"coords", std::move(coords)}};
    os << rec.dump() << '\n';
  }
  if (!os) throw IoError("failed writing skeleton dataset");
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
}

/// Parses an SKL1 stream. Record indices in error messages are 1-based and
/// exclude the header line.
inline Dataset read_dataset(std::istream& is) {
  using nlohmann::json;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("line 1: missing SKL1 header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("line 1 (header): ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != kSkeletonFormat)
    throw ParseError("line 1 (header): expected format \"SKL1\"");
  Dataset ds;
  ds.joints = detail::read_int(header, "J", "line 1 (header)");
  ds.num_classes = detail::read_int(header, "num_classes", "line 1 (header)");
  ds.topology.joints = ds.joints;
  if (!header.contains("bones") || !header["bones"].is_array())
    throw ParseError("line 1 (header): missing 'bones' array");
  for (const auto& b : header["bones"]) {
    if (!b.is_array() || b.size() != 2 || !b[0].is_number_integer() || !b[1].is_number_integer())
      throw ParseError("line 1 (header): each bone must be [i, j]");
    ds.topology.bones.emplace_back(b[0].get<int>(), b[1].get<int>());
  }
  ds.topology.validate();

  std::size_t line_no = 1;
  std::size_t record = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++record;
    const std::string where = "record " + std::to_string(record) + " (line " + std::to_string(line_no) + ")";
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!rec.is_object()) throw ParseError(where + ": expected a JSON object");
    LabeledSample s;
    auto& q = s.sequence;
    if (!rec.contains("id") || !rec["id"].is_string()) throw ParseError(where + ": missing string field 'id'");
    q.sample_id = rec["id"].get<std::string>();
    s.label = detail::read_optional_int(rec, "label", where);
    s.subject = detail::read_optional_int(rec, "subject", where);
    s.view = detail::read_optional_int(rec, "view", where);
    q.frames = detail::read_int(rec, "T", where);
    q.actors = detail::read_int(rec, "M", where);
    q.joints = detail::read_int(rec, "J", where);
    if (q.joints != ds.joints)
      throw SchemaError(where + ": J=" + std::to_string(q.joints) + " but the dataset declares J=" +
                        std::to_string(ds.joints));
    if (q.actors != kActors)
      throw SchemaError(where + ": M=" + std::to_string(q.actors) + ", expected " + std::to_string(kActors));
    if (q.frames < 1) throw SchemaError(where + ": T must be >= 1");
    if (s.label && (*s.label < 0 || *s.label >= ds.num_classes))
      throw SchemaError(where + ": label " + std::to_string(*s.label) + " outside [0, num_classes)");

    const auto& c = rec.contains("coords") ? rec["coords"] : json();
    auto shape_error = [&](const std::string& what) { return ParseError(where + ": coords " + what); };
    if (!c.is_array() || c.size() != static_cast<std::size_t>(q.frames)) throw shape_error("must have T frames");
    q.coords.resize(static_cast<std::size_t>(q.frames) * q.actors * q.joints * 3);
    std::size_t k = 0;
    for (const auto& frame : c) {
      if (!frame.is_array() || frame.size() != static_cast<std::size_t>(q.actors))
        throw shape_error("frames must have M actors");
      for (const auto& actor : frame) {
        if (!actor.is_array() || actor.size() != static_cast<std::size_t>(q.joints))
          throw shape_error("actors must have J joints");
        for (const auto& joint : actor) {
          if (!joint.is_array() || joint.size() != 3) throw shape_error("joints must have 3 coordinates");
          for (const auto& v : joint) {
            // null is how JSON writers emit NaN/Inf; it is caught by validation below.
            if (v.is_null())
              q.coords[k++] = std::numeric_limits<double>::quiet_NaN();
            else if (v.is_number())
              q.coords[k++] = v.get<double>();
            else
              throw shape_error("entries must be numbers");
          }
        }
      }
    }
    if (auto report = validate_sequence(q); !report)
      throw ValidationError(where + ": " + report.message);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open skeleton file '" + path + "'");
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class SplitProtocol { cross_subject, cross_view, cross_setup, random };

inline std::string to_string(SplitProtocol p) {
  switch (p) {
    case SplitProtocol::cross_subject: return "cross-subject";
    case SplitProtocol::cross_view: return "cross-view";
    case SplitProtocol::cross_setup: return "cross-setup";
    case SplitProtocol::random: return "random";
  }
  return "?";
}

inline SplitProtocol parse_split_protocol(const std::string& s) {
  if (s == "cross-subject") return SplitProtocol::cross_subject;
  if (s == "cross-view") return SplitProtocol::cross_view;
  if (s == "cross-setup") return SplitProtocol::cross_setup;
  if (s == "random") return SplitProtocol::random;
  throw ArgumentError("unknown split protocol '" + s + "'");
}

/// Disjoint train/test index sets into Dataset::samples.
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  SplitProtocol protocol = SplitProtocol::random;
};

struct SplitOptions {
  SplitProtocol protocol = SplitProtocol::random;
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
  // Subject ids (cross-subject) or view/setup ids (cross-view, cross-setup)
  // that go to the training side. Empty selects even ids for cross-subject
  // and every id except the largest for cross-view/setup.
  std::vector<int> train_groups;
};

inline DataSplit make_split(const Dataset& ds, const SplitOptions& opt) {
  DataSplit split;
  split.protocol = opt.protocol;
  if (opt.protocol == SplitProtocol::random) {
    if (!(opt.test_fraction > 0.0 && opt.test_fraction < 1.0))
      throw ArgumentError("test_fraction must lie in (0, 1)");
    // Stratified by label when labels exist so every class appears on both sides.
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.size(); ++i) groups[ds.samples[i].label.value_or(-1)].push_back(i);
    Rng rng(derive_seed({opt.seed, 0x5B117}));
    for (auto& [label, idx] : groups) {
      rng.shuffle(std::span(idx));
      auto n_test = static_cast<std::size_t>(std::llround(opt.test_fraction * static_cast<double>(idx.size())));
      if (idx.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
      for (std::size_t k = 0; k < idx.size(); ++k) (k < n_test ? split.test : split.train).push_back(idx[k]);
    }
  } else {
    const bool by_subject = opt.protocol == SplitProtocol::cross_subject;
    std::set<int> all;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& g = by_subject ? ds.samples[i].subject : ds.samples[i].view;
      if (!g)
        throw SchemaError("sample '" + ds.samples[i].sequence.sample_id + "' lacks " +
                          (by_subject ? "a subject id" : "a view id") + " required by " + to_string(opt.protocol));
      all.insert(*g);
    }
    std::set<int> train_groups(opt.train_groups.begin(), opt.train_groups.end());
    if (train_groups.empty()) {
      for (int g : all)
        if (by_subject ? g % 2 == 0 : g != *all.rbegin()) train_groups.insert(g);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
      int g = by_subject ? *ds.samples[i].subject : *ds.samples[i].view;
      (train_groups.count(g) ? split.train : split.test).push_back(i);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic actions
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int num_classes = 5;
  int samples_per_class = 20;
  int frames = 64;
  int joints = 25;
  std::uint64_t seed = 7;
  double camera_distance = 3.0;  // mean depth of the root joint
  double view_range = 0.7853981633974483;  // yaw drawn from [-v, v]
  double shared_motion = 0.0;  // fraction of joints whose motion every class shares
  double speed_range = 0.15;   // speed factor drawn from [1 - s, 1 + s]
  double style = 0.0;          // per-sample relative amplitude variation
  double translation = 1.0;    // scale of the random root offset
  double body_scale = 0.15;    // subject scale drawn from [1 - b, 1 + b]
  double posture = 0.0;        // class-specific static joint bend, radians
};

namespace detail {

using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return r;
}

inline Vec3 mat_vec(const Mat3& a, const Vec3& v) {
  return {a[0] * v[0] + a[1] * v[1] + a[2] * v[2], a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
          a[6] * v[0] + a[7] * v[1] + a[8] * v[2]};
}

inline Mat3 axis_angle(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), C = 1.0 - c;
  const auto [x, y, z] = axis;
  return {c + x * x * C,     x * y * C - z * s, x * z * C + y * s,
          y * x * C + z * s, c + y * y * C,     y * z * C - x * s,
          z * x * C - y * s, z * y * C + x * s, c + z * z * C};
}

inline Vec3 random_unit(Rng& rng) {
  for (;;) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-6) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

}  // namespace detail

/// Each class is a motion primitive: every bone oscillates about a class-owned
/// axis with its own amplitude, integer frequency and phase. Samples add a
/// random yaw (view), a per-subject body scale, a speed change, a time shift
/// and coordinate noise. The second actor is always zero padding.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ArgumentError("num_classes must be >= 2");
  if (spec.samples_per_class < 1) throw ArgumentError("samples_per_class must be >= 1");
  if (spec.frames < 8) throw ArgumentError("T must be >= 8");
  if (spec.joints < 5) throw ArgumentError("J must be >= 5");
  using namespace detail;
  constexpr double kTau = 2.0 * std::numbers::pi;
  constexpr int kSubjects = 8;

  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.joints = spec.joints;
  ds.topology = Topology::default_for(spec.joints);
  const auto parent = ds.topology.parents();
  std::vector<int> order;  // parents before children
  {
    std::vector<int> depth(spec.joints, 0);
    for (int j = 0; j < spec.joints; ++j)
      for (int p = parent[j]; p >= 0; p = parent[p]) ++depth[j];
    order.resize(spec.joints);
    for (int j = 0; j < spec.joints; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return depth[a] < depth[b]; });
  }

  // Rest pose is shared by every class.
  std::vector<Vec3> offset(spec.joints, Vec3{0, 0, 0});
  {
    Rng rng(derive_seed({spec.seed, 0xB0DE}));
    for (int j = 1; j < spec.joints; ++j) {
      auto dir = random_unit(rng);
      const double len = rng.uniform(0.1, 0.3);
      offset[j] = {dir[0] * len, dir[1] * len, dir[2] * len};
    }
  }

  struct JointMotion {
    Vec3 axis;
    double amplitude, frequency, phase;
    Vec3 bend_axis{1, 0, 0};
    double bend = 0.0;
  };
  auto draw_motion = [](Rng& rng) {
    const bool active = rng.bernoulli(0.5);
    return JointMotion{random_unit(rng), active ? rng.uniform(0.4, 1.2) : rng.uniform(0.0, 0.1),
                       static_cast<double>(rng.uniform_int(1, 3)), rng.uniform(0.0, kTau)};
  };
  std::vector<bool> shared(spec.joints, false);
  std::vector<JointMotion> common(spec.joints);
  {
    Rng rng(derive_seed({spec.seed, 0xC0AA0}));
    for (int j = 1; j < spec.joints; ++j) {
      shared[j] = rng.uniform() < spec.shared_motion;
      common[j] = draw_motion(rng);
    }
  }
  std::vector<std::vector<JointMotion>> motion(spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) {
    Rng rng(derive_seed({spec.seed, 0xC1A55, static_cast<std::uint64_t>(c)}));
    motion[c].resize(spec.joints);
    for (int j = 1; j < spec.joints; ++j) {
      const auto own = draw_motion(rng);
      motion[c][j] = shared[j] ? common[j] : own;
      motion[c][j].bend_axis = random_unit(rng);
      motion[c][j].bend = spec.posture * rng.uniform(-1.0, 1.0);
    }
  }
  std::array<double, kSubjects> subject_scale{};
  {
    Rng rng(derive_seed({spec.seed, 0x5B1EC7}));
    for (auto& s : subject_scale) s = rng.uniform(1.0 - spec.body_scale, 1.0 + spec.body_scale);
  }

  const int T = spec.frames, J = spec.joints;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.samples_per_class; ++i) {
      Rng rng(derive_seed({spec.seed, 0x5A3B1E, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}));
      const int subject = static_cast<int>(rng.uniform_int(0, kSubjects - 1));
      const double yaw = rng.uniform(-spec.view_range, spec.view_range);
      const double scale = subject_scale[subject] * rng.uniform(0.95, 1.05);
      const double speed = rng.uniform(1.0 - spec.speed_range, 1.0 + spec.speed_range);
      const double shift = rng.uniform(0.0, static_cast<double>(T));
      const Vec3 origin{spec.translation * rng.uniform(-0.5, 0.5), spec.translation * rng.uniform(-0.2, 0.2),
                        spec.camera_distance + spec.translation * rng.uniform(-0.5, 0.5)};
      const Mat3 view_rot = axis_angle({0.0, 1.0, 0.0}, yaw);
      std::vector<double> gain(J, 1.0);
      for (auto& gj : gain) gj = 1.0 + spec.style * rng.uniform(-1.0, 1.0);
      const int view = yaw < -spec.view_range / 3 ? 0 : (yaw < spec.view_range / 3 ? 1 : 2);

      LabeledSample s;
      s.label = c;
      s.subject = subject;
      s.view = view;
      s.sequence = SkeletonSequence::zeros(T, J, "c" + std::to_string(c) + "_s" + std::to_string(i));
      std::vector<Mat3> global(J);
      std::vector<Vec3> pos(J);
      for (int t = 0; t < T; ++t) {
        const double phase_t = kTau * speed * (t + shift) / T;
        for (int j : order) {
          if (parent[j] < 0) {
            global[j] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
            pos[j] = {0, 0, 0};
            continue;
          }
          const auto& mo = motion[c][j];
          const double angle = gain[j] * mo.amplitude * std::sin(mo.frequency * phase_t + mo.phase);
          global[j] = mat_mul(global[parent[j]], mat_mul(axis_angle(mo.bend_axis, mo.bend), axis_angle(mo.axis, angle)));
          const Vec3 d = mat_vec(global[j], offset[j]);
          pos[j] = {pos[parent[j]][0] + d[0], pos[parent[j]][1] + d[1], pos[parent[j]][2] + d[2]};
        }
        for (int j = 0; j < J; ++j) {
          const Vec3 p = mat_vec(view_rot, pos[j]);
          for (int k = 0; k < 3; ++k) s.sequence.at(t, 0, j, k) = origin[k] + scale * p[k] + 0.01 * rng.normal();
        }
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

/// Brute-force 1-nearest-neighbour accuracy on raw flattened coordinates
/// (Euclidean). All sequences must share one shape.
inline double raw_nearest_neighbor_accuracy(const Dataset& ds, const DataSplit& split) {
  if (split.train.empty() || split.test.empty()) throw ArgumentError("split sides must be nonempty");
  const std::size_t n = ds.samples[split.train.front()].sequence.coords.size();
  std::size_t correct = 0;
  for (auto qi : split.test) {
    const auto& q = ds.samples[qi].sequence.coords;
    if (q.size() != n) throw ArgumentError("raw nearest neighbour needs equal-shape sequences");
    double best = std::numeric_limits<double>::infinity();
    int best_label = -1;
    for (auto gi : split.train) {
      const auto& g = ds.samples[gi].sequence.coords;
      if (g.size() != n) throw ArgumentError("raw nearest neighbour needs equal-shape sequences");
      double d = 0.0;
      for (std::size_t k = 0; k < n; ++k) d += (q[k] - g[k]) * (q[k] - g[k]);
      if (d < best) {
        best = d;
        best_label = ds.samples[gi].label.value_or(-1);
      }
    }
    if (best_label == ds.samples[qi].label.value_or(-2)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.test.size());
}

}  // namespace skelcon
