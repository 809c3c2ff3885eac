#pragma once

// Skeleton augmentations: 3D shear (pose), joint jitter, temporal
// crop-resize, and their composition into query/key positive pairs.
//
// Matrices act on coordinate row vectors: (x, y, z) -> (x, y, z) * A.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "skelcon/error.hpp"
#include "skelcon/rng.hpp"
#include "skelcon/skeleton.hpp"

namespace skelcon {

/// Off-diagonal entries of a unit-diagonal shear matrix.
struct ShearParams {
  double r01 = 0, r02 = 0, r10 = 0, r12 = 0, r20 = 0, r21 = 0;

  std::array<double, 9> matrix() const { return {1.0, r01, r02, r10, 1.0, r12, r20, r21, 1.0}; }
};

struct JitterParams {
  std::vector<int> joint_subset;
  std::array<double, 9> matrix{};  // row-major
};

struct CropResizeParams {
  double length_ratio = 1.0;
  int start = 0;
  int output_length = 64;
};

enum class SpatialMode { pose, jitter, randomized, none };

inline std::string to_string(SpatialMode m) {
  switch (m) {
    case SpatialMode::pose: return "pose";
    case SpatialMode::jitter: return "jitter";
    case SpatialMode::randomized: return "randomized";
    case SpatialMode::none: return "none";
  }
  return "?";
}

inline SpatialMode parse_spatial_mode(const std::string& s) {
  if (s == "pose") return SpatialMode::pose;
  if (s == "jitter") return SpatialMode::jitter;
  if (s == "randomized") return SpatialMode::randomized;
  if (s == "none") return SpatialMode::none;
  throw ArgumentError("unknown spatial augmentation mode '" + s + "'");
}

struct AugmentationSpec {
  SpatialMode spatial = SpatialMode::randomized;
  bool temporal = true;
  double l_min = 0.1;
  int jitter_joints = 15;
  int output_length = 64;
};

inline nlohmann::json to_json(const AugmentationSpec& a) {
  return {{"spatial", to_string(a.spatial)},
          {"temporal", a.temporal},
          {"l_min", a.l_min},
          {"jitter_joints", a.jitter_joints},
          {"output_length", a.output_length}};
}

inline AugmentationSpec augmentation_from_json(const nlohmann::json& j) {
  AugmentationSpec a;
  a.spatial = parse_spatial_mode(j.at("spatial").get<std::string>());
  a.temporal = j.at("temporal").get<bool>();
  a.l_min = j.at("l_min").get<double>();
  a.jitter_joints = j.at("jitter_joints").get<int>();
  a.output_length = j.at("output_length").get<int>();
  return a;
}

namespace detail {

inline void apply_row_matrix(double* xyz, const std::array<double, 9>& a) {
  const double x = xyz[0], y = xyz[1], z = xyz[2];
  for (int c = 0; c < 3; ++c) xyz[c] = x * a[c] + y * a[3 + c] + z * a[6 + c];
}

}  // namespace detail

/// Same shear at every frame, actor and joint.
inline SkeletonSequence pose_augment(const SkeletonSequence& seq, const ShearParams& p) {
  for (double r : {p.r01, p.r02, p.r10, p.r12, p.r20, p.r21})
    if (!(r >= -1.0 && r <= 1.0)) throw ArgumentError("shear entries must lie in [-1, 1]");
  SkeletonSequence out = seq;
  const auto a = p.matrix();
  for (std::size_t k = 0; k + 2 < out.coords.size(); k += 3) detail::apply_row_matrix(&out.coords[k], a);
  return out;
}

/// Transforms only the joints in the subset, identically at every frame and
/// actor; all other coordinates are copied untouched.
inline SkeletonSequence joint_jitter(const SkeletonSequence& seq, const JitterParams& p) {
  const auto& subset = p.joint_subset;
  if (subset.empty() || static_cast<int>(subset.size()) >= seq.joints)
    throw ArgumentError("jitter subset size must satisfy 1 <= |j| < J (got |j|=" + std::to_string(subset.size()) +
                        ", J=" + std::to_string(seq.joints) + ")");
  std::vector<bool> chosen(seq.joints, false);
  for (int j : subset) {
    if (j < 0 || j >= seq.joints) throw ArgumentError("jitter joint index " + std::to_string(j) + " out of range");
    if (chosen[j]) throw ArgumentError("duplicate jitter joint index " + std::to_string(j));
    chosen[j] = true;
  }
  for (double r : p.matrix)
    if (!(r >= -1.0 && r <= 1.0)) throw ArgumentError("jitter matrix entries must lie in [-1, 1]");
  SkeletonSequence out = seq;
  for (int t = 0; t < out.frames; ++t)
    for (int m = 0; m < out.actors; ++m)
      for (int j : subset) detail::apply_row_matrix(&out.coords[out.index(t, m, j, 0)], p.matrix);
  return out;
}

inline int crop_length(int frames, double ratio) {
  return static_cast<int>(std::ceil(static_cast<double>(frames) * ratio));
}

/// Linear resampling of frames [start, start + length) to `output_length`
/// frames; output frame i samples source position i * (length-1)/(output_length-1).
inline SkeletonSequence resample_window(const SkeletonSequence& seq, int start, int length, int output_length) {
  if (output_length < 2) throw ArgumentError("output length must be >= 2");
  if (length < 2) throw ArgumentError("temporal crop must span at least 2 frames (got " + std::to_string(length) + ")");
  if (start < 0 || start + length > seq.frames)
    throw ArgumentError("crop window [" + std::to_string(start) + ", " + std::to_string(start + length) +
                        ") exceeds sequence length " + std::to_string(seq.frames));
  SkeletonSequence out = SkeletonSequence::zeros(output_length, seq.joints, seq.sample_id);
  const std::size_t stride = seq.frame_stride();
  for (int i = 0; i < output_length; ++i) {
    const double pos = static_cast<double>(i * (length - 1)) / static_cast<double>(output_length - 1);
    const int lo = std::min(static_cast<int>(std::floor(pos)), length - 1);
    const double frac = pos - lo;
    const double* a = &seq.coords[(start + lo) * stride];
    double* dst = &out.coords[i * stride];
    if (frac == 0.0) {
      std::copy(a, a + stride, dst);
      continue;
    }
    const double* b = a + stride;
    for (std::size_t k = 0; k < stride; ++k) dst[k] = a[k] + frac * (b[k] - a[k]);
  }
  return out;
}

inline SkeletonSequence temporal_crop_resize(const SkeletonSequence& seq, const CropResizeParams& p) {
  if (!(p.length_ratio > 0.0 && p.length_ratio <= 1.0)) throw ArgumentError("length ratio must lie in (0, 1]");
  return resample_window(seq, p.start, crop_length(seq.frames, p.length_ratio), p.output_length);
}

/// Centered window of `length` frames (whole sequence when shorter),
/// resampled to `length`. Used for evaluation-time inputs.
inline SkeletonSequence center_crop(const SkeletonSequence& seq, int length) {
  if (seq.frames <= length) {
    if (seq.frames == length) return seq;
    if (seq.frames < 2) throw ArgumentError("cannot resample a single-frame sequence");
    return resample_window(seq, 0, seq.frames, length);
  }
  return resample_window(seq, (seq.frames - length) / 2, length, length);
}

/// Random window of `length` frames for downstream training inputs.
inline SkeletonSequence random_crop(const SkeletonSequence& seq, int length, Rng& rng) {
  if (seq.frames <= length) return center_crop(seq, length);
  const int start = static_cast<int>(rng.uniform_int(0, seq.frames - length));
  return resample_window(seq, start, length, length);
}

inline ShearParams sample_shear(Rng& rng) {
  ShearParams p;
  for (double* r : {&p.r01, &p.r02, &p.r10, &p.r12, &p.r20, &p.r21}) *r = rng.uniform(-1.0, 1.0);
  return p;
}

inline JitterParams sample_jitter(Rng& rng, int joints, int count) {
  if (count < 1 || count >= joints)
    throw ArgumentError("jitter joint count must satisfy 1 <= |j| < J (got |j|=" + std::to_string(count) +
                        ", J=" + std::to_string(joints) + ")");
  std::vector<int> all(joints);
  for (int j = 0; j < joints; ++j) all[j] = j;
  // Partial Fisher-Yates.
  for (int i = 0; i < count; ++i) std::swap(all[i], all[rng.uniform_int(i, joints - 1)]);
  JitterParams p;
  p.joint_subset.assign(all.begin(), all.begin() + count);
  for (double& r : p.matrix) r = rng.uniform(-1.0, 1.0);
  return p;
}

/// Ratio ~ U[l_min, 1], crop length ceil(T * ratio) raised to 2 frames when
/// shorter, start uniform over the admissible range.
inline CropResizeParams sample_crop(Rng& rng, int frames, double l_min, int output_length) {
  if (!(l_min > 0.0 && l_min <= 1.0)) throw ArgumentError("l_min must lie in (0, 1]");
  if (frames < 2) throw ArgumentError("temporal crop needs at least 2 frames");
  CropResizeParams p;
  p.output_length = output_length;
  p.length_ratio = rng.uniform(l_min, 1.0);
  int len = crop_length(frames, p.length_ratio);
  if (len < 2) {
    p.length_ratio = 2.0 / frames;
    len = crop_length(frames, p.length_ratio);
  }
  len = std::min(len, frames);
  p.start = static_cast<int>(rng.uniform_int(0, frames - len));
  return p;
}

struct AugmentedView {
  SkeletonSequence sequence;
  SpatialMode applied = SpatialMode::none;  // pose, jitter or none
};

/// One draw of the spatio-temporal augmentation: temporal crop-resize first,
/// then the spatial transform.
inline AugmentedView augment_view(const SkeletonSequence& seq, const AugmentationSpec& spec, Rng& rng) {
  AugmentedView v;
  if (spec.temporal) {
    v.sequence = temporal_crop_resize(seq, sample_crop(rng, seq.frames, spec.l_min, spec.output_length));
  } else {
    v.sequence = resample_window(seq, 0, seq.frames, spec.output_length);
  }
  SpatialMode mode = spec.spatial;
  if (mode == SpatialMode::randomized) mode = rng.bernoulli(0.5) ? SpatialMode::pose : SpatialMode::jitter;
  if (mode == SpatialMode::pose) {
    v.sequence = pose_augment(v.sequence, sample_shear(rng));
  } else if (mode == SpatialMode::jitter) {
    v.sequence = joint_jitter(v.sequence, sample_jitter(rng, seq.joints, spec.jitter_joints));
  }
  v.applied = mode;
  return v;
}

struct QueryKeyPair {
  AugmentedView query;
  AugmentedView key;
};

inline QueryKeyPair make_query_key_pair(const SkeletonSequence& seq, const AugmentationSpec& spec, Rng& rng) {
  QueryKeyPair pair;
  pair.query = augment_view(seq, spec, rng);
  pair.key = augment_view(seq, spec, rng);
  return pair;
}

}  // namespace skelcon
