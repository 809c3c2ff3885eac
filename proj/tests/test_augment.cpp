#include <gtest/gtest.h>

#include <cstring>

#include "skelcon/augment.hpp"

using namespace skelcon;

namespace {

SkeletonSequence random_seq(std::uint64_t seed, int T, int J, bool second_actor = false) {
  Rng rng(seed);
  auto s = SkeletonSequence::zeros(T, J, "r");
  for (int t = 0; t < T; ++t)
    for (int m = 0; m < (second_actor ? 2 : 1); ++m)
      for (int j = 0; j < J; ++j)
        for (int c = 0; c < 3; ++c) s.at(t, m, j, c) = rng.normal();
  return s;
}

// Independent row-vector times 3x3 oracle.
std::array<double, 3> row_times(const std::array<double, 3>& v, const double m[3][3]) {
  std::array<double, 3> r{};
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 3; ++k) r[c] += v[k] * m[k][c];
  return r;
}

}  // namespace

TEST(Pose, ZeroShearIsIdentity) {
  const auto s = random_seq(1, 6, 5, true);
  EXPECT_EQ(pose_augment(s, {}), s);
}

TEST(Pose, SingleOffDiagonalGolden) {
  auto s = SkeletonSequence::zeros(1, 2);
  s.at(0, 0, 0, 0) = 1.0;
  ShearParams p;
  p.r01 = 0.5;
  const auto out = pose_augment(s, p);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 1), 0.5);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 2), 0.0);
}

TEST(Pose, PaddedActorStaysZero) {
  const auto s = random_seq(2, 5, 6);
  Rng rng(3);
  const auto out = pose_augment(s, sample_shear(rng));
  for (int t = 0; t < 5; ++t)
    for (int j = 0; j < 6; ++j)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(t, 1, j, c), 0.0);
}

TEST(Pose, OutOfRangeEntryRejected) {
  ShearParams p;
  p.r12 = 1.5;
  EXPECT_THROW(pose_augment(SkeletonSequence::zeros(2, 3), p), ArgumentError);
}

class PoseRandom : public ::testing::TestWithParam<int> {};

TEST_P(PoseRandom, MatchesMultiplyOracleAndIsLinear) {
  Rng rng(GetParam());
  const auto p = sample_shear(rng);
  const double m[3][3] = {{1, p.r01, p.r02}, {p.r10, 1, p.r12}, {p.r20, p.r21, 1}};
  const auto x = random_seq(10 + GetParam(), 4, 5, true);
  const auto y = random_seq(20 + GetParam(), 4, 5, true);
  const auto px = pose_augment(x, p);
  for (int t = 0; t < 4; ++t)
    for (int a = 0; a < 2; ++a)
      for (int j = 0; j < 5; ++j) {
        const auto r = row_times({x.at(t, a, j, 0), x.at(t, a, j, 1), x.at(t, a, j, 2)}, m);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(px.at(t, a, j, c), r[c], 1e-12);
      }
  const double alpha = rng.normal(), beta = rng.normal();
  auto combo = x;
  for (std::size_t k = 0; k < combo.coords.size(); ++k) combo.coords[k] = alpha * x.coords[k] + beta * y.coords[k];
  const auto lhs = pose_augment(combo, p);
  const auto py = pose_augment(y, p);
  for (std::size_t k = 0; k < lhs.coords.size(); ++k)
    EXPECT_NEAR(lhs.coords[k], alpha * px.coords[k] + beta * py.coords[k], 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Seeds, PoseRandom, ::testing::Range(0, 20));

TEST(Jitter, UniformMatrixGolden) {
  auto s = SkeletonSequence::zeros(1, 3);
  for (int c = 0; c < 3; ++c) s.at(0, 0, 1, c) = 1.0;
  JitterParams p;
  p.joint_subset = {1};
  p.matrix.fill(0.2);
  const auto out = joint_jitter(s, p);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.at(0, 0, 1, c), 0.6, 1e-15);
}

TEST(Jitter, SubsetMustBeProperAndUnique) {
  const auto s = SkeletonSequence::zeros(2, 4);
  JitterParams p;
  p.joint_subset = {0, 1, 2, 3};
  EXPECT_THROW(joint_jitter(s, p), ArgumentError);
  p.joint_subset = {};
  EXPECT_THROW(joint_jitter(s, p), ArgumentError);
  p.joint_subset = {1, 1};
  EXPECT_THROW(joint_jitter(s, p), ArgumentError);
  p.joint_subset = {4};
  EXPECT_THROW(joint_jitter(s, p), ArgumentError);
  Rng rng(0);
  EXPECT_THROW(sample_jitter(rng, 25, 25), ArgumentError);
}

TEST(Jitter, DefaultSubsetSizeIsFifteen) { EXPECT_EQ(AugmentationSpec{}.jitter_joints, 15); }

class JitterRandom : public ::testing::TestWithParam<int> {};

TEST_P(JitterRandom, UntouchedJointsAreBitEqual) {
  Rng rng(GetParam());
  const int J = 6 + GetParam() % 20;
  const auto s = random_seq(GetParam(), 5, J, true);
  const auto p = sample_jitter(rng, J, 1 + GetParam() % (J - 1));
  const auto out = joint_jitter(s, p);
  std::vector<bool> chosen(J, false);
  for (int j : p.joint_subset) chosen[j] = true;
  double m[3][3];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[r][c] = p.matrix[r * 3 + c];
  for (int t = 0; t < 5; ++t)
    for (int a = 0; a < 2; ++a)
      for (int j = 0; j < J; ++j) {
        if (!chosen[j]) {
          EXPECT_EQ(std::memcmp(&out.coords[out.index(t, a, j, 0)], &s.coords[s.index(t, a, j, 0)], 3 * sizeof(double)),
                    0);
          continue;
        }
        const auto r = row_times({s.at(t, a, j, 0), s.at(t, a, j, 1), s.at(t, a, j, 2)}, m);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.at(t, a, j, c), r[c], 1e-12);
      }
}

INSTANTIATE_TEST_SUITE_P(Seeds, JitterRandom, ::testing::Range(0, 20));

TEST(Crop, FullCropSameLengthIsIdentity) {
  const auto s = random_seq(4, 9, 5, true);
  EXPECT_EQ(temporal_crop_resize(s, {1.0, 0, 9}), s);
}

TEST(Crop, LinearInterpolationGolden) {
  auto s = SkeletonSequence::zeros(4, 2);
  for (int t = 0; t < 4; ++t) s.at(t, 0, 0, 0) = t;
  const auto out = temporal_crop_resize(s, {1.0, 0, 7});
  ASSERT_EQ(out.frames, 7);
  const double expect[7] = {0, 0.5, 1, 1.5, 2, 2.5, 3};
  for (int i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(out.at(i, 0, 0, 0), expect[i]);
}

TEST(Crop, DefaultLowerRatioAndLength) {
  EXPECT_DOUBLE_EQ(AugmentationSpec{}.l_min, 0.1);
  EXPECT_EQ(AugmentationSpec{}.output_length, 64);
}

TEST(Crop, TooShortWindowRejected) {
  const auto s = SkeletonSequence::zeros(10, 3);
  EXPECT_THROW(temporal_crop_resize(s, {0.1, 0, 8}), ArgumentError);
  EXPECT_THROW(temporal_crop_resize(s, {0.5, 6, 8}), ArgumentError);
  EXPECT_THROW(temporal_crop_resize(s, {1.0, 0, 1}), ArgumentError);
}

class CropRandom : public ::testing::TestWithParam<int> {};

TEST_P(CropRandom, WindowMatchesInterpolationOracle) {
  Rng rng(GetParam());
  const int T = 8 + GetParam() * 3;
  const auto s = random_seq(GetParam(), T, 5, true);
  const auto p = sample_crop(rng, T, 0.1, 16);
  const int len = crop_length(T, p.length_ratio);
  ASSERT_GE(len, 2);
  ASSERT_LE(p.start + len, T);
  const auto out = temporal_crop_resize(s, p);
  ASSERT_EQ(out.frames, 16);
  for (int i = 0; i < 16; ++i) {
    const double src = p.start + i * (len - 1) / 15.0;
    const int lo = std::min(static_cast<int>(src), T - 1);
    const int hi = std::min(lo + 1, T - 1);
    const double w = src - lo;
    for (int a = 0; a < 2; ++a)
      for (int j = 0; j < 5; ++j)
        for (int c = 0; c < 3; ++c)
          EXPECT_NEAR(out.at(i, a, j, c), (1 - w) * s.at(lo, a, j, c) + w * s.at(hi, a, j, c), 1e-12);
  }
}

TEST_P(CropRandom, ConstantSequenceIsFixedPoint) {
  Rng rng(GetParam());
  auto s = SkeletonSequence::zeros(12, 4);
  for (int t = 0; t < 12; ++t)
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 3; ++c) s.at(t, 0, j, c) = j + 0.1 * c;
  const auto out = temporal_crop_resize(s, sample_crop(rng, 12, 0.1, 20));
  for (int t = 0; t < 20; ++t)
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.at(t, 0, j, c), j + 0.1 * c, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Seeds, CropRandom, ::testing::Range(0, 20));

TEST(Pair, NoAugmentationGivesResampledInput) {
  const auto s = random_seq(5, 10, 5, true);
  AugmentationSpec spec;
  spec.spatial = SpatialMode::none;
  spec.temporal = false;
  spec.output_length = 10;
  Rng rng(1);
  const auto pair = make_query_key_pair(s, spec, rng);
  EXPECT_EQ(pair.query.sequence, s);
  EXPECT_EQ(pair.key.sequence, s);
}

TEST(Pair, DeterministicGivenSeedAndShapePreserving) {
  const auto s = random_seq(6, 40, 25, true);
  AugmentationSpec spec;
  Rng a(99), b(99);
  const auto p = make_query_key_pair(s, spec, a);
  const auto q = make_query_key_pair(s, spec, b);
  EXPECT_EQ(p.query.sequence, q.query.sequence);
  EXPECT_EQ(p.key.sequence, q.key.sequence);
  EXPECT_EQ(p.query.sequence.frames, 64);
  EXPECT_EQ(p.query.sequence.joints, 25);
  EXPECT_EQ(p.query.sequence.actors, 2);
  EXPECT_NE(p.query.sequence, p.key.sequence);
}

TEST(Pair, RandomizedModeIsFair) {
  const auto s = random_seq(7, 10, 20);
  AugmentationSpec spec;
  spec.output_length = 4;
  Rng rng(2024);
  int pose = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) pose += augment_view(s, spec, rng).applied == SpatialMode::pose;
  const double f = static_cast<double>(pose) / n;
  EXPECT_GE(f, 0.48);
  EXPECT_LE(f, 0.52);
}
