#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "skelcon/contrast.hpp"

using namespace skelcon;
namespace fs = std::filesystem;

namespace {

constexpr int kJoints = 6;

Dataset tiny_dataset(int per_class = 4, int frames = 12) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = per_class;
  spec.frames = frames;
  spec.joints = kJoints;
  spec.seed = 5;
  spec.translation = 0.2;
  return generate_synthetic(spec);
}

TrainerOptions tiny_options(ContrastMode mode, std::vector<Representation> reps) {
  TrainerOptions o;
  o.mode = mode;
  o.representations = std::move(reps);
  o.queue_size = 16;
  o.momentum = 0.9;
  o.augmentation.output_length = 8;
  o.augmentation.jitter_joints = 2;
  o.seed = 21;
  return o;
}

std::map<Representation, EncoderConfig> tiny_configs() {
  std::map<Representation, EncoderConfig> m;
  for (auto rep : {Representation::IMG, Representation::SEQ, Representation::STG}) {
    auto c = EncoderConfig::desk(rep, kJoints);
    c.hidden = 8;
    c.feature_dim = rep == Representation::SEQ ? 16 : 12;
    c.projection_dim = 16;
    c.stem_channels = 4;
    m[rep] = c;
  }
  return m;
}

template <class T>
Trainer<T> make_trainer(const TrainerOptions& o, const Dataset& ds) {
  auto t = Trainer<T>::create(o, tiny_configs(), GraphTopology::build(ds.topology));
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  warmup_queues(t, ds, all);
  return t;
}

std::vector<const SkeletonSequence*> batch_of(const Dataset& ds, std::initializer_list<std::size_t> idx) {
  std::vector<const SkeletonSequence*> b;
  for (auto i : idx) b.push_back(&ds.samples[i].sequence);
  return b;
}

// Perturbs query parameters of every branch and compares the batch loss with
// the analytic gradient; views, queues and key encoders are held fixed.
void check_gradients(Trainer<double>& t, const PreparedBatch& prepared, std::uint64_t seed) {
  BatchGradients<double> grads;
  compute_batch_loss(t, prepared, &grads);
  Rng rng(seed);
  const double h = 1e-5;
  for (std::size_t b = 0; b < t.branches().size(); ++b) {
    auto& params = t.branches()[b].pair.query.params.values();
    ASSERT_EQ(grads.per_branch[b].size(), params.size());
    for (int k = 0; k < 100; ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, params.size() - 1));
      const double keep = params[i];
      params[i] = keep + h;
      const double up = compute_batch_loss<double>(t, prepared, nullptr).total;
      params[i] = keep - h;
      const double down = compute_batch_loss<double>(t, prepared, nullptr).total;
      params[i] = keep;
      const double fd = (up - down) / (2 * h), an = grads.per_branch[b][i];
      EXPECT_LT(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-5}), 1e-4)
          << "branch " << b << " param " << i << " fd " << fd << " analytic " << an;
    }
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Warmup, FillsQueuesFromKeyEncoder) {
  const auto ds = tiny_dataset();
  auto t = make_trainer<float>(tiny_options(ContrastMode::intra, {Representation::SEQ}), ds);
  // One pass at most: 12 samples into a 16-slot queue.
  EXPECT_EQ(t.branches()[0].queue.size(), ds.size());
  auto opts = tiny_options(ContrastMode::intra, {Representation::SEQ});
  opts.queue_size = 8;
  EXPECT_TRUE(make_trainer<float>(opts, ds).branches()[0].queue.full());
}

TEST(Step, EmptyQueueAndWrongModeRejected) {
  const auto ds = tiny_dataset();
  const auto opts = tiny_options(ContrastMode::intra, {Representation::SEQ});
  auto cold = Trainer<float>::create(opts, tiny_configs(), GraphTopology::build(ds.topology));
  const auto batch = batch_of(ds, {0, 1});
  EXPECT_THROW(intra_step(cold, std::span<const SkeletonSequence* const>(batch)), PreconditionError);
  auto t = make_trainer<float>(opts, ds);
  EXPECT_THROW(inter_step(t, std::span<const SkeletonSequence* const>(batch)), PreconditionError);
}

TEST(Step, KeyEncoderFollowsMomentumFormulaOnly) {
  const auto ds = tiny_dataset();
  auto t = make_trainer<float>(tiny_options(ContrastMode::inter, {Representation::SEQ, Representation::IMG}), ds);
  const auto batch = batch_of(ds, {0, 4, 8});
  for (int s = 0; s < 3; ++s) {
    std::vector<std::vector<float>> keys_before;
    for (const auto& b : t.branches()) keys_before.push_back(b.pair.key.params.values());
    inter_step(t, std::span<const SkeletonSequence* const>(batch));
    for (std::size_t b = 0; b < t.branches().size(); ++b) {
      const auto& br = t.branches()[b];
      const float m = 0.9f, one_minus = static_cast<float>(1.0 - 0.9);
      for (std::size_t i = 0; i < keys_before[b].size(); ++i)
        ASSERT_EQ(br.pair.key.params.values()[i], m * keys_before[b][i] + one_minus * br.pair.query.params.values()[i]);
    }
  }
  EXPECT_EQ(t.step, 3u);
}

TEST(Step, EnqueuesThisBatchKeysAfterTheLoss) {
  const auto ds = tiny_dataset();
  auto t = make_trainer<double>(tiny_options(ContrastMode::intra, {Representation::SEQ}), ds);
  const auto batch = batch_of(ds, {1, 2});
  const auto prepared = prepare_batch(t, std::span<const SkeletonSequence* const>(batch), t.step);
  BatchGradients<double> g;
  compute_batch_loss(t, prepared, &g);
  intra_step(t, std::span<const SkeletonSequence* const>(batch));
  const auto rows = t.branches()[0].queue.ordered();
  EXPECT_EQ(rows[rows.size() - 2], g.keys[0][0]);
  EXPECT_EQ(rows[rows.size() - 1], g.keys[0][1]);
}

class IntraFd : public ::testing::TestWithParam<Representation> {};

TEST_P(IntraFd, QueryGradientsMatchCentralDifferences) {
  const auto ds = tiny_dataset();
  auto t = make_trainer<double>(tiny_options(ContrastMode::intra, {GetParam()}), ds);
  const auto batch = batch_of(ds, {0, 5});
  const auto prepared = prepare_batch(t, std::span<const SkeletonSequence* const>(batch), 0);
  check_gradients(t, prepared, 77);
}

INSTANTIATE_TEST_SUITE_P(Families, IntraFd,
                         ::testing::Values(Representation::IMG, Representation::SEQ, Representation::STG),
                         [](const auto& info) { return to_string(info.param); });

TEST(InterFd, BothQueryEncodersMatchCentralDifferences) {
  const auto ds = tiny_dataset();
  auto t = make_trainer<double>(tiny_options(ContrastMode::inter, {Representation::SEQ, Representation::STG}), ds);
  const auto batch = batch_of(ds, {2, 7});
  const auto prepared = prepare_batch(t, std::span<const SkeletonSequence* const>(batch), 0);
  check_gradients(t, prepared, 78);
}

TEST(Inter3Fd, AllThreeQueryEncodersMatchCentralDifferences) {
  const auto ds = tiny_dataset();
  auto t = make_trainer<double>(
      tiny_options(ContrastMode::inter3, {Representation::IMG, Representation::SEQ, Representation::STG}), ds);
  const auto batch = batch_of(ds, {3});
  const auto prepared = prepare_batch(t, std::span<const SkeletonSequence* const>(batch), 0);
  check_gradients(t, prepared, 79);
}

TEST(Inter, TotalIsSumOfTerms) {
  const auto ds = tiny_dataset();
  auto t = make_trainer<double>(tiny_options(ContrastMode::inter, {Representation::SEQ, Representation::STG}), ds);
  const auto batch = batch_of(ds, {0, 1, 2, 3});
  for (int s = 0; s < 3; ++s) {
    const auto r = inter_step(t, std::span<const SkeletonSequence* const>(batch));
    ASSERT_EQ(r.per_representation.size(), 2u);
    EXPECT_EQ(r.total, r.term("SEQ") + r.term("STG"));
  }
}

TEST(Inter, MirroredBranchesGiveEqualTerms) {
  const auto ds = tiny_dataset();
  const auto cfg = tiny_configs().at(Representation::SEQ);
  auto opts = tiny_options(ContrastMode::inter, {Representation::SEQ, Representation::SEQ});
  Trainer<double> t(opts, {{cfg, 9}, {cfg, 9}}, {{0, 1, 1.0}, {1, 0, 1.0}}, GraphTopology::build(ds.topology));
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  warmup_queues(t, ds, all);
  const auto batch = batch_of(ds, {0, 6});
  for (int s = 0; s < 2; ++s) {
    const auto r = train_step(t, std::span<const SkeletonSequence* const>(batch));
    ASSERT_EQ(r.per_representation.size(), 2u);
    EXPECT_EQ(r.per_representation[0].second, r.per_representation[1].second);
  }
}

TEST(Inter, SwappingRepresentationOrderKeepsTotal) {
  const auto ds = tiny_dataset();
  auto ab = make_trainer<double>(tiny_options(ContrastMode::inter, {Representation::SEQ, Representation::STG}), ds);
  auto ba = make_trainer<double>(tiny_options(ContrastMode::inter, {Representation::STG, Representation::SEQ}), ds);
  const auto batch = batch_of(ds, {1, 3, 9});
  for (int s = 0; s < 3; ++s) {
    const auto r1 = inter_step(ab, std::span<const SkeletonSequence* const>(batch));
    const auto r2 = inter_step(ba, std::span<const SkeletonSequence* const>(batch));
    EXPECT_NEAR(r1.total, r2.total, 1e-12);
    EXPECT_NEAR(r1.term("SEQ"), r2.term("SEQ"), 1e-12);
  }
}

TEST(Pretrain, LossTrendsDownwardOverFiftySteps) {
  const auto ds = tiny_dataset(16, 24);
  auto opts = tiny_options(ContrastMode::intra, {Representation::SEQ});
  opts.queue_size = 32;
  opts.augmentation.output_length = 16;
  auto t = Trainer<float>::create(opts, tiny_configs(), GraphTopology::build(ds.topology));
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  PretrainSchedule schedule;
  schedule.epochs = 10;
  schedule.batch_size = 8;
  const auto result = pretrain(t, ds, all, schedule);
  ASSERT_GE(result.log.size(), 50u);
  std::vector<double> first, last;
  for (std::size_t i = 0; i < 10; ++i) first.push_back(result.log[i].total);
  for (std::size_t i = 40; i < 50; ++i) last.push_back(result.log[i].total);
  EXPECT_LT(median(last), median(first));
}

TEST(Pretrain, ResumeContinuesBitIdentically) {
  const auto ds = tiny_dataset(6, 16);
  const auto opts = tiny_options(ContrastMode::inter, {Representation::SEQ, Representation::STG});
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto graph = GraphTopology::build(ds.topology);

  const auto full_dir = fresh_dir("skelcon_resume_full");
  auto full = Trainer<float>::create(opts, tiny_configs(), graph);
  PretrainSchedule s;
  s.epochs = 4;
  s.batch_size = 4;
  s.checkpoint_every = 2;
  s.output_dir = full_dir.string();
  pretrain(full, ds, idx, s);

  const auto part_dir = fresh_dir("skelcon_resume_part");
  auto part = Trainer<float>::create(opts, tiny_configs(), graph);
  s.output_dir = part_dir.string();
  s.epochs = 3;  // runs past the epoch-2 checkpoint, as if killed mid-way
  pretrain(part, ds, idx, s);
  std::ofstream(part_dir / "checkpoints" / "LATEST", std::ios::trunc) << "epoch_0002\n";
  auto resumed = Trainer<float>::create(opts, tiny_configs(), graph);
  s.epochs = 4;
  s.resume = true;
  pretrain(resumed, ds, idx, s);

  EXPECT_EQ(lines(full_dir / "loss_log.jsonl"), lines(part_dir / "loss_log.jsonl"));
  EXPECT_EQ(resumed.step, full.step);
  for (std::size_t b = 0; b < full.branches().size(); ++b) {
    EXPECT_EQ(resumed.branches()[b].pair.query.params.values(), full.branches()[b].pair.query.params.values());
    EXPECT_EQ(resumed.branches()[b].pair.key.params.values(), full.branches()[b].pair.key.params.values());
    EXPECT_EQ(resumed.branches()[b].queue.ordered(), full.branches()[b].queue.ordered());
  }
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST(Pretrain, CheckpointRoundTripRestoresQueryEncoder) {
  const auto ds = tiny_dataset();
  auto t = make_trainer<float>(tiny_options(ContrastMode::intra, {Representation::STG}), ds);
  const auto batch = batch_of(ds, {0, 1});
  intra_step(t, std::span<const SkeletonSequence* const>(batch));
  const auto dir = fresh_dir("skelcon_ckpt_rt");
  save_trainer(dir.string(), t);
  const auto enc = load_query_encoder<float>(dir.string(), Representation::STG);
  EXPECT_EQ(enc.params.values(), t.branches()[0].pair.query.params.values());
  EXPECT_THROW(load_query_encoder<float>(dir.string(), Representation::IMG), Error);
  fs::remove_all(dir);
}
