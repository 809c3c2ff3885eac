#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "skelcon/downstream.hpp"

using namespace skelcon;

namespace {

FeatureSet random_features(Rng& rng, std::size_t rows, std::size_t dim, int classes) {
  FeatureSet f;
  f.dim = dim;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t d = 0; d < dim; ++d) f.values.push_back(rng.normal());
    f.labels.push_back(static_cast<int>(i % classes));
    f.ids.push_back("s" + std::to_string(i));
  }
  return f;
}

// Two classes on either side of a random hyperplane with margin >= 0.5.
std::pair<FeatureSet, FeatureSet> separable(std::uint64_t seed, std::size_t dim) {
  Rng rng(seed);
  std::vector<double> w(dim);
  for (auto& x : w) x = rng.normal();
  double n = 0;
  for (double x : w) n += x * x;
  for (auto& x : w) x /= std::sqrt(n);
  FeatureSet a, b;
  a.dim = b.dim = dim;
  for (int i = 0; i < 160; ++i) {
    std::vector<double> x(dim);
    for (auto& v : x) v = rng.normal();
    double s = 0;
    for (std::size_t d = 0; d < dim; ++d) s += x[d] * w[d];
    if (std::abs(s) < 0.5) {
      --i;
      continue;
    }
    auto& f = i < 100 ? a : b;
    f.values.insert(f.values.end(), x.begin(), x.end());
    f.labels.push_back(s > 0);
    f.ids.push_back(std::to_string(i));
  }
  return {a, b};
}

Dataset small_dataset() {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.samples_per_class = 10;
  spec.frames = 16;
  spec.joints = 8;
  spec.translation = 0.2;
  return generate_synthetic(spec);
}

}  // namespace

TEST(Metrics, AccuracyIsExactRatioAndPerClass) {
  const std::vector<int> pred{0, 1, 1, 2, 2, 0, 1};
  const std::vector<int> truth{0, 1, 2, 2, 2, 1, 1};
  const auto m = score_predictions(pred, truth, 4);
  EXPECT_EQ(m.correct, 5u);
  EXPECT_EQ(m.total, 7u);
  EXPECT_EQ(m.accuracy, 5.0 / 7.0);
  EXPECT_EQ(std::lround(m.accuracy * m.total), 5);
  EXPECT_DOUBLE_EQ(m.per_class[1], 2.0 / 3.0);
  EXPECT_TRUE(std::isnan(m.per_class[3]));
}

TEST(Probe, SeparableTwoClassReachesPerfectAccuracy) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto [train, test] = separable(seed, 6);
    ProbeSchedule s;
    s.seed = seed;
    EXPECT_EQ(linear_probe(train, test, s, 2).accuracy, 1.0);
  }
}

TEST(Probe, PermutedLabelsStayNearChance) {
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto train = random_features(rng, 300, 8, 4);
    auto test = random_features(rng, 300, 8, 4);
    rng.shuffle(std::span(train.labels));
    ProbeSchedule s;
    s.seed = seed;
    mean += linear_probe(train, test, s, 4).accuracy / 5;
  }
  EXPECT_NEAR(mean, 0.25, 0.05);
}

TEST(Probe, SingleClassTrainingIsDegenerate) {
  Rng rng(1);
  auto f = random_features(rng, 10, 3, 1);
  EXPECT_THROW(linear_probe(f, f, ProbeSchedule{}, 2), DegenerateError);
}

TEST(Probe, EncoderParametersUntouched) {
  const auto ds = small_dataset();
  const auto graph = GraphTopology::build(ds.topology);
  const auto enc = init_encoder<float>(EncoderConfig::desk(Representation::SEQ, ds.joints), 4);
  const auto before = enc.params.values();
  const auto split = make_split(ds, {SplitProtocol::random, 0.3, 0, {}});
  const auto tr = extract_features<float>(enc, ds, split.train, 16, graph);
  const auto te = extract_features<float>(enc, ds, split.test, 16, graph);
  linear_probe(tr, te, ProbeSchedule{}, ds.num_classes);
  EXPECT_EQ(enc.params.values(), before);
  EXPECT_EQ(tr.rows(), split.train.size());
  EXPECT_EQ(tr.dim, 64u);
  const auto again = extract_features<float>(enc, ds, split.train, 16, graph);
  EXPECT_EQ(again.values, tr.values);
}

TEST(Probe, CombinedFeaturesConcatenateAndStayCompetitive) {
  const auto ds = small_dataset();
  const auto graph = GraphTopology::build(ds.topology);
  const auto seq = init_encoder<float>(EncoderConfig::desk(Representation::SEQ, ds.joints), 1);
  const auto img = init_encoder<float>(EncoderConfig::desk(Representation::IMG, ds.joints), 2);
  double single_a = 0, single_b = 0, combined = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto split = make_split(ds, {SplitProtocol::random, 0.3, seed, {}});
    ProbeSchedule s;
    s.seed = seed;
    const auto ta = extract_features<float>(seq, ds, split.train, 16, graph);
    const auto tb = extract_features<float>(img, ds, split.train, 16, graph);
    EXPECT_EQ(concat_features(ta, tb).dim, ta.dim + tb.dim);
    single_a += linear_probe(ta, extract_features<float>(seq, ds, split.test, 16, graph), s, 4).accuracy / 5;
    single_b += linear_probe(tb, extract_features<float>(img, ds, split.test, 16, graph), s, 4).accuracy / 5;
    combined += combined_probe<float>(seq, img, ds, split.train, split.test, 16, s, graph).accuracy / 5;
  }
  EXPECT_GE(combined, std::max(single_a, single_b) - 0.05);
}

TEST(Retrieval, IdenticalQueryReturnsGalleryLabel) {
  Rng rng(3);
  const auto g = random_features(rng, 20, 5, 7);
  FeatureSet q;
  q.dim = 5;
  for (std::size_t i : {4u, 11u}) {
    auto r = g.row(i);
    q.values.insert(q.values.end(), r.begin(), r.end());
    q.labels.push_back(g.labels[i]);
    q.ids.push_back("q");
  }
  const auto res = knn_retrieve(RetrievalIndex(g), q);
  EXPECT_EQ(res.predicted[0], g.labels[4]);
  EXPECT_EQ(res.predicted[1], g.labels[11]);
  EXPECT_EQ(res.metrics.accuracy, 1.0);
}

class RetrievalOracle : public ::testing::TestWithParam<int> {};

TEST_P(RetrievalOracle, EqualsBruteForceCosineArgmax) {
  Rng rng(GetParam());
  const std::size_t dim = 2 + GetParam() % 6;
  auto gallery = random_features(rng, 30, dim, 5);
  // A duplicated row creates an exact cosine tie.
  for (std::size_t d = 0; d < dim; ++d) gallery.values[7 * dim + d] = gallery.values[2 * dim + d];
  const auto queries = random_features(rng, 25, dim, 5);
  const RetrievalIndex index(gallery);
  const auto got = index.nearest(queries);
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    long double best = -2;
    std::size_t arg = 0;
    for (std::size_t g = 0; g < gallery.rows(); ++g) {
      long double dot = 0, nq = 0, ng = 0;
      for (std::size_t d = 0; d < dim; ++d) {
        dot += static_cast<long double>(queries.row(i)[d]) * gallery.row(g)[d];
        nq += static_cast<long double>(queries.row(i)[d]) * queries.row(i)[d];
        ng += static_cast<long double>(gallery.row(g)[d]) * gallery.row(g)[d];
      }
      const long double cos = dot / std::sqrt(nq * ng);
      if (cos > best + 1e-15L) best = cos, arg = g;
    }
    EXPECT_EQ(got[i], arg);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RetrievalOracle, ::testing::Range(0, 30));

TEST(Retrieval, ZeroNormFeatureNamesSample) {
  Rng rng(2);
  auto g = random_features(rng, 4, 3, 2);
  std::fill(g.values.begin() + 3, g.values.begin() + 6, 0.0);
  try {
    RetrievalIndex index(g);
    FAIL() << "expected DegenerateError";
  } catch (const DegenerateError& e) {
    EXPECT_NE(std::string(e.what()).find("s1"), std::string::npos);
  }
}

class PcaOracle : public ::testing::TestWithParam<int> {};

TEST_P(PcaOracle, TopTwoComponentsMatchDenseEigensolver) {
  Rng rng(GetParam());
  const std::size_t N = 60, D = 4 + GetParam() % 8;
  FeatureSet f;
  f.dim = D;
  // Anisotropic cloud so the leading eigenvalues are well separated.
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t d = 0; d < D; ++d) f.values.push_back(rng.normal() * (4.0 / (1 + d)) + 0.3 * d);
    f.labels.push_back(0);
    f.ids.push_back(std::to_string(i));
  }
  const auto p = pca_top2(f);
  Eigen::MatrixXd X(N, D);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) X(i, d) = f.row(i)[d];
  const Eigen::MatrixXd C = X.rowwise() - X.colwise().mean();
  const Eigen::MatrixXd cov = C.transpose() * C / static_cast<double>(N - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  for (int k = 0; k < 2; ++k) {
    const Eigen::VectorXd ref = es.eigenvectors().col(D - 1 - k);
    double dot = 0;
    for (std::size_t d = 0; d < D; ++d) dot += ref(d) * p.components[k][d];
    EXPECT_GE(std::abs(dot), 0.999) << "component " << k;
    EXPECT_NEAR(p.variance[k], es.eigenvalues()(D - 1 - k), 1e-6 * es.eigenvalues()(D - 1));
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PcaOracle, ::testing::Range(0, 10));

TEST(Export, RecordsPassThroughAndPcaColumns) {
  Rng rng(5);
  const auto f = random_features(rng, 12, 4, 3);
  const auto dir = std::filesystem::temp_directory_path();
  const auto plain = (dir / "skelcon_emb_plain.jsonl").string();
  const auto pca = (dir / "skelcon_emb_pca.jsonl").string();
  export_embeddings(plain, f, Projector::none);
  export_embeddings(pca, f, Projector::pca2d);
  const auto back = read_embeddings(plain);
  EXPECT_EQ(back.rows(), 12u);
  EXPECT_EQ(back.values, f.values);
  EXPECT_EQ(back.labels, f.labels);
  std::ifstream is(pca);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(nlohmann::json::parse(line).at("pca").size(), 2u);
  EXPECT_THROW(export_embeddings("/nonexistent_dir/x.jsonl", f, Projector::none), IoError);
  std::filesystem::remove(plain);
  std::filesystem::remove(pca);
}

TEST(Subset, StratifiedDeterministicAndFallback) {
  const auto ds = small_dataset();
  const auto pool = all_indices(ds);
  const auto a = select_labeled_subset(ds, pool, 0.2, 3);
  const auto b = select_labeled_subset(ds, pool, 0.2, 3);
  const auto c = select_labeled_subset(ds, pool, 0.2, 4);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_NE(a.indices, c.indices);
  EXPECT_TRUE(a.stratified);
  std::vector<int> per(4, 0);
  for (auto i : a.indices) ++per[*ds.samples[i].label];
  for (int n : per) EXPECT_EQ(n, 2);
  const auto tiny = select_labeled_subset(ds, pool, 0.02, 3);
  EXPECT_FALSE(tiny.stratified);
  EXPECT_FALSE(tiny.warning.empty());
  EXPECT_EQ(tiny.indices.size(), 1u);
  EXPECT_THROW(select_labeled_subset(ds, pool, 0.0, 3), ArgumentError);
}

TEST(Finetune, BothArmsReportAndPretrainedIsRequired) {
  const auto ds = small_dataset();
  const auto graph = GraphTopology::build(ds.topology);
  const auto split = make_split(ds, {SplitProtocol::random, 0.3, 0, {}});
  auto cfg = EncoderConfig::desk(Representation::SEQ, ds.joints);
  cfg.hidden = 8;
  cfg.feature_dim = 16;
  FinetuneSchedule s;
  s.epochs = 2;
  s.crop_length = 12;
  s.seeds = {0, 1};
  const std::optional<EncoderState<float>> pre = init_encoder<float>(cfg, 9);
  const auto semi = finetune<float>(pre, cfg, ds, split.train, ds, split.test, 1.0, FinetuneMode::semi_supervised, s, graph);
  const auto sup = finetune<float>(std::nullopt, cfg, ds, split.train, ds, split.test, 1.0,
                                   FinetuneMode::supervised_only, s, graph);
  EXPECT_EQ(semi.per_seed.size(), 2u);
  EXPECT_EQ(sup.per_seed.size(), 2u);
  for (const auto& r : {semi, sup})
    for (const auto& m : r.per_seed) EXPECT_EQ(m.total, split.test.size());
  const auto again = finetune<float>(pre, cfg, ds, split.train, ds, split.test, 1.0, FinetuneMode::semi_supervised, s, graph);
  EXPECT_EQ(again.mean, semi.mean);
  EXPECT_THROW(finetune<float>(std::nullopt, cfg, ds, split.train, ds, split.test, 1.0, FinetuneMode::transfer, s, graph),
               PreconditionError);
}
