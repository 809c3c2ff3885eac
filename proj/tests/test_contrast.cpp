#include <gtest/gtest.h>

#include <cmath>
#include <deque>

#include "skelcon/contrast.hpp"

using namespace skelcon;

namespace {

std::vector<double> unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

std::vector<double> basis(std::size_t d, std::size_t i) {
  std::vector<double> v(d, 0.0);
  v[i] = 1.0;
  return v;
}

// Direct long-double evaluation of the softmax cross entropy, no shifting.
long double naive_loss(const std::vector<double>& q, const std::vector<double>& k,
                       const std::vector<std::vector<double>>& negs, double tau) {
  auto dot = [&](const std::vector<double>& a) {
    long double s = 0;
    for (std::size_t i = 0; i < q.size(); ++i) s += static_cast<long double>(q[i]) * a[i];
    return s;
  };
  const long double pos = std::exp(dot(k) / tau);
  long double den = pos;
  for (const auto& n : negs) den += std::exp(dot(n) / tau);
  return -std::log(pos / den);
}

NegativeQueue<double> queue_of(const std::vector<std::vector<double>>& negs) {
  NegativeQueue<double> q(negs.size(), negs.front().size());
  q.push(negs);
  return q;
}

}  // namespace

TEST(InfoNce, EqualLogitsGiveLogTwo) {
  const auto zq = basis(4, 0), zk = basis(4, 1);
  const auto r = info_nce<double>(zq, zk, queue_of({basis(4, 2)}), 0.07);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
}

TEST(InfoNce, OrthogonalNegativeUnitTemperature) {
  const auto z = basis(3, 0);
  const auto r = info_nce<double>(z, z, queue_of({basis(3, 1)}), 1.0);
  EXPECT_NEAR(r.loss, std::log(1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(r.loss, 0.3133, 1e-4);
}

TEST(InfoNce, DefaultTemperature) { EXPECT_DOUBLE_EQ(TrainerOptions{}.tau, 0.07); }

TEST(InfoNce, PreconditionsAndContracts) {
  const auto z = basis(3, 0);
  NegativeQueue<double> empty(4, 3);
  EXPECT_THROW(info_nce<double>(z, z, empty, 0.07), PreconditionError);
  EXPECT_THROW(info_nce<double>(z, z, queue_of({basis(3, 1)}), 0.0), PreconditionError);
  std::vector<double> off{1.01, 0, 0};
  EXPECT_THROW(info_nce<double>(off, z, queue_of({basis(3, 1)}), 0.07), ContractError);
  EXPECT_THROW(info_nce<double>(z, off, queue_of({basis(3, 1)}), 0.07), ContractError);
}

class InfoNceRandom : public ::testing::TestWithParam<int> {};

TEST_P(InfoNceRandom, MatchesNaiveOracleBoundAndGradient) {
  Rng rng(GetParam());
  const std::size_t D = 3 + GetParam() % 8, K = 1 + GetParam() * 3;
  const double tau = GetParam() % 2 ? 0.07 : 0.5;
  auto zq = unit(rng, D);
  const auto zk = unit(rng, D);
  std::vector<std::vector<double>> negs;
  for (std::size_t i = 0; i < K; ++i) negs.push_back(unit(rng, D));
  const auto queue = queue_of(negs);
  const auto r = info_nce<double>(zq, zk, queue, tau);
  EXPECT_NEAR(r.loss, static_cast<double>(naive_loss(zq, zk, negs, tau)), 1e-10);
  EXPECT_GT(r.loss, 0.0);
  EXPECT_LE(r.loss, std::log(1.0 + K * std::exp(2.0 / tau)));
  EXPECT_GE(r.positive_logit, -1.0 / tau - 1e-12);
  EXPECT_LE(r.positive_logit, 1.0 / tau + 1e-12);

  // Closed-form gradient: (sum_n p_n z_n + (p_0 - 1) z_k) / tau; queue rows enter
  // only through the softmax weights.
  std::vector<long double> logits{0};
  for (std::size_t i = 0; i < D; ++i) logits[0] += zq[i] * zk[i];
  for (const auto& n : negs) {
    long double s = 0;
    for (std::size_t i = 0; i < D; ++i) s += zq[i] * n[i];
    logits.push_back(s);
  }
  long double den = 0;
  for (auto& l : logits) den += std::exp(l / tau);
  for (std::size_t i = 0; i < D; ++i) {
    long double g = (std::exp(logits[0] / tau) / den - 1) * zk[i];
    for (std::size_t n = 0; n < K; ++n) g += std::exp(logits[n + 1] / tau) / den * negs[n][i];
    EXPECT_NEAR(r.grad[i], static_cast<double>(g / tau), 1e-9);
  }

  // Central differences on the unconstrained loss.
  const double h = 1e-7;
  for (std::size_t i = 0; i < D; ++i) {
    const double keep = zq[i];
    zq[i] = keep + h;
    const double up = static_cast<double>(naive_loss(zq, zk, negs, tau));
    zq[i] = keep - h;
    const double down = static_cast<double>(naive_loss(zq, zk, negs, tau));
    zq[i] = keep;
    EXPECT_NEAR(r.grad[i], (up - down) / (2 * h), 1e-5 * std::max(1.0, std::abs(r.grad[i])));
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, InfoNceRandom, ::testing::Range(0, 25));

TEST(InfoNce, LargeQueueAtDefaultTemperatureStaysFinite) {
  Rng rng(8);
  const std::size_t D = 128, K = 16384;
  NegativeQueue<float> queue(K, D);
  std::vector<float> row(D);
  for (std::size_t n = 0; n < K; ++n) {
    const auto u = unit(rng, D);
    std::copy(u.begin(), u.end(), row.begin());
    queue.push_one(row);
  }
  const auto qd = unit(rng, D);
  std::vector<float> zq(qd.begin(), qd.end());
  const auto r = info_nce<float>(zq, zq, queue, 0.07);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_TRUE(nn::all_finite(std::span<const float>(r.grad)));
  // Positive logit 1/tau dominates; loss is small but nonnegative.
  EXPECT_GT(r.loss, 0.0);
  EXPECT_LT(r.loss, std::log(2.0));
}

TEST(Queue, FifoEvictsOldestInOrder) {
  NegativeQueue<double> q(4, 2);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 6; ++i) rows.push_back({std::cos(i * 0.3), std::sin(i * 0.3)});
  q.push(std::span(rows).subspan(0, 3));
  EXPECT_EQ(q.size(), 3u);
  q.push(std::span(rows).subspan(3, 3));
  EXPECT_EQ(q.size(), 4u);
  const auto got = q.ordered();
  for (int i = 0; i < 4; ++i) EXPECT_EQ(got[i], rows[i + 2]);
}

TEST(Queue, RejectsOversizeBatchWrongDimAndNonUnit) {
  NegativeQueue<double> q(2, 2);
  std::vector<std::vector<double>> three(3, {1.0, 0.0});
  EXPECT_THROW(q.push(three), ArgumentError);
  EXPECT_THROW(q.push_one(std::vector<double>{1.0, 0.0, 0.0}), ContractError);
  EXPECT_THROW(q.push_one(std::vector<double>{0.5, 0.0}), ContractError);
  EXPECT_THROW(NegativeQueue<double>(0, 2), ArgumentError);
}

TEST(Queue, PaperScaleDefault) { EXPECT_EQ(TrainerOptions{}.queue_size, 16384u); }

class QueueModel : public ::testing::TestWithParam<int> {};

TEST_P(QueueModel, MatchesDequeReference) {
  Rng rng(GetParam());
  const std::size_t K = 1 + rng.uniform_int(0, 9);
  NegativeQueue<double> q(K, 3);
  std::deque<std::vector<double>> ref;
  for (int round = 0; round < 30; ++round) {
    const std::size_t n = rng.uniform_int(0, K);
    std::vector<std::vector<double>> batch;
    for (std::size_t i = 0; i < n; ++i) batch.push_back(unit(rng, 3));
    q.push(batch);
    for (auto& b : batch) {
      ref.push_back(b);
      if (ref.size() > K) ref.pop_front();
    }
    ASSERT_EQ(q.size(), ref.size());
    const auto got = q.ordered();
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(got[i], ref[i]);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, QueueModel, ::testing::Range(0, 50));

TEST(Momentum, FormulaEdgesAndExample) {
  std::vector<double> key{0.0, 2.0}, query{1.0, -1.0};
  auto k = key;
  momentum_update<double>(k, query, 1.0);
  EXPECT_EQ(k, key);
  momentum_update<double>(k, query, 0.0);
  EXPECT_EQ(k, query);
  std::vector<double> zero{0.0}, one{1.0};
  momentum_update<double>(zero, one, 0.999);
  EXPECT_NEAR(zero[0], 0.001, 1e-15);
  std::vector<double> shorter{1.0};
  EXPECT_THROW(momentum_update<double>(k, shorter, 0.5), ContractError);
}

TEST(Momentum, PairStartsEqualAndUpdatesElementwise) {
  auto pair = make_momentum_pair<double>(EncoderConfig::desk(Representation::SEQ, 5), 3, 0.9);
  EXPECT_EQ(pair.key.params.values(), pair.query.params.values());
  for (auto& v : pair.query.params.values()) v += 1.0;
  const auto before = pair.key.params.values();
  pair.update();
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(pair.key.params.values()[i], 0.9 * before[i] + (1.0 - 0.9) * pair.query.params.values()[i]);
  EXPECT_THROW(make_momentum_pair<double>(EncoderConfig::desk(Representation::SEQ, 5), 3, 1.5), ArgumentError);
}

TEST(Terms, ModesExpandToOrderedCrossTerms) {
  TrainerOptions o;
  EXPECT_EQ(terms_for(o).size(), 1u);
  o.mode = ContrastMode::inter;
  o.representations = {Representation::SEQ, Representation::STG};
  const auto inter = terms_for(o);
  ASSERT_EQ(inter.size(), 2u);
  EXPECT_EQ(inter[0].query_branch, 0u);
  EXPECT_EQ(inter[0].key_branch, 1u);
  EXPECT_EQ(inter[1].query_branch, 1u);
  EXPECT_EQ(inter[1].key_branch, 0u);
  o.mode = ContrastMode::inter3;
  o.representations = {Representation::IMG, Representation::SEQ, Representation::STG};
  const auto six = terms_for(o);
  EXPECT_EQ(six.size(), 6u);
  for (const auto& t : six) EXPECT_NE(t.query_branch, t.key_branch);
  o.inter3_variant = Inter3Variant::pairwise;
  double weight = 0;
  for (const auto& t : terms_for(o)) weight += t.weight;
  EXPECT_DOUBLE_EQ(weight, 6.0);
  o.representations.pop_back();
  EXPECT_THROW(terms_for(o), ArgumentError);
}
