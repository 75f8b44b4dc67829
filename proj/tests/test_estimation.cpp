#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "feedlab/estimation.hpp"
#include "feedlab/simulator.hpp"
#include "oracles.hpp"

using namespace feedlab;
using namespace feedlab::est;

namespace {

// Builds a dataset from per-snapshot lists of (publisher, post) in position order.
SnapshotDataset make(const std::string& user,
                     const std::vector<std::vector<std::pair<std::string, std::string>>>& snaps) {
  SnapshotDataset d;
  std::uint64_t id = 0;
  for (const auto& s : snaps) {
    ++id;
    if (s.empty()) d.records.push_back({user, id, 0, "", ""});
    int pos = 0;
    for (const auto& [pub, post] : s) d.records.push_back({user, id, ++pos, pub, post});
  }
  return d;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected feedlab::Error";
  return ErrorKind::parse;
}

}  // namespace

TEST(MeasuredMetrics, ConstantTopPost) {
  const auto d = make("u", {{{"a", "a1"}, {"b", "b1"}}, {{"a", "a2"}, {"b", "b1"}}, {{"a", "a2"}}});
  const auto m = measured_metrics(d, 1);
  EXPECT_DOUBLE_EQ(m.at({"u", "a"}).occupancy, 1.0);
  EXPECT_DOUBLE_EQ(m.at({"u", "a"}).visibility, 1.0);
  EXPECT_DOUBLE_EQ(m.at({"u", "b"}).occupancy, 0.0);
  EXPECT_DOUBLE_EQ(m.at({"u", "b"}).visibility, 0.0);
  const auto m2 = measured_metrics(d, 2);
  EXPECT_DOUBLE_EQ(m2.at({"u", "b"}).occupancy, 2.0 / 3.0);
}

TEST(MeasuredMetrics, AbsentPublisherIsZero) {
  const auto d = make("u", {{{"a", "a1"}}});
  const std::vector<std::string> pubs{"a", "z"};
  const auto m = measured_metrics(d, 3, pubs);
  EXPECT_EQ(m.at({"u", "z"}).occupancy, 0.0);
  EXPECT_EQ(m.at({"u", "z"}).visibility, 0.0);
}

TEST(MeasuredMetrics, EmptyDatasetIsInsufficientData) {
  EXPECT_EQ(kind_of([] { measured_metrics(SnapshotDataset{}, 1); }), ErrorKind::insufficient_data);
}

TEST(MeasuredMetrics, EmptySnapshotsCountInTheAverage) {
  const auto d = make("u", {{{"a", "a1"}}, {}, {}, {{"a", "a1"}}});
  EXPECT_DOUBLE_EQ(measured_metrics(d, 1).at({"u", "a"}).occupancy, 0.5);
}

TEST(MeasuredMetrics, ConsistencyAndMonotonicityInK) {
  std::mt19937_64 gen(4);
  std::uniform_int_distribution<int> pub(0, 5), len(0, 12);
  std::vector<std::vector<std::pair<std::string, std::string>>> snaps(200);
  for (auto& s : snaps) {
    const int n = len(gen);
    for (int i = 0; i < n; ++i) {
      const auto p = "p" + std::to_string(pub(gen));
      s.emplace_back(p, p + "#" + std::to_string(gen() % 50));
    }
  }
  const auto d = make("u", snaps);
  PairMap<PairMetrics> prev;
  for (int K = 1; K <= 14; ++K) {
    const auto m = measured_metrics(d, K);
    double total = 0;
    for (const auto& [k, v] : m) {
      total += v.occupancy;
      if (!prev.empty()) {
        EXPECT_GE(v.occupancy, prev.at(k).occupancy);
        EXPECT_GE(v.visibility, prev.at(k).visibility);
      }
    }
    EXPECT_LE(total, K + 1e-12);
    prev = m;
  }
}

TEST(EffectiveRate, UniquePostsPerSnapshot) {
  // 10 unique posts of a over 5 snapshots, some seen twice.
  std::vector<std::vector<std::pair<std::string, std::string>>> snaps(5);
  for (int i = 0; i < 10; ++i) snaps[i / 2].emplace_back("a", "a" + std::to_string(i));
  snaps[3].emplace_back("a", "a1");
  snaps[4].emplace_back("a", "a2");
  const auto d = make("u", snaps);
  const std::vector<std::string> pubs{"a", "never"};
  const auto r = effective_rate(d, "u", pubs);
  EXPECT_DOUBLE_EQ(r.at("a"), 2.0);
  EXPECT_EQ(r.at("never"), 0.0);
  const auto c = dataset_counts(d);
  EXPECT_EQ(c.snapshots.at("u"), 5u);
  EXPECT_EQ(c.unique_posts.at({"u", "a"}), 10u);
  EXPECT_EQ(c.impressions.at({"u", "a"}), 12u);
  EXPECT_EQ(kind_of([&] { effective_rate(d, "nobody"); }), ErrorKind::domain);
}

TEST(EffectiveRate, DedupIsPerUser) {
  auto d = make("u", {{{"a", "x"}}, {{"a", "x"}}});
  auto e = make("v", {{{"a", "x"}}});
  d.append(e);
  const auto r = effective_rate(d);
  EXPECT_DOUBLE_EQ(r.at({"u", "a"}), 0.5);
  EXPECT_DOUBLE_EQ(r.at({"v", "a"}), 1.0);
}

TEST(EffectiveRate, UniqueNeverExceedsImpressions) {
  sim::SimConfig cfg;
  cfg.catalog = PublisherCatalog({{"a", 1.0}, {"b", 2.0}});
  cfg.profile.user_id = "u";
  cfg.feed = {3, {{"0", 2.5}}};
  cfg.horizon = 300;
  cfg.replications = 2;
  const auto d = sim::sample_snapshots(cfg);
  const auto c = dataset_counts(d);
  for (const auto& [k, q] : c.unique_posts) EXPECT_LE(q, c.impressions.at(k));
}

TEST(TwoClassTtl, ArithmeticContract) {
  // One liked publisher, 4 posts each seen in 3 snapshots.
  std::vector<std::vector<std::pair<std::string, std::string>>> snaps(6);
  for (int p = 0; p < 4; ++p)
    for (int s = 0; s < 3; ++s) snaps[p + s].emplace_back("a", "a" + std::to_string(p));
  const auto d = make("u", snaps);
  const std::vector<UserProfile> profiles{{"u", {{"a", true}}, {}, {}}};
  const auto t = two_class_ttl(d, {{"a", 4}}, profiles);
  ASSERT_TRUE(t.ttl1.has_value());
  EXPECT_DOUBLE_EQ(*t.ttl1, 3.0);
  EXPECT_FALSE(t.ttl0.has_value());
}

TEST(TwoClassTtl, ImpressionsWithoutCreationsAreInconsistent) {
  const auto d = make("u", {{{"a", "a1"}}});
  const std::vector<UserProfile> profiles{{"u", {}, {}, {}}};
  EXPECT_EQ(kind_of([&] { two_class_ttl(d, {{"a", 0}}, profiles); }),
            ErrorKind::data_inconsistency);
}

TEST(TwoClassTtl, MissingProfileIsDomainError) {
  const auto d = make("u", {{{"a", "a1"}}});
  EXPECT_EQ(kind_of([&] { two_class_ttl(d, {{"a", 1}}, {}); }), ErrorKind::domain);
}

TEST(TwoClassTtl, KRestrictionCountsTopPositionsOnly) {
  const auto d = make("u", {{{"b", "b1"}, {"a", "a1"}}, {{"b", "b2"}, {"a", "a1"}}});
  const std::vector<UserProfile> profiles{{"u", {{"a", true}}, {}, {}}};
  const auto full = two_class_ttl(d, {{"a", 1}, {"b", 2}}, profiles);
  const auto top1 = two_class_ttl(d, {{"a", 1}, {"b", 2}}, profiles, 1);
  EXPECT_DOUBLE_EQ(*full.ttl1, 2.0);
  EXPECT_DOUBLE_EQ(*top1.ttl1, 0.0);
  EXPECT_DOUBLE_EQ(*top1.ttl0, 1.0);
}

TEST(TwoClassTtl, RecoversSimulatedTimers) {
  sim::SimConfig cfg;
  cfg.catalog = PublisherCatalog({{"a", 0.5}, {"b", 0.5}});
  cfg.profile = {"u", {{"a", true}}, {}, {}};
  cfg.feed = {1000, {{"1", 3.0}, {"0", 1.0}}};
  cfg.horizon = 25000;
  cfg.warmup = 0.2;
  cfg.replications = 1;
  const auto d = sim::sample_snapshots(cfg);
  const std::vector<UserProfile> profiles{cfg.profile};
  const auto t = two_class_ttl(d, d.creation_counts, profiles);
  // Each post is seen in exactly T snapshots except at the window edges.
  EXPECT_NEAR(*t.ttl1, 3.0, 0.01);
  EXPECT_NEAR(*t.ttl0, 1.0, 0.01);
}

TEST(MulticlassModel, MatchesFilteredFifoFormula) {
  PairMap<double> rates{{{"u", "a"}, 1.0}, {{"u", "b"}, 3.0}, {{"v", "a"}, 2.0}};
  const auto m = multiclass_model(rates, 4, VisibilityModel::finite_fifo);
  EXPECT_DOUBLE_EQ(m.at({"u", "a"}).occupancy, 1.0);
  EXPECT_DOUBLE_EQ(m.at({"u", "b"}).occupancy, 3.0);
  EXPECT_DOUBLE_EQ(m.at({"v", "a"}).occupancy, 4.0);
  EXPECT_DOUBLE_EQ(m.at({"u", "a"}).visibility, 1 - std::pow(0.75, 4));
}

TEST(Ols, PerfectFit) {
  const std::vector<double> x{0.5, 1.0, 2.0, 3.5, 5.0};
  const auto r = ols_validate(x, x);
  EXPECT_NEAR(r.beta1, 1.0, 1e-14);
  EXPECT_NEAR(r.beta0, 0.0, 1e-14);
  EXPECT_DOUBLE_EQ(r.r_squared, 1.0);
  EXPECT_NEAR(r.rmse, 0.0, 1e-15);
  EXPECT_EQ(r.n, 5u);
}

TEST(Ols, AffineRecovery) {
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> U(-10, 10);
  for (int trial = 0; trial < 50; ++trial) {
    const double b0 = U(gen), b1 = U(gen);
    std::vector<double> x(3 + trial), y;
    for (double& v : x) v = U(gen);
    for (double v : x) y.push_back(b1 * v + b0);
    const auto r = ols_validate(x, y);
    EXPECT_NEAR(r.beta1, b1, 1e-10);
    EXPECT_NEAR(r.beta0, b0, 1e-10);
  }
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{3, 5, 7, 9};
  const auto r = ols_validate(x, y);
  EXPECT_NEAR(r.beta1, 2, 1e-12);
  EXPECT_NEAR(r.beta0, 1, 1e-12);
}

TEST(Ols, NoisyRecoveryAndPValue) {
  std::mt19937_64 gen(180);
  std::uniform_real_distribution<double> U(0, 2);
  std::normal_distribution<double> noise(0, 0.01);
  std::vector<double> x(180), y;
  for (double& v : x) v = U(gen);
  for (double v : x) y.push_back(v + noise(gen));
  const auto r = ols_validate(x, y);
  EXPECT_GE(r.beta1, 0.98);
  EXPECT_LE(r.beta1, 1.02);
  EXPECT_LT(r.p_value_beta1, 1e-10);
  EXPECT_GE(r.r_squared, 0.0);
  EXPECT_LE(r.r_squared, 1.0);
  const auto [b0, b1] = oracle::ols(x, y);
  EXPECT_NEAR(r.beta0, b0, 1e-12);
  EXPECT_NEAR(r.beta1, b1, 1e-12);
}

TEST(Ols, MatchesReferenceStatistics) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> N(0, 1);
  for (int n : {5, 12, 40}) {
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = N(gen);
      y[i] = 0.3 * x[i] + N(gen);
    }
    const auto r = ols_validate(x, y);
    double ss_res = 0, ss_tot = 0, my = 0;
    for (double v : y) my += v / n;
    for (int i = 0; i < n; ++i) {
      const double e = y[i] - r.beta0 - r.beta1 * x[i];
      ss_res += e * e;
      ss_tot += (y[i] - my) * (y[i] - my);
    }
    EXPECT_NEAR(r.rmse, std::sqrt(ss_res / n), 1e-12);
    EXPECT_NEAR(r.r_squared, 1 - ss_res / ss_tot, 1e-12);
    EXPECT_NEAR(r.p_value_beta1, oracle::t_two_sided(r.t_statistic, n - 2), 1e-8);
    boost::math::students_t dist(n - 2);
    EXPECT_NEAR(r.p_value_beta1, 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_statistic))),
                1e-12);
    EXPECT_GT(r.p_value_beta1, 0.0);
    EXPECT_LE(r.p_value_beta1, 1.0);
  }
}

TEST(Ols, ExtremePValuesStayAccurate) {
  // Far in the tail where a normal approximation is off by orders of magnitude.
  const double p = student_t_two_sided_p(12.0, 10.0);
  boost::math::students_t dist(10.0);
  EXPECT_NEAR(p / (2 * boost::math::cdf(boost::math::complement(dist, 12.0))), 1.0, 1e-10);
  EXPECT_GT(p, 1e-8);
  EXPECT_LT(p, 1e-6);
}

TEST(Ols, Preconditions) {
  const std::vector<double> c{2, 2, 2, 2}, y{1, 2, 3, 4}, two{1, 2};
  EXPECT_EQ(kind_of([&] { ols_validate(c, y); }), ErrorKind::degenerate_input);
  EXPECT_EQ(kind_of([&] { ols_validate(two, two); }), ErrorKind::insufficient_data);
  EXPECT_EQ(kind_of([&] { ols_validate(y, two); }), ErrorKind::domain);
}

TEST(SnapshotDataset, ValidateRejectsBadPositions) {
  SnapshotDataset dup;
  dup.records = {{"u", 1, 1, "a", "a1"}, {"u", 1, 1, "b", "b1"}};
  EXPECT_THROW(dup.validate(), Error);
  SnapshotDataset gap;
  gap.records = {{"u", 1, 2, "a", "a1"}};
  EXPECT_THROW(gap.validate(), Error);
  SnapshotDataset ok;
  ok.records = {{"u", 1, 2, "a", "a1"}, {"u", 1, 1, "b", "b1"}, {"u", 2, 0, "", ""}};
  EXPECT_NO_THROW(ok.validate());
}
