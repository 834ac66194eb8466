#include <gtest/gtest.h>

#include <gkm/som.hpp>

#include <Eigen/Dense>

#include <random>

#include "support.hpp"

using gkm::Som;
using gkm::Vector;

namespace {

std::vector<Vector> random_points(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vector> out(n, Vector(d));
  for (auto& p : out)
    for (auto& x : p) x = u(rng);
  return out;
}

Eigen::MatrixXd random_rotation(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
}

std::vector<Vector> isometric_copy(const std::vector<Vector>& pts, std::mt19937_64& rng) {
  const std::size_t d = pts.front().size();
  const Eigen::MatrixXd r = random_rotation(d, rng);
  std::normal_distribution<double> g(0.0, 10.0);
  Eigen::VectorXd t(d);
  for (auto& v : t) v = g(rng);
  std::vector<Vector> out;
  for (const auto& p : pts) {
    const Eigen::VectorXd q = r * Eigen::Map<const Eigen::VectorXd>(p.data(), d) + t;
    out.emplace_back(q.data(), q.data() + d);
  }
  return out;
}

gkm::TrainingSchedule schedule(std::size_t epochs, double lr = 0.5, double radius = 1.5) {
  return {epochs, {lr, lr * 0.1}, {radius, 0.5}};
}

Som hand_som(std::vector<std::size_t> axes, const std::vector<Vector>& weights) {
  Som som(std::move(axes), weights.front().size(), 1);
  for (std::size_t n = 0; n < weights.size(); ++n) std::copy(weights[n].begin(), weights[n].end(), som.weights(n).begin());
  return som;
}

}  // namespace

TEST(InitSom, DeterministicAndLattice) {
  std::mt19937_64 rng(1);
  const auto data = random_points(30, 4, rng);
  EXPECT_EQ(gkm::init_som(2, {3, 4}, data, 9), gkm::init_som(2, {3, 4}, data, 9));
  const auto som = gkm::init_som(1, {3}, data, 9);
  ASSERT_EQ(som.node_count(), 3u);
  for (std::size_t n = 0; n < 3; ++n) EXPECT_EQ(som.lattice_coords(n)[0], static_cast<int>(n));
}

TEST(InitSom, SingleSampleGivesThatVectorEverywhere) {
  const std::vector<Vector> data{{0.25, -1.5, 3.0}};
  const auto som = gkm::init_som(2, {3, 3}, data, 4);
  for (std::size_t n = 0; n < som.node_count(); ++n) {
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(som.weights(n)[i], data[0][i], 1e-15);
  }
}

TEST(InitSom, WeightsAreConvexCombinations) {
  std::mt19937_64 rng(2);
  const auto data = random_points(20, 3, rng);
  const auto som = gkm::init_som(2, {4, 4}, data, 3);
  for (std::size_t n = 0; n < som.node_count(); ++n)
    for (double w : som.weights(n)) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
    }
}

TEST(InitSom, Errors) {
  EXPECT_THROW(gkm::init_som(1, {3}, std::vector<Vector>{}, 1), gkm::Error);
  EXPECT_THROW(gkm::init_som(2, {3}, std::vector<Vector>{{1.0}}, 1), gkm::Error);
}

TEST(Train, SingleVectorFixedPoint) {
  const std::vector<Vector> data{{0.3, 0.7, -0.2}};
  auto som = gkm::init_som(1, {4}, std::vector<Vector>{{0, 0, 0}, {1, 1, 1}}, 5);
  som = gkm::train(som, data, schedule(200), 1);
  const auto bmu = som.best_matching_unit(data[0]);
  EXPECT_LT(std::sqrt(gkm::squared_distance(som.weights(bmu), data[0])), 1e-3);
}

TEST(Train, TwoClustersGetDistinctBmus) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<Vector> data;
  for (int i = 0; i < 40; ++i) data.push_back({g(rng), g(rng)});
  for (int i = 0; i < 40; ++i) data.push_back({5 + g(rng), 5 + g(rng)});
  auto som = gkm::init_som(1, {10}, data, 2);
  som = gkm::train(som, data, schedule(30, 0.5, 3.0), 3);
  const auto a = som.best_matching_unit(data[0]);
  const auto b = som.best_matching_unit(data[40]);
  EXPECT_NE(a, b);
  for (int i = 0; i < 40; ++i) EXPECT_NE(som.best_matching_unit(data[i]), b);
  for (int i = 40; i < 80; ++i) EXPECT_NE(som.best_matching_unit(data[i]), a);
}

TEST(Train, ZeroEpochsOrZeroRateLeavesWeights) {
  std::mt19937_64 rng(3);
  const auto data = random_points(25, 3, rng);
  const auto som = gkm::init_som(2, {3, 3}, data, 1);
  EXPECT_EQ(gkm::train(som, data, schedule(0), 1).weight_data(), som.weight_data());
  gkm::TrainingSchedule frozen{5, {0.0, 0.0}, {1.0, 1.0}};
  EXPECT_EQ(gkm::train(som, data, frozen, 1).weight_data(), som.weight_data());
}

TEST(Train, DeterministicAndRejectsWrongWidth) {
  std::mt19937_64 rng(4);
  const auto data = random_points(25, 3, rng);
  const auto som = gkm::init_som(2, {3, 3}, data, 1);
  EXPECT_EQ(gkm::train(som, data, schedule(5), 8), gkm::train(som, data, schedule(5), 8));
  EXPECT_THROW(gkm::train(som, std::vector<Vector>{{1.0, 2.0}}, schedule(1), 1), gkm::Error);
}

TEST(Project, NodeWeightsMapToThatNode) {
  const auto som = hand_som({3, 2}, {{0, 0}, {1, 0}, {2, 0}, {0, 1}, {1, 1}, {2, 1}});
  EXPECT_EQ(gkm::project(som, Vector{2, 1}), (Vector{2, 1}));
  EXPECT_EQ(gkm::project(som, Vector{0.9, 0.1}), (Vector{1, 0}));
  EXPECT_THROW(gkm::project(som, Vector{1.0}), gkm::Error);
}

TEST(Project, TieGoesToLowestIndex) {
  const auto som = hand_som({2}, {{0.0}, {2.0}});
  EXPECT_EQ(gkm::project(som, Vector{1.0}), (Vector{0}));
}

TEST(Project, IdempotentAndDeterministic) {
  std::mt19937_64 rng(5);
  const auto data = random_points(40, 5, rng);
  const auto som = gkm::train(gkm::init_som(2, {4, 4}, data, 1), data, schedule(3), 2);
  for (const auto& x : data) EXPECT_EQ(gkm::project(som, x), gkm::project(som, x));
}

TEST(GrowNodes, OneDimensionalMidpoint) {
  const auto grown = gkm::grow_nodes(hand_som({2}, {{0.0, 4.0}, {2.0, 8.0}}));
  ASSERT_EQ(grown.axis_sizes(), (std::vector<std::size_t>{3}));
  EXPECT_EQ(Vector(grown.weights(1).begin(), grown.weights(1).end()), (Vector{1.0, 6.0}));
  EXPECT_EQ(Vector(grown.weights(2).begin(), grown.weights(2).end()), (Vector{2.0, 8.0}));
}

TEST(GrowNodes, TwoByTwoCentreIsMeanOfAll) {
  const auto grown = gkm::grow_nodes(hand_som({2, 2}, {{0.0}, {4.0}, {8.0}, {12.0}}));
  ASSERT_EQ(grown.axis_sizes(), (std::vector<std::size_t>{3, 3}));
  const std::size_t c[] = {1, 1};
  EXPECT_DOUBLE_EQ(grown.weights(grown.node_index(c))[0], 6.0);
  const std::size_t edge[] = {1, 0};
  EXPECT_DOUBLE_EQ(grown.weights(grown.node_index(edge))[0], 2.0);
}

TEST(GrowNodes, OriginalsKeepWeightsAtDoubledCoords) {
  std::mt19937_64 rng(6);
  const auto data = random_points(20, 3, rng);
  const auto som = gkm::init_som(3, {3, 2, 4}, data, 1);
  const auto grown = gkm::grow_nodes(som);
  for (std::size_t n = 0; n < som.node_count(); ++n) {
    const auto c = som.lattice_coords(n);
    std::vector<std::size_t> doubled;
    for (auto v : c) doubled.push_back(2 * static_cast<std::size_t>(v));
    const auto g = grown.weights(grown.node_index(doubled));
    EXPECT_TRUE(std::equal(g.begin(), g.end(), som.weights(n).begin()));
  }
}

TEST(GrowNodes, UniformWeightsStayUniform) {
  const auto grown = gkm::grow_nodes(hand_som({2, 3}, std::vector<Vector>(6, Vector{1.5, -2.0})));
  for (std::size_t n = 0; n < grown.node_count(); ++n) {
    EXPECT_DOUBLE_EQ(grown.weights(n)[0], 1.5);
    EXPECT_DOUBLE_EQ(grown.weights(n)[1], -2.0);
  }
}

TEST(GrowDimension, ReplicationCountAndMaxDim) {
  const auto som = hand_som({3}, {{0.0}, {1.0}, {2.0}});
  const auto grown = gkm::grow_dimension(som, 2, 5, 7);
  EXPECT_EQ(grown.axis_sizes(), (std::vector<std::size_t>{3, 2}));
  EXPECT_EQ(grown.node_count(), 6u);
  try {
    gkm::grow_dimension(som, 2, 1, 7);
    FAIL();
  } catch (const gkm::Error& e) {
    EXPECT_EQ(e.code(), "max_dim_exceeded");
  }
}

TEST(GrowDimension, WithoutJitterProjectionsAreUnchanged) {
  std::mt19937_64 rng(8);
  const auto data = random_points(50, 4, rng);
  const auto som = gkm::train(gkm::init_som(2, {4, 4}, data, 1), data, schedule(5), 2);
  const auto grown = gkm::grow_dimension(som, 3, 5, std::nullopt);
  for (const auto& x : data) {
    const auto before = gkm::project(som, x);
    const auto after = gkm::project(grown, x);
    ASSERT_EQ(after.size(), 3u);
    EXPECT_EQ(after[0], before[0]);
    EXPECT_EQ(after[1], before[1]);
    EXPECT_EQ(after[2], 0.0);
  }
}

TEST(GrowDimension, SeededJitterIsDeterministicAndSmall) {
  std::mt19937_64 rng(9);
  const auto data = random_points(30, 6, rng);
  const auto som = gkm::init_som(1, {5}, data, 1);
  const auto a = gkm::grow_dimension(som, 3, 4, 42);
  EXPECT_EQ(a, gkm::grow_dimension(som, 3, 4, 42));
  EXPECT_NE(a.weight_data(), gkm::grow_dimension(som, 3, 4, 43).weight_data());
  double mean_norm = 0.0;
  for (std::size_t n = 0; n < 5; ++n) mean_norm += std::sqrt(gkm::squared_distance(som.weights(n), Vector(6, 0.0)));
  mean_norm /= 5.0;
  for (std::size_t n = 0; n < 5; ++n) {
    EXPECT_TRUE(std::equal(a.weights(n).begin(), a.weights(n).end(), som.weights(n).begin()));
    for (std::size_t layer = 1; layer < 3; ++layer) {
      const double jitter = std::sqrt(gkm::squared_distance(a.weights(layer * 5 + n), som.weights(n)));
      EXPECT_GT(jitter, 0.0);
      EXPECT_LT(jitter, 5e-3 * mean_norm);
    }
  }
}

TEST(StabilityScore, IdenticalSetsScoreOne) {
  std::mt19937_64 rng(10);
  const auto a = random_points(20, 3, rng);
  EXPECT_DOUBLE_EQ(gkm::stability_score(a, a), 1.0);
}

TEST(StabilityScore, IsometryInvarianceAndSymmetry) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_points(30, 4, rng);
    const auto b = isometric_copy(a, rng);
    EXPECT_NEAR(gkm::stability_score(a, b), 1.0, 1e-9);
    const auto c = random_points(30, 4, rng);
    EXPECT_DOUBLE_EQ(gkm::stability_score(a, c), gkm::stability_score(c, a));
    EXPECT_NEAR(gkm::stability_score(a, c), gkm::stability_score(isometric_copy(a, rng), c), 1e-9);
  }
}

TEST(StabilityScore, ConstantDistanceRule) {
  const std::vector<Vector> same(4, Vector{1.0, 1.0});
  const std::vector<Vector> simplex{{0.0, 0.0}, {1.0, 0.0}, {0.5, std::sqrt(3.0) / 2.0}};
  std::mt19937_64 rng(1);
  const auto spread = random_points(4, 2, rng);
  EXPECT_DOUBLE_EQ(gkm::stability_score(same, same), 1.0);
  EXPECT_DOUBLE_EQ(gkm::stability_score(same, spread), 0.0);
  const std::vector<Vector> collapsed(3, Vector{0.0, 0.0});
  EXPECT_DOUBLE_EQ(gkm::stability_score(collapsed, simplex), 0.0);
}

TEST(StabilityScore, Errors) {
  const std::vector<Vector> two{{0.0}, {1.0}};
  const std::vector<Vector> three{{0.0}, {1.0}, {2.0}};
  EXPECT_THROW(gkm::stability_score(two, two), gkm::Error);
  EXPECT_THROW(gkm::stability_score(two, three), gkm::Error);
}

// Reference bound for unrelated configurations: the score of two independent
// uniform 100-point sets in 3-D stays inside (-0.3, 0.3) in at least 95% of
// 1000 trials.
TEST(StabilityScore, IndependentSetsMonteCarloBound) {
  std::mt19937_64 rng(2024);
  int inside = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_points(100, 3, rng);
    const auto b = random_points(100, 3, rng);
    if (std::abs(gkm::stability_score(a, b)) < 0.3) ++inside;
  }
  EXPECT_GE(inside, 950);
}

namespace {

std::vector<Vector> two_blobs(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<Vector> data;
  for (int i = 0; i < 60; ++i) data.push_back({g(rng), g(rng), g(rng)});
  for (int i = 0; i < 60; ++i) data.push_back({3 + g(rng), 3 + g(rng), 3 + g(rng)});
  return data;
}

gkm::SomConfig small_config() {
  gkm::SomConfig c;
  c.initial_dim = 1;
  c.nodes_per_axis = 5;
  c.epochs_per_phase = 10;
  c.neighborhood_radius = {2.0, 0.5};
  c.max_dim = 3;
  c.probe_size = 40;
  c.stability_threshold = 0.8;
  return c;
}

}  // namespace

TEST(IncrementalEvaluate, TwoClustersStabiliseImmediately) {
  const auto data = two_blobs(1);
  const auto ev = gkm::incremental_evaluate(data, small_config());
  EXPECT_EQ(ev.final_dim, 1u);
  ASSERT_EQ(ev.reports.size(), 1u);
  EXPECT_GE(ev.reports[0].mean_score, 0.8);
  EXPECT_TRUE(ev.reports[0].stabilized);
  EXPECT_EQ(ev.soms.size(), 3u);
  EXPECT_EQ(ev.reports[0].pairwise_scores.size(), 3u);
}

TEST(IncrementalEvaluate, ForcedEqualSeedsScoreOne) {
  std::mt19937_64 rng(3);
  const auto data = random_points(80, 5, rng);
  auto c = small_config();
  c.parallel_runs = 2;
  c.force_equal_seeds = true;
  c.stability_threshold = 1.0;
  const auto ev = gkm::incremental_evaluate(data, c);
  EXPECT_DOUBLE_EQ(ev.reports[0].mean_score, 1.0);
  EXPECT_EQ(ev.final_dim, c.initial_dim);
}

TEST(IncrementalEvaluate, ReproducibleAndReportsUnstabilisedCap) {
  std::mt19937_64 rng(4);
  const auto data = random_points(80, 6, rng);
  auto c = small_config();
  c.stability_threshold = 1.0;
  c.max_dim = 2;
  std::vector<double> seen;
  const auto a = gkm::incremental_evaluate(data, c, [&](const gkm::PhaseRecord& r) { seen.push_back(r.report.mean_score); });
  const auto b = gkm::incremental_evaluate(data, c);
  EXPECT_EQ(a.final_dim, b.final_dim);
  EXPECT_EQ(a.reports, b.reports);
  EXPECT_EQ(a.soms, b.soms);
  EXPECT_EQ(a.final_dim, 2u);
  EXPECT_FALSE(a.reports.back().stabilized);
  ASSERT_EQ(seen.size(), a.reports.size());
  for (const auto& r : a.reports)
    for (const auto& p : r.pairwise_scores) {
      EXPECT_GE(p.score, -1.0);
      EXPECT_LE(p.score, 1.0);
    }
}

TEST(IncrementalEvaluate, ConfigValidation) {
  std::mt19937_64 rng(5);
  const auto data = random_points(30, 2, rng);
  auto bad = small_config();
  bad.parallel_runs = 1;
  EXPECT_THROW(gkm::incremental_evaluate(data, bad), gkm::Error);
  bad = small_config();
  bad.initial_dim = 4;
  EXPECT_THROW(gkm::incremental_evaluate(data, bad), gkm::Error);
  bad = small_config();
  bad.learning_rate = {0.1, 0.5};
  EXPECT_THROW(gkm::incremental_evaluate(data, bad), gkm::Error);
  bad = small_config();
  bad.probe_size = 31;
  EXPECT_THROW(gkm::incremental_evaluate(data, bad), gkm::Error);
}
