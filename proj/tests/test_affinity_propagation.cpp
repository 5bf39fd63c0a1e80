#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"
#include "trapsel/cluster/affinity_propagation.hpp"

using namespace trapsel;

TEST(ApSimilarity, NegativeSquaredDistanceAndMedianPreference) {
  Matrix x(3, 2);
  x << 0, 0, 3, 4, 0, 1;
  const auto s = similarity_matrix(x);
  EXPECT_DOUBLE_EQ(s.values(0, 1), -25.0);
  EXPECT_DOUBLE_EQ(s.values(1, 0), -25.0);
  EXPECT_DOUBLE_EQ(s.values(0, 2), -1.0);
  // Off-diagonal values {-25, -1, -18}: median -18.
  EXPECT_DOUBLE_EQ(s.preference, -18.0);
  EXPECT_DOUBLE_EQ(s.values(2, 2), -18.0);
  EXPECT_DOUBLE_EQ(similarity_matrix(x, -3.0).values(1, 1), -3.0);
}

TEST(Ap, SinglePointAndIdenticalPoints) {
  Matrix one(1, 2);
  one << 1, 2;
  const auto r1 = affinity_propagation(similarity_matrix(one));
  EXPECT_EQ(r1.k(), 1U);
  EXPECT_EQ(r1.labels, std::vector<int>{0});

  const Matrix same = Matrix::Constant(4, 3, 2.5);
  const auto r = affinity_propagation(similarity_matrix(same));
  validate(r, 4);
  EXPECT_EQ(r.k(), 1U);
}

TEST(Ap, TwoTriadsGiveTwoClusters) {
  Matrix x(6, 1);
  x << 0, 0.1, 0.2, 10, 10.1, 10.2;
  const auto sim = similarity_matrix(x);
  const auto r = affinity_propagation(sim);
  validate(r, 6);
  ASSERT_EQ(r.k(), 2U);
  EXPECT_EQ(r.labels[0], r.labels[2]);
  EXPECT_EQ(r.labels[3], r.labels[5]);
  EXPECT_NE(r.labels[0], r.labels[3]);
  EXPECT_NEAR(oracle::net_similarity(sim.values, r.exemplars), oracle::best_net_similarity(sim.values), 1e-9);
}

TEST(Ap, InvalidOptions) {
  const auto sim = similarity_matrix(Matrix::Identity(3, 3));
  AffinityPropagationOptions o;
  o.damping = 1.0;
  EXPECT_THROW(affinity_propagation(sim, o), InvalidArgument);
  o.damping = 0.3;
  EXPECT_THROW(affinity_propagation(sim, o), InvalidArgument);
}

TEST(Ap, NetSimilarityAgreesWithOracle) {
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    const Matrix x = testutil::random_matrix(rng, 6, 2);
    const auto sim = similarity_matrix(x);
    std::vector<Index> ex{0, static_cast<Index>(1 + uniform_index(rng, 5))};
    EXPECT_NEAR(net_similarity(sim, ex), oracle::net_similarity(sim.values, ex), 1e-12);
  }
}

// With the default convergence_iter of 15 and damping 0.9 the exemplar set often
// looks stable before the messages settle; given time to converge, message
// passing should reach the exhaustive optimum on nearly every small instance.
TEST(Ap, NearOptimalOnSmallInstancesWhenConverged) {
  AffinityPropagationOptions opt;
  opt.convergence_iter = 50;
  Rng rng(2024);
  int matched = 0;
  const int n = 50;
  for (int t = 0; t < n; ++t) {
    const Index m = 3 + static_cast<Index>(uniform_index(rng, 5));
    const Matrix x = testutil::random_matrix(rng, m, 2);
    const auto sim = similarity_matrix(x);
    const auto r = affinity_propagation(sim, opt);
    validate(r, static_cast<std::size_t>(m));
    const double gap = oracle::best_net_similarity(sim.values) - oracle::net_similarity(sim.values, r.exemplars);
    EXPECT_GE(gap, -1e-9);
    if (gap <= 1e-6) ++matched;
  }
  EXPECT_GE(matched, 45);
}

TEST(Ap, LabelsPointAtMostSimilarExemplar) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = testutil::random_matrix(rng, 25, 3);
    const auto sim = similarity_matrix(x);
    const auto r = affinity_propagation(sim);
    validate(r, 25);
    for (Index i = 0; i < 25; ++i) {
      if (std::find(r.exemplars.begin(), r.exemplars.end(), i) != r.exemplars.end()) continue;
      const double own = sim.values(i, r.exemplars[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(i)])]);
      for (Index e : r.exemplars) EXPECT_GE(own, sim.values(i, e));
    }
  }
}

TEST(Ap, TranslationInvariant) {
  Rng rng(13);
  for (int t = 0; t < 10; ++t) {
    const Matrix x = testutil::random_matrix(rng, 20, 2);
    Matrix shifted = x;
    shifted.col(0).array() += 100.0;
    shifted.col(1).array() -= 7.0;
    const auto a = affinity_propagation(similarity_matrix(x));
    const auto b = affinity_propagation(similarity_matrix(shifted));
    EXPECT_EQ(a.exemplars, b.exemplars);
    EXPECT_EQ(a.labels, b.labels);
  }
}

TEST(Ap, InvariantToConstantShiftOfSimilarities) {
  Rng rng(31);
  for (int t = 0; t < 30; ++t) {
    const Index m = 3 + static_cast<Index>(uniform_index(rng, 6));
    const Matrix x = testutil::random_matrix(rng, m, 2);
    const auto sim = similarity_matrix(x);
    auto shifted = sim;
    shifted.values.array() -= 0.75;
    shifted.preference -= 0.75;
    const auto a = affinity_propagation(sim);
    const auto b = affinity_propagation(shifted);
    EXPECT_EQ(a.exemplars, b.exemplars) << "instance " << t;
    // The shift moves net similarity by exactly M times the constant.
    EXPECT_NEAR(oracle::net_similarity(shifted.values, b.exemplars),
                oracle::net_similarity(sim.values, a.exemplars) - 0.75 * static_cast<double>(m), 1e-9);
  }
}

TEST(Ap, EqualSimilaritiesShortCircuit) {
  Matrix x(3, 2);
  x << 0, 0, 1, 0, 0.5, std::sqrt(0.75);
  auto sim = similarity_matrix(x, -2.0);
  // Floating error keeps the triangle from being exactly equilateral; force it.
  for (Index i = 0; i < 3; ++i)
    for (Index k = 0; k < 3; ++k)
      if (i != k) sim.values(i, k) = -1.0;
  EXPECT_EQ(affinity_propagation(sim).k(), 1U);
  sim.preference = -0.5;
  sim.values.diagonal().setConstant(-0.5);
  EXPECT_EQ(affinity_propagation(sim).k(), 3U);
}
