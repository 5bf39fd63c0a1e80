#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "trapsel/cluster/optics.hpp"

using namespace trapsel;

TEST(OpticsCore, CountsThePointItself) {
  Matrix x(3, 1);
  x << 0, 1, 5;
  const auto core = core_distances(pairwise_distances(x), 2);
  EXPECT_DOUBLE_EQ(core[0], 1.0);
  EXPECT_DOUBLE_EQ(core[1], 1.0);
  EXPECT_DOUBLE_EQ(core[2], 4.0);
  EXPECT_DOUBLE_EQ(core_distances(pairwise_distances(x), 3)[0], 5.0);
}

TEST(OpticsReachability, MaxRule) {
  EXPECT_DOUBLE_EQ(reachability_distance(2.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(reachability_distance(0.5, 3.0), 3.0);
}

TEST(Optics, SmallExample) {
  Matrix x(3, 1);
  x << 0, 1, 5;
  const auto o = optics(x, 2);
  EXPECT_EQ(o.order, (std::vector<Index>{0, 1, 2}));
  EXPECT_TRUE(std::isinf(o.reachability[0]));
  EXPECT_DOUBLE_EQ(o.reachability[1], 1.0);
  EXPECT_DOUBLE_EQ(o.reachability[2], 4.0);
}

TEST(Optics, MatchesBruteForceExactly) {
  Rng rng(99);
  for (int t = 0; t < 25; ++t) {
    const Index m = 2 + static_cast<Index>(uniform_index(rng, 80));
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 4));
    Matrix x = testutil::random_matrix(rng, m, d, -2, 2);
    if (t % 5 == 0) x.row(m - 1) = x.row(0);  // duplicates
    const int mp = 2 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(std::min<Index>(m - 1, 8))));
    const auto got = optics(x, mp);
    const auto ref = oracle::optics(x, mp);
    EXPECT_EQ(got.order, ref.order);
    EXPECT_EQ(got.core_distance, ref.core);
    EXPECT_EQ(got.reachability, ref.reachability);
  }
}

TEST(Optics, InvalidMinPts) {
  const Matrix x = Matrix::Identity(3, 2);
  EXPECT_THROW(optics(x, 1), InvalidArgument);
  EXPECT_THROW(optics(x, 4), InvalidArgument);
}

TEST(OpticsExtract, TwoTightGroups) {
  // Unit-spaced groups 100 apart: every in-group reachability is exactly 1.
  Matrix x(20, 2);
  for (Index i = 0; i < 10; ++i) {
    x.row(i) << static_cast<double>(i), 0.0;
    x.row(10 + i) << 100.0 + static_cast<double>(i), 0.0;
  }
  const auto ord = optics(x, 2);
  std::vector<double> finite;
  for (double r : ord.reachability)
    if (std::isfinite(r)) finite.push_back(r);
  std::sort(finite.begin(), finite.end());
  const double pos = 0.75 * static_cast<double>(finite.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double cut = finite[lo] + (pos - static_cast<double>(lo)) * (finite[lo + 1] - finite[lo]);
  ASSERT_GT(finite.back(), cut);
  const auto r = extract_clusters(x, ord);
  validate(r, 20);
  ASSERT_EQ(r.k(), 2U);
  EXPECT_DOUBLE_EQ(r.diagnostics.at("reachability_cut"), cut);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(r.labels[static_cast<std::size_t>(i)], r.labels[0]);
    EXPECT_EQ(r.labels[static_cast<std::size_t>(10 + i)], r.labels[10]);
  }
  EXPECT_NE(r.labels[0], r.labels[10]);
  EXPECT_EQ(r.exemplars[static_cast<std::size_t>(r.labels[0])], 4);
}

TEST(OpticsExtract, ClustersAreRunsBelowTheCut) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = testutil::vstack(testutil::blob(rng, {0, 0}, 30, 0.2), testutil::blob(rng, {10, 10}, 30, 0.2));
    const auto ord = optics(x, 3);
    const auto r = extract_clusters(x, ord);
    validate(r, 60);
    const double cut = r.diagnostics.at("reachability_cut");
    // One cluster per maximal run of at-or-below-cut points (a run may be opened by a spike).
    std::size_t runs = 0;
    bool in_run = false;
    for (std::size_t p = 0; p < ord.order.size(); ++p) {
      const bool low = ord.reachability[static_cast<std::size_t>(ord.order[p])] <= cut;
      const bool next_low = p + 1 < ord.order.size() && ord.reachability[static_cast<std::size_t>(ord.order[p + 1])] <= cut;
      if (low && !in_run) ++runs;
      if (!low && next_low) {
        ++runs;
        in_run = true;
        continue;
      }
      in_run = low;
    }
    EXPECT_EQ(r.k(), std::max<std::size_t>(runs, 1));
    // No cluster mixes the two blobs.
    for (int i = 0; i < 30; ++i)
      for (int j = 30; j < 60; ++j) EXPECT_NE(r.labels[static_cast<std::size_t>(i)], r.labels[static_cast<std::size_t>(j)]);
  }
}

TEST(OpticsExtract, EquallySpacedIsOneCluster) {
  Matrix x(12, 1);
  for (Index i = 0; i < 12; ++i) x(i, 0) = static_cast<double>(i);
  const auto r = extract_clusters(x, optics(x, 2));
  validate(r, 12);
  EXPECT_EQ(r.k(), 1U);
}

TEST(OpticsExtract, IdenticalPointsUseLowestIndexMedoid) {
  const Matrix x = Matrix::Constant(4, 2, 1.0);
  const auto r = extract_clusters(x, optics(x, 4));
  validate(r, 4);
  ASSERT_EQ(r.k(), 1U);
  EXPECT_EQ(r.exemplars[0], 0);
}

TEST(OpticsExtract, ExemplarsAreMedoids) {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const Matrix x = testutil::random_matrix(rng, 40, 2);
    const auto r = extract_clusters(x, optics(x, 3));
    validate(r, 40);
    EXPECT_GE(r.k(), 1U);
  }
}

TEST(Dbcv, MatchesKruskalOracle) {
  Rng rng(123);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = testutil::random_matrix(rng, 10, 2);
    std::vector<int> labels(10);
    for (auto& l : labels) l = static_cast<int>(uniform_index(rng, 3));
    labels[0] = 0;
    labels[1] = 1;
    EXPECT_NEAR(dbcv(x, labels).value, oracle::dbcv(x, labels), 1e-9);
  }
}

TEST(Dbcv, CorrectLabelsBeatPermutations) {
  Rng rng(55);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = testutil::vstack(testutil::blob(rng, {0, 0}, 20, 0.5), testutil::blob(rng, {6, 6}, 20, 0.5));
    std::vector<int> truth(40, 0);
    for (int i = 20; i < 40; ++i) truth[static_cast<std::size_t>(i)] = 1;
    auto perm = truth;
    shuffle(perm, rng);
    const double good = dbcv(x, truth).value;
    EXPECT_GT(good, dbcv(x, perm).value);
    EXPECT_GT(good, 0.0);
    EXPECT_LE(good, 1.0);
  }
}

TEST(Dbcv, SingleClusterSingletonAndScale) {
  Rng rng(1);
  const Matrix x = testutil::random_matrix(rng, 8, 2);
  EXPECT_DOUBLE_EQ(dbcv(x, std::vector<int>(8, 0)).value, -1.0);
  std::vector<int> single{0, 0, 0, 0, 0, 0, 0, 1};
  const auto s = dbcv(x, single);
  EXPECT_TRUE(s.singleton_cluster);
  std::vector<int> two{0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_NEAR(dbcv(x, two).value, dbcv(x * 37.5, two).value, 1e-9);
  EXPECT_THROW(dbcv(x, std::vector<int>(3, 0)), InvalidArgument);
}

TEST(MinPts, DefaultCandidates) {
  EXPECT_EQ(default_minpts_candidates(100), (std::vector<int>{2, 3, 5}));
  EXPECT_EQ(default_minpts_candidates(1000), (std::vector<int>{2, 3, 5, 7}));
  EXPECT_EQ(default_minpts_candidates(3), (std::vector<int>{2, 3}));
}

TEST(MinPts, SelectionByDbcv) {
  Rng rng(4);
  const Matrix x = testutil::vstack(testutil::blob(rng, {0, 0}, 25, 0.3), testutil::blob(rng, {8, 8}, 25, 0.3));
  const auto only2 = select_minpts(x, {2});
  EXPECT_EQ(only2.min_pts, 2);
  const auto sel = select_minpts(x, default_minpts_candidates(50));
  validate(sel.clustering, 50);
  EXPECT_EQ(sel.clustering.k(), 2U);
  double best = -kInf;
  for (const auto& [mp, v] : sel.scores) best = std::max(best, v);
  for (const auto& [mp, v] : sel.scores)
    if (mp == sel.min_pts) {
      EXPECT_DOUBLE_EQ(v, best);
    }
  const auto skipped = select_minpts(x, {1, 3, 500});
  EXPECT_EQ(skipped.min_pts, 3);
  EXPECT_EQ(skipped.scores.size(), 1U);
  EXPECT_THROW(select_minpts(x, {0, 1, 51}), InvalidArgument);
}

TEST(Optics, ReachabilityCsv) {
  Matrix x(3, 1);
  x << 0, 1, 5;
  std::ostringstream os;
  write_reachability_csv(optics(x, 2), os);
  EXPECT_EQ(os.str(), "order_index,point,reachability\n0,0,inf\n1,1,1\n2,2,4\n");
}
