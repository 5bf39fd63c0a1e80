#include <gtest/gtest.h>

#include "test_util.hpp"
#include "trapsel/cluster/mean_shift.hpp"

using namespace trapsel;

TEST(Bandwidth, Examples) {
  Matrix two(2, 1);
  two << 0, 10;
  EXPECT_DOUBLE_EQ(estimate_bandwidth(two, 0.5), 10.0);
  EXPECT_DOUBLE_EQ(estimate_bandwidth(Matrix::Constant(5, 2, 3.0)), 1e-6);
  // 10 evenly spaced points: distances 1..9 with multiplicities 9..1 (45 pairs).
  Matrix line(10, 1);
  for (Index i = 0; i < 10; ++i) line(i, 0) = static_cast<double>(i);
  std::vector<double> d;
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) d.push_back(j - i);
  std::sort(d.begin(), d.end());
  const double pos = 0.3 * 44.0;
  const double expect = d[13] + (pos - 13.0) * (d[14] - d[13]);
  EXPECT_DOUBLE_EQ(estimate_bandwidth(line, 0.3), expect);
  EXPECT_DOUBLE_EQ(expect, 2.0);
  EXPECT_THROW(estimate_bandwidth(Matrix::Zero(1, 2)), InvalidArgument);
}

TEST(MeanShift, IdenticalPoints) {
  const auto r = mean_shift(Matrix::Constant(6, 2, 1.5), 1e-6);
  validate(r, 6);
  EXPECT_EQ(r.k(), 1U);
}

TEST(MeanShift, WideBandwidthFindsMidpoint) {
  Matrix x(2, 1);
  x << 0, 1;
  const auto r = mean_shift(x, 10.0);
  validate(r, 2);
  ASSERT_EQ(r.k(), 1U);
  EXPECT_NEAR(r.centers(0, 0), 0.5, 1e-4);
}

TEST(MeanShift, SeparatedCloudsGiveTwoClusters) {
  Rng rng(3);
  const double bw = 0.5;
  const Matrix x = testutil::vstack(testutil::blob(rng, {0, 0}, 20, 0.1), testutil::blob(rng, {100 * bw, 0}, 20, 0.1));
  const auto r = mean_shift(x, bw);
  validate(r, 40);
  ASSERT_EQ(r.k(), 2U);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(r.labels[static_cast<std::size_t>(i)], r.labels[0]);
    EXPECT_EQ(r.labels[static_cast<std::size_t>(20 + i)], r.labels[20]);
  }
}

TEST(MeanShift, ModesAreFixedPoints) {
  Rng rng(21);
  for (int t = 0; t < 10; ++t) {
    const Matrix x = testutil::vstack(testutil::blob(rng, {0, 0, 0}, 15, 0.5), testutil::blob(rng, {4, 4, 0}, 15, 0.5));
    const double bw = estimate_bandwidth(x);
    MeanShiftOptions o;
    const auto r = mean_shift(x, bw, o);
    validate(r, 30);
    EXPECT_FALSE(r.has_flag("not_converged"));
    for (Index c = 0; c < r.centers.rows(); ++c) {
      EXPECT_LT(mean_shift_vector(x, r.centers.row(c).transpose(), bw).norm(), o.tol);
    }
  }
}

TEST(MeanShift, ExemplarIsClosestMemberToMode) {
  Rng rng(17);
  const Matrix x = testutil::random_matrix(rng, 40, 2);
  const auto r = mean_shift(x, estimate_bandwidth(x));
  validate(r, 40);
  for (std::size_t c = 0; c < r.k(); ++c) {
    const Vector mode = r.centers.row(static_cast<Index>(c)).transpose();
    const double own = (x.row(r.exemplars[c]).transpose() - mode).norm();
    for (Index i = 0; i < 40; ++i)
      if (r.labels[static_cast<std::size_t>(i)] == static_cast<int>(c)) {
        EXPECT_LE(own, (x.row(i).transpose() - mode).norm());
      }
  }
}

TEST(MeanShift, RejectsNonPositiveBandwidth) {
  const Matrix x = Matrix::Identity(3, 3);
  EXPECT_THROW(mean_shift(x, 0.0), InvalidArgument);
  EXPECT_THROW(mean_shift(x, -1.0), InvalidArgument);
}
