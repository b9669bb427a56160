#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "gmid/grid.hpp"

using namespace gmid;

TEST(BuildGrid, DefaultExperimentSpacing) {
  const SpaceTimeGrid g = build_grid(51, 25, -kPi, kPi, 5.0);
  ASSERT_EQ(g.n(), 51u);
  ASSERT_EQ(g.T(), 25u);
  EXPECT_EQ(g.s_min(), -kPi);
  EXPECT_EQ(g.s_max(), kPi);
  EXPECT_EQ(g.t(0), 0.0);
  EXPECT_EQ(g.t_max(), 5.0);
  for (std::size_t i = 1; i < g.n(); ++i) EXPECT_NEAR(g.s(i) - g.s(i - 1), 2.0 * kPi / 50.0, 1e-12);
  for (std::size_t k = 1; k < g.T(); ++k) EXPECT_NEAR(g.t(k) - g.t(k - 1), 5.0 / 24.0, 1e-12);
}

TEST(BuildGrid, SmallestLegalGrid) {
  const SpaceTimeGrid g = build_grid(3, 2, 0.0, 1.0, 1.0);
  EXPECT_EQ(g.s_nodes(), (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(g.t_nodes(), (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(g.boundary_idx(), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(g.ic_time_idx(), 0u);
}

TEST(BuildGrid, ArithmeticSpacing) {
  const SpaceTimeGrid g = build_grid(5, 2, -1.0, 1.0, 2.0);
  EXPECT_DOUBLE_EQ(g.s(1) - g.s(0), 0.5);
  EXPECT_DOUBLE_EQ(g.t(1) - g.t(0), 2.0);
}

TEST(BuildGrid, RejectsBadArguments) {
  EXPECT_THROW(build_grid(2, 5, 0, 1, 1), std::invalid_argument);
  EXPECT_THROW(build_grid(5, 1, 0, 1, 1), std::invalid_argument);
  EXPECT_THROW(build_grid(5, 5, 1, 1, 1), std::invalid_argument);
  EXPECT_THROW(build_grid(5, 5, 0, 1, 0), std::invalid_argument);
}

TEST(BuildGrid, SpacingIsUniformForManySizes) {
  for (std::size_t n : {3, 7, 51, 101, 257}) {
    const SpaceTimeGrid g = build_grid(n, 4, -kPi, kPi, 5.0);
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, g.s(i) - g.s(i - 1));
      hi = std::max(hi, g.s(i) - g.s(i - 1));
    }
    EXPECT_LT(hi - lo, 1e-12) << n;
  }
}

TEST(Mask, HalfMissingDropsTwentyFiveColumns) {
  const SpaceTimeGrid g = build_grid(51, 25, -kPi, kPi, 5.0);
  const Mask m = make_mask(g, 0.5, 7);
  std::size_t missing = 0;
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    const bool first = m(0, i);
    for (Eigen::Index k = 1; k < m.rows(); ++k) ASSERT_EQ(m(k, i), first);
    missing += first ? 0 : 1;
  }
  EXPECT_EQ(missing, 25u);
}

TEST(Mask, Extremes) {
  const SpaceTimeGrid g = build_grid(11, 4, 0, 1, 1);
  EXPECT_TRUE(make_mask(g, 0.0, 3).all());
  EXPECT_FALSE(make_mask(g, 1.0, 3).any());
  EXPECT_THROW(make_mask(g, 1.5, 3), std::invalid_argument);
  EXPECT_THROW(make_mask(g, -0.1, 3), std::invalid_argument);
}

TEST(Mask, DeterministicPerSeed) {
  const SpaceTimeGrid g = build_grid(51, 5, -kPi, kPi, 5.0);
  EXPECT_EQ(make_mask(g, 0.5, 11), make_mask(g, 0.5, 11));
  bool differs = false;
  for (std::uint64_t s = 12; s < 20 && !differs; ++s) differs = make_mask(g, 0.5, 11) != make_mask(g, 0.5, s);
  EXPECT_TRUE(differs);
}

TEST(Mask, ColumnsCoverEveryIndexOverSeeds) {
  const SpaceTimeGrid g = build_grid(9, 2, 0, 1, 1);
  std::set<Eigen::Index> seen;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Mask m = make_mask(g, 0.3, s);
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
      if (!m(0, i)) seen.insert(i);
    }
  }
  EXPECT_EQ(seen.size(), 9u);
}

TEST(ObservationOperator, IdentityReturnsFullRow) {
  auto g = std::make_shared<const SpaceTimeGrid>(build_grid(4, 3, 0, 1, 1));
  Field f(g);
  f.values.row(1) << 1, 2, 3, 4;
  const auto H = ObservationOperator::identity(4, 3);
  EXPECT_EQ(apply_observation(H, f, 1), (Vector(4) << 1, 2, 3, 4).finished());
}

TEST(ObservationOperator, GathersInIndexOrder) {
  const ObservationOperator H(3, {{0, 2}});
  EXPECT_EQ(H.apply(Vector::LinSpaced(3, 1, 3), 0), (Vector(2) << 1, 3).finished());
  const Matrix M = H.matrix(0);
  EXPECT_EQ(M * Vector::LinSpaced(3, 1, 3), (Vector(2) << 1, 3).finished());
}

TEST(ObservationOperator, FromHalfMaskHasTwentySixEntries) {
  const SpaceTimeGrid g = build_grid(51, 25, -kPi, kPi, 5.0);
  const auto H = ObservationOperator::from_mask(make_mask(g, 0.5, 1));
  for (std::size_t k = 0; k < H.T(); ++k) EXPECT_EQ(H.indices(k).size(), 26u);
}

TEST(ObservationOperator, ScatterThenApplyRoundTrips) {
  const SpaceTimeGrid g = build_grid(20, 6, 0, 1, 1);
  const auto H = ObservationOperator::from_mask(make_mask(g, 0.4, 5));
  for (std::size_t k = 0; k < H.T(); ++k) {
    const Vector z = Vector::Random(static_cast<Eigen::Index>(H.indices(k).size()));
    EXPECT_EQ(H.apply(H.scatter(z, k), k), z);
    const Vector once = H.scatter(H.apply(H.scatter(z, k), k), k);
    EXPECT_EQ(once, H.scatter(z, k));
  }
}

TEST(ObservationOperator, RejectsDuplicatesAndRange) {
  EXPECT_THROW(ObservationOperator(3, {{0, 0}}), std::invalid_argument);
  EXPECT_THROW(ObservationOperator(3, {{3}}), std::invalid_argument);
  auto g = std::make_shared<const SpaceTimeGrid>(build_grid(3, 2, 0, 1, 1));
  EXPECT_THROW(apply_observation(ObservationOperator::identity(3, 2), Field(g), 2), std::out_of_range);
}

TEST(Field, ChecksFiniteOnlyWhereObserved) {
  auto g = std::make_shared<const SpaceTimeGrid>(build_grid(3, 2, 0, 1, 1));
  Field f(g);
  f.values(1, 1) = std::nan("");
  EXPECT_THROW(f.check_finite(), std::domain_error);
  f.mask(1, 1) = false;
  EXPECT_NO_THROW(f.check_finite());
  EXPECT_THROW(Field(g, RowMatrix::Zero(3, 3)), std::invalid_argument);
}
