#include <cmath>

#include <gtest/gtest.h>

#include "cfmimo/feasible_set.hpp"
#include "cfmimo/random.hpp"
#include "oracles.hpp"

using namespace cfmimo;
using namespace cfmimo::testing;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

Matrix random_matrix(Rng& rng, int M, int K, double scale) {
  Matrix x(M, K);
  for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = rng.normal(0.0, scale);
  return x;
}

}  // namespace

TEST(Project, Examples) {
  EXPECT_EQ(project(row({0.3, 0.4}), 1), row({0.3, 0.4}));
  EXPECT_EQ(project(row({-0.2, 0.5}), 1), row({0.0, 0.5}));
  EXPECT_TRUE(project(row({3.0, 4.0}), 4).isApprox(row({0.3, 0.4}), 1e-15));
  EXPECT_EQ(project(row({-1.0, -2.0}), 2), row({0.0, 0.0}));
}

TEST(Project, BoundaryTieUnchanged) {
  const Matrix x = row({0.6, 0.8});
  EXPECT_EQ(project(x, 1), x);
}

TEST(Project, MatchesDykstraOracle) {
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const int N = 1 << rng.below(3);
    const Matrix x = random_matrix(rng, 1 + static_cast<int>(rng.below(6)), 1 + static_cast<int>(rng.below(8)), rng.uniform(0.05, 3.0));
    EXPECT_LE((project(x, N) - dykstra_projection(x, N)).norm(), 1e-8);
  }
}

TEST(Project, IdempotentExactly) {
  Rng rng(2);
  for (int rep = 0; rep < 500; ++rep) {
    const int N = 1 + static_cast<int>(rng.below(8));
    const Matrix p = project(random_matrix(rng, 5, 7, rng.uniform(0.01, 10.0)), N);
    EXPECT_EQ(project(p, N), p);
    EXPECT_TRUE(is_feasible(p, N, 1e-12));
  }
}

TEST(Project, NonExpansive) {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const int N = 1 << rng.below(3);
    const Matrix x = random_matrix(rng, 4, 6, 1.0);
    const Matrix y = random_matrix(rng, 4, 6, 1.0);
    EXPECT_LE((project(x, N) - project(y, N)).norm(), (x - y).norm() + 1e-15);
  }
}

TEST(Project, NoFeasiblePointIsCloser) {
  Rng rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    const int N = 1 << rng.below(3);
    const Matrix x = random_matrix(rng, 3, 5, 1.0);
    const Matrix z = random_feasible(rng, 3, 5, N);
    EXPECT_LE((project(x, N) - x).norm(), (z - x).norm() + 1e-12);
  }
}

TEST(Project, RowsIndependent) {
  Rng rng(5);
  const Matrix x = random_matrix(rng, 6, 4, 1.0);
  const Matrix whole = project(x, 2);
  for (Eigen::Index m = 0; m < 6; ++m) EXPECT_EQ(project(Matrix(x.row(m)), 2), Matrix(whole.row(m)));
}

TEST(Project, MaskPinsEntries) {
  Rng rng(6);
  const Matrix x = random_matrix(rng, 4, 3, 1.0).cwiseAbs();
  ApMask mask = ApMask::Constant(4, 3, true);
  mask(0, 1) = false;
  mask(2, 2) = false;
  const Matrix p = project(x, 1, &mask);
  EXPECT_EQ(p(0, 1), 0.0);
  EXPECT_EQ(p(2, 2), 0.0);
  const ApMask all = ApMask::Constant(4, 3, true);
  EXPECT_EQ(project(x, 1, &all), project(x, 1));
}

TEST(Feasible, Checks) {
  EXPECT_TRUE(is_feasible(Matrix::Zero(3, 3), 2));
  Matrix mu = Matrix::Zero(2, 2);
  mu(1, 0) = std::sqrt(1.0 / 4.0) + 0.01;
  EXPECT_FALSE(is_feasible(mu, 4, 1e-6));
  mu(1, 0) = -0.1;
  EXPECT_FALSE(is_feasible(mu, 4, 1e-6));
}

// The solver folds the SINR sums into the projection sweep and compares the
// result against full evaluations, so the two must agree to the bit.
TEST(Project, BlockSumsMatchFullSweep) {
  Rng rng(33);
  for (int M : {1, 63, 64, 150}) {
    const Scenario s = random_drop(M, 7, 2, rng.next_u64(), 3);
    const Coefficients co = build_coefficients(s);
    const Matrix x = random_matrix(rng, M, 7, 2.0);
    PowerAllocation out;
    SinrSums sums(co);
    project_blocks(x, 2, nullptr, out, [&](Eigen::Index r0, Eigen::Index n) { sums.add_rows(co, out, r0, n); });
    EXPECT_EQ(out, project(x, 2));
    const SinrTerms a = terms_from_sums(co, std::move(sums));
    const SinrTerms b = sinr_terms(co, out);
    EXPECT_EQ(a.b, b.b);
    EXPECT_EQ(a.c, b.c);
    EXPECT_EQ(a.cross_inner, b.cross_inner);
  }
}
