#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cfmimo/feasible_set.hpp"
#include "cfmimo/model.hpp"
#include "cfmimo/random.hpp"
#include "oracles.hpp"

using namespace cfmimo;
using namespace cfmimo::testing;

TEST(Coefficients, Degenerate) {
  const Scenario s = scalar_scenario(10.0, 1.0, 0.8);
  const Coefficients co = build_coefficients(s);
  EXPECT_NEAR(co.nu_bar_diag(0, 0), std::sqrt(0.8), 1e-15);
  EXPECT_EQ(co.beta(0, 0), 1.0);
  EXPECT_TRUE(co.cross.empty());
}

TEST(Coefficients, OrthogonalPilotsHaveNoCrossTerms) {
  DropConfig cfg;
  cfg.M = 10;
  cfg.K = 5;  // K <= T_p
  const Coefficients co = build_coefficients(generate_drop(cfg, 3));
  EXPECT_TRUE(co.cross.empty());
  EXPECT_EQ(co.nu_bar(1, 2), Vector::Zero(10));
}

TEST(Coefficients, SharedPilotCrossWeights) {
  Scenario s = scalar_scenario(10.0, 1.0, 0.8);
  s.M = 3;
  s.K = 2;
  s.beta = Matrix::Ones(3, 2);
  s.nu = Matrix::Constant(3, 2, 0.8);
  s.pilot_gram = Matrix::Ones(2, 2);
  s.pilot_of_user = {0, 0};
  const Coefficients co = build_coefficients(s);
  ASSERT_EQ(co.cross.size(), 2u);
  for (int m = 0; m < 3; ++m) EXPECT_NEAR(co.nu_bar(0, 1)(m), std::sqrt(0.8), 1e-15);
}

TEST(Coefficients, ZeroBetaInRatioRejected) {
  Scenario s = scalar_scenario(10.0, 1.0, 0.8);
  s.M = 2;
  s.K = 2;
  s.beta = Matrix::Ones(2, 2);
  s.beta(1, 0) = 0.0;
  s.nu = Matrix::Constant(2, 2, 0.5);
  s.pilot_gram = Matrix::Ones(2, 2);
  EXPECT_THROW(build_coefficients(s), std::invalid_argument);
}

TEST(Sinr, ScalarExample) {
  const Coefficients co = build_coefficients(scalar_scenario(10.0, 1.0, 0.8));
  const PowerAllocation mu = PowerAllocation::Ones(1, 1);
  EXPECT_NEAR(sinr(co, mu)(0), 8.0 / 11.0, 1e-15);
  EXPECT_NEAR(spectral_efficiency(co, mu)(0), 0.9 * std::log(19.0 / 11.0), 1e-15);
  EXPECT_NEAR(spectral_efficiency(co, mu)(0), 0.4919, 1e-4);
  EXPECT_EQ(sinr(co, PowerAllocation::Zero(1, 1))(0), 0.0);
  EXPECT_EQ(total_se(co, PowerAllocation::Zero(1, 1)), 0.0);
}

TEST(Sinr, SingleUserMonotoneInScale) {
  const Coefficients co = build_coefficients(scalar_scenario(10.0, 1.0, 0.8));
  double prev = -1.0;
  for (double t = 0.05; t <= 1.0; t += 0.05) {
    const double g = sinr(co, PowerAllocation::Constant(1, 1, t))(0);
    EXPECT_GT(g, prev);
    prev = g;
  }
}

TEST(Sinr, DenominatorBoundedBelow) {
  const Scenario s = random_drop(8, 6, 2, 11);
  const Coefficients co = build_coefficients(s);
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const auto t = sinr_terms(co, random_feasible(rng, 8, 6, 2));
    EXPECT_TRUE((t.c.array() + co.noise() >= 1.0 / 4.0).all());
  }
}

TEST(Se, DecoupledSubsystemsAdd) {
  // K users on orthogonal pilots, each with its own AP and no leakage to others.
  const int K = 4;
  Scenario s = scalar_scenario(10.0, 1.0, 0.8);
  s.M = K;
  s.K = K;
  s.beta = Matrix::Identity(K, K);
  s.nu = 0.8 * Matrix::Identity(K, K);
  s.pilot_gram = Matrix::Identity(K, K);
  s.pilot_of_user = {0, 1, 2, 3};
  const Coefficients co = build_coefficients(s);
  const double single = 0.9 * std::log(19.0 / 11.0);
  EXPECT_NEAR(total_se(co, Matrix::Identity(K, K)), K * single, 1e-14);
}

// The mu-space formula against a direct eta-space implementation.
TEST(Se, MatchesEtaSpaceOracle) {
  Rng rng(2024);
  for (int rep = 0; rep < 30; ++rep) {
    const int M = 2 + static_cast<int>(rng.below(15));
    const int K = 1 + static_cast<int>(rng.below(6));
    const int N = 1 << rng.below(3);
    Scenario s = random_drop(M, K, N, rng.next_u64(), 1 + static_cast<int>(rng.below(3)));
    const Coefficients co = build_coefficients(s);
    const PowerAllocation mu = random_feasible(rng, M, K, N);
    const Matrix eta = eta_from_mu(mu, s.nu);
    const Vector expect = eta_space_se(s, eta);
    const Vector got = spectral_efficiency(co, mu);
    for (int k = 0; k < K; ++k) EXPECT_LE(std::abs(got(k) - expect(k)), 1e-12 * std::max(1.0, std::abs(expect(k))));
  }
}

TEST(Se, InvariantToApPermutation) {
  const Scenario s = random_drop(9, 5, 1, 77, 2);
  Rng rng(8);
  const PowerAllocation mu = random_feasible(rng, 9, 5, 1);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Scenario p = s;
  PowerAllocation mu_p = mu;
  for (int m = 0; m < 9; ++m) {
    p.beta.row(m) = s.beta.row(perm[static_cast<std::size_t>(m)]);
    p.nu.row(m) = s.nu.row(perm[static_cast<std::size_t>(m)]);
    mu_p.row(m) = mu.row(perm[static_cast<std::size_t>(m)]);
  }
  const Vector a = sinr(build_coefficients(s), mu);
  const Vector b = sinr(build_coefficients(p), mu_p);
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(a(k) / b(k), 1.0, 1e-12);
}

// Per-entry monotonicity fails in general: raising power at an AP whose estimate
// is poor relative to its gain adds more uncertainty than signal. Scaling the
// whole column is monotone when the user is alone.
TEST(Se, IncreasesWithOwnColumnScaleWhenAlone) {
  const Scenario s = random_drop(6, 3, 1, 5, 1);
  const Coefficients co = build_coefficients(s);
  Rng rng(1);
  PowerAllocation base = PowerAllocation::Zero(6, 3);
  for (int m = 0; m < 6; ++m) base(m, 1) = rng.uniform(0.1, 1.0);
  double prev = 0.0;
  for (double t = 0.05; t <= 1.0; t += 0.05) {
    const double se = spectral_efficiency(co, t * base)(1);
    EXPECT_GT(se, prev);
    prev = se;
  }
}

TEST(Se, PerEntryIncreaseCanLowerSe) {
  Scenario s = scalar_scenario(1e3, 1.0, 0.8);
  s.M = 2;
  s.beta = Matrix::Ones(2, 1);
  s.nu.resize(2, 1);
  s.nu << 0.8, 1e-6;  // AP 1 barely knows the channel
  const Coefficients co = build_coefficients(s);
  Matrix mu(2, 1);
  mu << 1.0, 0.0;
  const double before = spectral_efficiency(co, mu)(0);
  mu(1, 0) = 0.5;
  EXPECT_LT(spectral_efficiency(co, mu)(0), before);
}
