#include <cmath>

#include <gtest/gtest.h>

#include "cfmimo/feasible_set.hpp"
#include "cfmimo/solver.hpp"
#include "oracles.hpp"

using namespace cfmimo;
using namespace cfmimo::testing;

namespace {

void expect_monotone(const SolverTrace& t) {
  for (std::size_t n = 1; n < t.objective_per_iter.size(); ++n) {
    const double prev = t.objective_per_iter[n - 1];
    EXPECT_GE(t.objective_per_iter[n], prev - 1e-12 * (1.0 + std::abs(prev))) << "iteration " << n;
  }
}

SolverOptions options(StepVariant v) {
  SolverOptions o;
  o.variant = v;
  return o;
}

}  // namespace

TEST(Momentum, FirstStep) {
  EXPECT_NEAR(next_momentum(1.0), (1.0 + std::sqrt(5.0)) / 2.0, 1e-15);
  EXPECT_NEAR(next_momentum(1.0), 1.6180, 1e-4);
}

TEST(BbStep, Examples) {
  Vector s(2), r(2);
  s << 1.0, 1.0;
  EXPECT_NEAR(bb_step(s, s, BbRule::Long, 7.0), 1.0, 1e-15);
  EXPECT_NEAR(bb_step(s, s, BbRule::Short, 7.0), 1.0, 1e-15);
  r << 2.0, 1.0;
  EXPECT_NEAR(bb_step(s, r, BbRule::Long, 7.0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(bb_step(s, r, BbRule::Short, 7.0), 3.0 / 5.0, 1e-15);
  s << 1.0, 0.0;
  r << 2.0, 0.0;
  EXPECT_NEAR(bb_step(s, r, BbRule::Long, 7.0), 0.5, 1e-15);
  EXPECT_NEAR(bb_step(s, r, BbRule::Short, 7.0), 0.5, 1e-15);
  r << -1.0, 0.0;
  EXPECT_EQ(bb_step(s, r, BbRule::Long, 7.0), 7.0);
  EXPECT_EQ(bb_step(Vector::Zero(2), Vector::Zero(2), BbRule::Short, 7.0), 7.0);
}

TEST(Options, Validation) {
  SolverOptions o;
  o.rho = 1.0;
  EXPECT_THROW(o.validate(), std::invalid_argument);
  o = SolverOptions{};
  o.stop_window = 0;
  EXPECT_THROW(o.validate(), std::invalid_argument);
  o = SolverOptions{};
  o.alpha0 = 0.0;
  EXPECT_THROW(o.validate(), std::invalid_argument);
}

TEST(Solve, ScalarConvergesToFullPower) {
  const Coefficients co = build_coefficients(scalar_scenario(10.0, 1.0, 0.8));
  const PowerAllocation mu0 = PowerAllocation::Constant(1, 1, 0.1);
  const double best = 0.9 * std::log(19.0 / 11.0);

  SolverOptions fixed = options(StepVariant::FixedStep);
  fixed.alpha0 = 0.05;
  fixed.stop_tol = 1e-10;
  const auto a = solve_apg(co, {Utility::SEmax}, fixed, mu0);
  EXPECT_NEAR(a.final_mu(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(a.objective_per_iter.back(), best, 1e-4);
  expect_monotone(a);

  SolverOptions ls = options(StepVariant::LineSearch);
  ls.alpha0 = 0.05;
  ls.stop_tol = 1e-10;
  const auto b = solve_apg_ls(co, {Utility::SEmax}, ls, mu0);
  EXPECT_NEAR(b.final_mu(0, 0), a.final_mu(0, 0), 1e-6);
  EXPECT_LE(b.iterations, a.iterations);
  expect_monotone(b);
}

TEST(Solve, RejectsInfeasibleStart) {
  const Coefficients co = build_coefficients(scalar_scenario(10.0, 1.0, 0.8));
  EXPECT_THROW(solve_apg(co, {Utility::SEmax}, options(StepVariant::FixedStep), PowerAllocation::Constant(1, 1, 1.5)),
               std::invalid_argument);
  EXPECT_THROW(solve_apg_ls(co, {Utility::SEmax}, options(StepVariant::LineSearch), PowerAllocation::Constant(1, 1, -0.1)),
               std::invalid_argument);
  EXPECT_THROW(solve_apg_ls(co, {Utility::SEmax}, options(StepVariant::LineSearch), PowerAllocation::Zero(2, 1)),
               std::invalid_argument);
}

TEST(Solve, MonotoneFeasibleAllKinds) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Scenario s = random_drop(20, 8, 1 + static_cast<int>(seed % 2), seed, 4);
    const Coefficients co = build_coefficients(s);
    const PowerAllocation mu0 = epa_allocation(s);
    for (Utility u : kAllUtilities) {
      for (StepVariant v : {StepVariant::FixedStep, StepVariant::LineSearch}) {
        SolverOptions o = options(v);
        if (v == StepVariant::FixedStep) o.alpha0 = 0.5 / estimate_lipschitz(co, {u}, 200, seed);
        o.max_iter = 300;
        const auto t = solve_once(co, {u}, o, mu0);
        expect_monotone(t);
        EXPECT_TRUE(is_feasible(t.final_mu, s.N, 1e-9));
        EXPECT_EQ(t.objective_per_iter.size(), static_cast<std::size_t>(t.iterations) + 1);
        EXPECT_EQ(t.per_user_se.size(), s.K);
      }
    }
  }
}

// With alpha below 1/L the plain projected step from every iterate must not lose
// ground beyond rounding; the iteration then never needs a backtrack.
TEST(Solve, FixedStepBelowInverseLipschitzAlwaysAscends) {
  const Scenario s = random_drop(15, 6, 1, 42, 3);
  const Coefficients co = build_coefficients(s);
  for (Utility u : kAllUtilities) {
    const UtilityKind kind{u};
    SolverOptions o = options(StepVariant::FixedStep);
    o.alpha0 = 0.9 / estimate_lipschitz(co, kind, 400, 1);
    o.max_iter = 200;
    int checked = 0;
    o.on_iterate = [&](int, const PowerAllocation& mu) {
      const double f = evaluate(kind, co, mu);
      const double fv = evaluate(kind, co, project(mu + o.alpha0 * gradient(kind, co, mu), co.N));
      EXPECT_GE(fv, f - 1e-12 * (1.0 + std::abs(f))) << to_string(u);
      ++checked;
    };
    const auto t = solve_apg(co, kind, o, epa_allocation(s));
    EXPECT_EQ(checked, t.iterations + 1);
  }
}

TEST(Solve, Deterministic) {
  const Scenario s = random_drop(20, 8, 1, 5, 4);
  const Coefficients co = build_coefficients(s);
  SolverOptions o = options(StepVariant::LineSearch);
  o.n_starts = 3;
  o.seed = 77;
  const auto a = solve(co, {Utility::PFmax}, o, epa_allocation(s));
  const auto b = solve(co, {Utility::PFmax}, o, epa_allocation(s));
  EXPECT_EQ(a.objective_per_iter, b.objective_per_iter);
  EXPECT_EQ(a.final_mu, b.final_mu);
}

TEST(Solve, MultistartNeverWorse) {
  const Scenario s = random_drop(20, 8, 1, 6, 4);
  const Coefficients co = build_coefficients(s);
  SolverOptions o = options(StepVariant::LineSearch);
  const auto one = solve(co, {Utility::HRmax}, o, epa_allocation(s));
  o.n_starts = 4;
  const auto many = solve(co, {Utility::HRmax}, o, epa_allocation(s));
  EXPECT_GE(many.objective_per_iter.back(), one.objective_per_iter.back());
}

TEST(Solve, SmoothingSandwichAtEveryIterate) {
  const Scenario s = random_drop(20, 8, 1, 9, 4);
  const Coefficients co = build_coefficients(s);
  const UtilityKind kind{Utility::MRmax};
  const double gap = std::log(8.0) / kind.tau_for(8);
  SolverOptions o = options(StepVariant::LineSearch);
  o.max_iter = 1;
  PowerAllocation mu = epa_allocation(s);
  for (int n = 0; n < 100; ++n) {
    const Vector se = spectral_efficiency(co, mu);
    const double f = evaluate(kind, co, mu);
    EXPECT_LE(se.minCoeff(), f);
    EXPECT_LE(f, se.minCoeff() + gap);
    mu = solve_apg_ls(co, kind, o, mu).final_mu;
  }
}

TEST(Epa, Examples) {
  Scenario s = scalar_scenario(10.0, 1.0, 0.25);
  s.K = 2;
  s.beta = Matrix::Ones(1, 2);
  s.nu.resize(1, 2);
  s.nu << 0.25, 0.75;
  s.pilot_gram = Matrix::Identity(2, 2);
  PowerAllocation mu = epa_allocation(s);
  EXPECT_NEAR(mu(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(mu(0, 1), std::sqrt(0.75), 1e-15);
  EXPECT_NEAR(mu.row(0).squaredNorm(), 1.0, 1e-15);
  s.N = 2;
  mu = epa_allocation(s);
  EXPECT_NEAR(mu.row(0).squaredNorm(), 0.5, 1e-15);

  const Scenario one = random_drop(6, 1, 4, 3);
  const PowerAllocation single = epa_allocation(one);
  for (int m = 0; m < 6; ++m) EXPECT_NEAR(single(m, 0), 0.5, 1e-15);
}

TEST(Epa, SilentApWithoutEstimates) {
  Scenario s = scalar_scenario(10.0, 1.0, 0.5);
  s.M = 2;
  s.beta = Matrix::Ones(2, 1);
  s.nu.resize(2, 1);
  s.nu << 0.0, 0.5;
  const PowerAllocation mu = epa_allocation(s);
  EXPECT_EQ(mu(0, 0), 0.0);
  EXPECT_NEAR(mu(1, 0), 1.0, 1e-15);
}

TEST(SelectAps, Examples) {
  Matrix beta(4, 1);
  beta << 4.0, 3.0, 2.0, 1.0;
  const ApMask top2 = select_aps(beta, 2);
  EXPECT_TRUE(top2(0, 0) && top2(1, 0) && !top2(2, 0) && !top2(3, 0));
  EXPECT_TRUE(select_aps(beta, 4).all());
  EXPECT_THROW(select_aps(beta, 0), std::invalid_argument);
  EXPECT_THROW(select_aps(beta, 5), std::invalid_argument);
  Matrix tie = Matrix::Ones(3, 1);
  const ApMask t = select_aps(tie, 1);
  EXPECT_TRUE(t(0, 0) && !t(1, 0) && !t(2, 0));
}

TEST(SelectAps, FullMaskIsBitIdentical) {
  const Scenario s = random_drop(15, 6, 1, 13, 3);
  const Coefficients co = build_coefficients(s);
  const ApMask all = select_aps(s.beta, s.M);
  for (StepVariant v : {StepVariant::FixedStep, StepVariant::LineSearch}) {
    SolverOptions o = options(v);
    o.alpha0 = 1e-3;
    o.max_iter = 100;
    const auto a = solve_once(co, {Utility::PFmax}, o, epa_allocation(s));
    const auto b = solve_once(co, {Utility::PFmax}, o, epa_allocation(s, &all), &all);
    EXPECT_EQ(a.objective_per_iter, b.objective_per_iter);
    EXPECT_EQ(a.final_mu, b.final_mu);
  }
}

TEST(SelectAps, MaskedSolveKeepsUnselectedAtZero) {
  const Scenario s = random_drop(15, 6, 1, 14, 3);
  const Coefficients co = build_coefficients(s);
  const ApMask mask = select_aps(s.beta, 4);
  const auto t = solve(co, {Utility::SEmax}, options(StepVariant::LineSearch), epa_allocation(s, &mask), &mask);
  for (Eigen::Index j = 0; j < t.final_mu.size(); ++j)
    if (!mask(j)) {
      EXPECT_EQ(t.final_mu(j), 0.0);
    }
  expect_monotone(t);
}

TEST(Trace, CsvLayout) {
  const Coefficients co = build_coefficients(scalar_scenario(10.0, 1.0, 0.8));
  const auto t = solve_apg_ls(co, {Utility::SEmax}, options(StepVariant::LineSearch), PowerAllocation::Constant(1, 1, 0.2));
  const auto path = std::filesystem::temp_directory_path() / "cfmimo_trace.csv";
  write_trace_csv(path, t);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iter,objective,alpha_y,alpha_mu,elapsed_s");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, t.iterations + 1);
  std::filesystem::remove(path);
}
