#pragma once

// Monotone accelerated projected gradient ascent over S.
//
// Each iteration extrapolates y from the last two iterates and the previous
// extrapolated candidate, takes a projected gradient step from both y and
// the current iterate mu, and keeps whichever candidate scores higher. The
// plain step from mu is what makes the objective sequence nondecreasing; the
// step from y supplies the acceleration.
//
// The line-search variant picks each step by a Barzilai-Borwein estimate and
// backtracks until the sufficient-ascent test f(cand) >= f(from) + delta ||cand - from||^2
// passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cfmimo/feasible_set.hpp"
#include "cfmimo/objectives.hpp"
#include "cfmimo/random.hpp"
#include "cfmimo/scenario_io.hpp"

namespace cfmimo {

enum class StepVariant { FixedStep, LineSearch };

// Long: <s,s>/<s,r>.  Short: <s,r>/<r,r>.
enum class BbRule { Long, Short };

struct SolverOptions {
  StepVariant variant = StepVariant::LineSearch;
  double alpha0 = 1.0;
  double delta = 1e-4;
  double rho = 0.5;
  int max_iter = 5000;
  int stop_window = 5;
  double stop_tol = 1e-3;
  int max_backtracks = 50;
  double alpha_min = 1e-12;
  BbRule bb_rule = BbRule::Long;
  int n_starts = 1;
  std::uint64_t seed = 0;  // perturbations for extra starts
  // Called with (n, mu^n) for the start point and after every iteration.
  std::function<void(int, const PowerAllocation&)> on_iterate;

  void validate() const {
    if (!(alpha0 > 0.0)) throw std::invalid_argument("alpha0 must be positive");
    if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0, 1)");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
    if (stop_window < 1) throw std::invalid_argument("stop_window must be at least 1");
    if (!(stop_tol >= 0.0)) throw std::invalid_argument("stop_tol must be nonnegative");
    if (max_backtracks < 0) throw std::invalid_argument("max_backtracks must be nonnegative");
    if (!(alpha_min > 0.0)) throw std::invalid_argument("alpha_min must be positive");
    if (n_starts < 1) throw std::invalid_argument("n_starts must be positive");
  }
};

struct SolverTrace {
  std::vector<double> objective_per_iter;  // entry 0 is f(mu0)
  std::vector<std::pair<double, double>> step_sizes;  // (alpha_y, alpha_mu) per entry
  std::vector<double> elapsed_s;
  int iterations = 0;
  double wall_time_s = 0.0;
  bool stopped_by_window = false;
  int null_steps = 0;   // iterations where no candidate improved on mu^n
  long backtracks = 0;
  PowerAllocation final_mu;
  Vector per_user_se;
};

template <typename S, typename R>
double bb_step(const Eigen::MatrixBase<S>& s, const Eigen::MatrixBase<R>& r, BbRule rule, double fallback) {
  const double ss = s.squaredNorm();
  const double sr = (s.array() * r.array()).sum();
  const double rr = r.squaredNorm();
  const double step = rule == BbRule::Long ? (sr > 0.0 ? ss / sr : -1.0) : (rr > 0.0 ? sr / rr : -1.0);
  if (!std::isfinite(step) || !(step > 0.0)) return fallback;
  return step;
}

// t_{n+1} = (sqrt(4 t_n^2 + 1) + 1) / 2
inline double next_momentum(double t) { return 0.5 * (std::sqrt(4.0 * t * t + 1.0) + 1.0); }

namespace detail {

struct Point {
  PowerAllocation x;
  double f = 0.0;
  Matrix g;
};

// A projected gradient step with its objective, computed in the same sweep.
struct Candidate {
  PowerAllocation x;
  SinrTerms terms;
  double f = 0.0;
  double dist2 = 0.0;  // ||x - from||^2
};

// The loops below keep their points alive across iterations and rotate them
// with swaps. Fresh M x K temporaries each iteration cost page faults once
// they outgrow the allocator's reuse thresholds.
class Problem {
 public:
  Problem(const Coefficients& co, const UtilityKind& kind, const ApMask* mask)
      : co_(co), kind_(kind), mask_(mask) {}

  Point point(PowerAllocation x) const {
    Point p;
    p.x = std::move(x);
    evaluate(p);
    return p;
  }

  // f and grad f at p.x.
  void evaluate(Point& p) const { complete(p, sinr_terms(co_, p.x)); }

  // y = mu + (t_prev/t)(z - mu) + ((t_prev - 1)/t)(mu - mu_prev) with f and grad f.
  void extrapolate(const Point& mu, const Point& mu_prev, const Point& z, double t_prev, double t, Point& y) const {
    const double a = t_prev / t;
    const double b = (t_prev - 1.0) / t;
    y.x.resize(mu.x.rows(), mu.x.cols());
    SinrSums sums(co_);
    for (Eigen::Index r0 = 0; r0 < y.x.rows(); r0 += kRowBlock) {
      const Eigen::Index n = std::min(kRowBlock, y.x.rows() - r0);
      const auto m = mu.x.middleRows(r0, n);
      y.x.middleRows(r0, n) = m + a * (z.x.middleRows(r0, n) - m) + b * (m - mu_prev.x.middleRows(r0, n));
      sums.add_rows(co_, y.x, r0, n);
    }
    complete(y, terms_from_sums(co_, std::move(sums)));
  }

  // c = project(from + alpha grad f(from)) with f(c).
  void step(const Point& from, double alpha, Candidate& c) const {
    SinrSums sums(co_);
    c.dist2 = 0.0;
    project_blocks(from.x + alpha * from.g, co_.N, mask_, c.x, [&](Eigen::Index r0, Eigen::Index n) {
      sums.add_rows(co_, c.x, r0, n);
      c.dist2 += (c.x.middleRows(r0, n) - from.x.middleRows(r0, n)).squaredNorm();
    });
    c.terms = terms_from_sums(co_, std::move(sums));
    c.f = utility_from_se(kind_, se_from_terms(co_, c.terms));
  }

  // Makes p the candidate (swapping storage) and adds its gradient.
  void accept(Candidate& c, Point& p) const {
    p.x.swap(c.x);
    complete(p, c.terms);
  }

  const Coefficients& coefficients() const { return co_; }
  const UtilityKind& kind() const { return kind_; }

 private:
  void complete(Point& p, const SinrTerms& t) const {
    p.f = value_and_gradient_into(kind_, co_, p.x, t, p.g);
    if (mask_ != nullptr) p.g.array() = mask_->select(p.g.array(), 0.0);
  }

  const Coefficients& co_;
  const UtilityKind& kind_;
  const ApMask* mask_;
};

inline bool window_flat(const std::vector<double>& obj, const SolverOptions& opts) {
  const auto w = static_cast<std::size_t>(opts.stop_window);
  if (obj.size() < w + 1) return false;  // need stop_window iterations past mu0
  const auto first = obj.end() - static_cast<std::ptrdiff_t>(w);
  const auto [lo, hi] = std::minmax_element(first, obj.end());
  return *hi - *lo < opts.stop_tol;
}

inline void check_start(const Coefficients& co, const PowerAllocation& mu0) {
  if (mu0.rows() != co.M || mu0.cols() != co.K) throw std::invalid_argument("mu0 shape mismatch");
  if (!is_feasible(mu0, co.N, 1e-9)) throw std::invalid_argument("mu0 is not feasible");
}

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

inline void finish(SolverTrace& trace, const Problem& prob, const Point& mu, const Stopwatch& clock) {
  trace.final_mu = mu.x;
  trace.per_user_se = spectral_efficiency(prob.coefficients(), mu.x);
  trace.wall_time_s = clock.seconds();
}

}  // namespace detail

// Fixed step alpha0. With alpha0 below 1/L the plain step never decreases f;
// for larger steps a non-improving iteration keeps mu^n and counts a null step.
inline SolverTrace solve_apg(const Coefficients& co, const UtilityKind& kind, const SolverOptions& opts,
                             const PowerAllocation& mu0, const ApMask* mask = nullptr) {
  opts.validate();
  detail::check_start(co, mu0);
  const detail::Stopwatch clock;
  const detail::Problem prob(co, kind, mask);
  const double alpha = opts.alpha0;

  SolverTrace trace;
  detail::Point mu = prob.point(mask ? project(mu0, co.N, mask) : mu0);
  detail::Point mu_prev = mu;
  detail::Point z = mu;
  detail::Point y = mu;
  detail::Candidate z_next, v_next;
  double t_prev = 1.0;
  double t = 1.0;
  trace.objective_per_iter.push_back(mu.f);
  trace.step_sizes.emplace_back(0.0, 0.0);
  trace.elapsed_s.push_back(clock.seconds());
  if (opts.on_iterate) opts.on_iterate(0, mu.x);

  for (int n = 1; n <= opts.max_iter; ++n) {
    prob.extrapolate(mu, mu_prev, z, t_prev, t, y);
    prob.step(y, alpha, z_next);
    prob.step(mu, alpha, v_next);

    if (std::max(z_next.f, v_next.f) < mu.f) {
      ++trace.null_steps;
      mu_prev.x = mu.x;
    } else {
      mu_prev.x.swap(mu.x);
      if (z_next.f >= v_next.f) {
        prob.accept(z_next, mu);
        z_next.x = mu.x;
      } else {
        prob.accept(v_next, mu);
      }
    }
    z.x.swap(z_next.x);
    t_prev = t;
    t = next_momentum(t);

    trace.iterations = n;
    trace.objective_per_iter.push_back(mu.f);
    trace.step_sizes.emplace_back(alpha, alpha);
    trace.elapsed_s.push_back(clock.seconds());
    if (opts.on_iterate) opts.on_iterate(n, mu.x);
    if (detail::window_flat(trace.objective_per_iter, opts)) {
      trace.stopped_by_window = true;
      break;
    }
  }
  detail::finish(trace, prob, mu, clock);
  return trace;
}

inline SolverTrace solve_apg_ls(const Coefficients& co, const UtilityKind& kind, const SolverOptions& opts,
                                const PowerAllocation& mu0, const ApMask* mask = nullptr) {
  opts.validate();
  detail::check_start(co, mu0);
  const detail::Stopwatch clock;
  const detail::Problem prob(co, kind, mask);

  // Backtrack from `from` starting at alpha. Leaves the accepted candidate in
  // `out` and returns its step, or copies `fallback` and returns 0 when no step
  // passes and the alpha_min step would lose ground.
  detail::Candidate cand;
  auto search = [&](const detail::Point& from, double alpha, const detail::Point& fallback, detail::Point& out,
                    SolverTrace& trace) -> double {
    for (int j = 0; j <= opts.max_backtracks; ++j) {
      prob.step(from, alpha, cand);
      if (cand.f >= from.f + opts.delta * cand.dist2) {
        prob.accept(cand, out);
        return alpha;
      }
      alpha *= opts.rho;
      ++trace.backtracks;
    }
    prob.step(from, opts.alpha_min, cand);
    if (cand.f >= from.f) {
      prob.accept(cand, out);
      return opts.alpha_min;
    }
    out = fallback;
    return 0.0;
  };

  SolverTrace trace;
  detail::Point mu = prob.point(mask ? project(mu0, co.N, mask) : mu0);
  detail::Point mu_prev = mu;
  detail::Point z = mu;
  detail::Point v = mu;        // v^1 = mu^1
  detail::Point y_prev = mu;
  detail::Point y = mu, z_next = mu, v_next = mu;
  double t_prev = 1.0;
  double t = 1.0;
  trace.objective_per_iter.push_back(mu.f);
  trace.step_sizes.emplace_back(0.0, 0.0);
  trace.elapsed_s.push_back(clock.seconds());
  if (opts.on_iterate) opts.on_iterate(0, mu.x);

  for (int n = 1; n <= opts.max_iter; ++n) {
    prob.extrapolate(mu, mu_prev, z, t_prev, t, y);

    double alpha_y = opts.alpha0;
    double alpha_mu = opts.alpha0;
    if (n > 1) {
      // Curvature pairs for the minimization of -f: r = grad(-f)(new) - grad(-f)(old).
      alpha_y = bb_step(z.x - y_prev.x, y_prev.g - z.g, opts.bb_rule, opts.alpha0);
      alpha_mu = bb_step(v.x - mu_prev.x, mu_prev.g - v.g, opts.bb_rule, opts.alpha0);
    }

    const double used_mu = search(mu, alpha_mu, mu, v_next, trace);
    const double used_y = search(y, alpha_y, v_next, z_next, trace);

    const bool stalled = v_next.f <= mu.f && z_next.f <= mu.f;
    if (stalled) ++trace.null_steps;

    std::swap(y_prev, y);
    std::swap(mu_prev, mu);
    mu = z_next.f >= v_next.f ? z_next : v_next;
    std::swap(z, z_next);
    std::swap(v, v_next);
    t_prev = t;
    t = next_momentum(t);

    trace.iterations = n;
    trace.objective_per_iter.push_back(mu.f);
    trace.step_sizes.emplace_back(used_y, used_mu);
    trace.elapsed_s.push_back(clock.seconds());
    if (opts.on_iterate) opts.on_iterate(n, mu.x);
    if (detail::window_flat(trace.objective_per_iter, opts)) {
      trace.stopped_by_window = true;
      break;
    }
  }
  detail::finish(trace, prob, mu, clock);
  return trace;
}

// Equal power allocation: eta_mk = (N sum_i nu_mi)^-1, spending each AP's budget
// in proportion to estimate quality. With a mask the sum runs over selected users.
inline PowerAllocation epa_allocation(const Scenario& s, const ApMask* mask = nullptr) {
  PowerAllocation mu = PowerAllocation::Zero(s.M, s.K);
  for (int m = 0; m < s.M; ++m) {
    double row = 0.0;
    for (int k = 0; k < s.K; ++k)
      if (mask == nullptr || (*mask)(m, k)) row += s.nu(m, k);
    if (!(row > 0.0)) continue;  // AP without usable estimates stays silent
    const double eta = 1.0 / (static_cast<double>(s.N) * row);
    for (int k = 0; k < s.K; ++k)
      if (mask == nullptr || (*mask)(m, k)) mu(m, k) = std::sqrt(eta * s.nu(m, k));
  }
  return project(mu, s.N, mask);
}

// For each user, the `per_user_count` APs with the largest beta_mk. Ties go to the lower AP index.
inline ApMask select_aps(const Matrix& beta, int per_user_count) {
  const auto M = static_cast<int>(beta.rows());
  if (per_user_count < 1 || per_user_count > M) throw std::invalid_argument("select_aps: per_user_count must lie in [1, M]");
  ApMask mask = ApMask::Constant(beta.rows(), beta.cols(), false);
  std::vector<int> order(static_cast<std::size_t>(M));
  for (Eigen::Index k = 0; k < beta.cols(); ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return beta(a, k) > beta(b, k); });
    for (int j = 0; j < per_user_count; ++j) mask(order[static_cast<std::size_t>(j)], k) = true;
  }
  return mask;
}

inline SolverTrace solve_once(const Coefficients& co, const UtilityKind& kind, const SolverOptions& opts,
                              const PowerAllocation& mu0, const ApMask* mask = nullptr) {
  return opts.variant == StepVariant::FixedStep ? solve_apg(co, kind, opts, mu0, mask)
                                                : solve_apg_ls(co, kind, opts, mu0, mask);
}

// Runs opts.n_starts starts (the first from mu0, the rest from multiplicative
// perturbations of it) and keeps the best final objective.
inline SolverTrace solve(const Coefficients& co, const UtilityKind& kind, const SolverOptions& opts,
                         const PowerAllocation& mu0, const ApMask* mask = nullptr) {
  SolverTrace best = solve_once(co, kind, opts, mu0, mask);
  Rng rng(opts.seed);
  for (int s = 1; s < opts.n_starts; ++s) {
    PowerAllocation start = mu0;
    for (Eigen::Index j = 0; j < start.size(); ++j) start(j) *= rng.uniform(0.5, 1.5);
    SolverTrace trace = solve_once(co, kind, opts, project(start, co.N, mask), mask);
    if (trace.objective_per_iter.back() > best.objective_per_iter.back()) best = std::move(trace);
  }
  return best;
}

// Largest observed ||grad f(a) - grad f(b)|| / ||a - b|| over random pairs of
// feasible points. A lower estimate of the gradient's Lipschitz constant.
// Curvature peaks at sparse allocations and, for MRmax, where the smallest SEs
// nearly tie; that is where iterates end up. So half the segments start at a
// random point and half at iterates of a short line-search run.
inline double estimate_lipschitz(const Coefficients& co, const UtilityKind& kind, int samples, std::uint64_t seed) {
  Rng rng(seed);
  auto random_point = [&] {
    const double keep = rng.uniform(0.05, 1.0);
    PowerAllocation x(co.M, co.K);
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = rng.uniform() < keep ? rng.uniform() : 0.0;
    // Rows pushed out to the boundary or shrunk toward zero.
    for (Eigen::Index m = 0; m < x.rows(); ++m) x.row(m) *= rng.uniform() < 0.5 ? 10.0 : rng.uniform();
    return project(x, co.N);
  };

  std::vector<PowerAllocation> visited;
  SolverOptions probe;
  probe.max_iter = std::max(1, samples / 2);
  probe.on_iterate = [&](int, const PowerAllocation& mu) { visited.push_back(mu); };
  solve_apg_ls(co, kind, probe, random_point());

  double best = 0.0;
  for (int s = 0; s < samples; ++s) {
    const PowerAllocation a = s % 2 == 0 || visited.empty() ? random_point() : visited[rng.below(visited.size())];
    // Short segments probe local curvature, long ones the global spread.
    const double len = std::pow(10.0, -rng.uniform(0.0, 4.0));
    const PowerAllocation b = project(a + len * (random_point() - a), co.N);
    const double dist = (a - b).norm();
    if (!(dist > 0.0)) continue;
    best = std::max(best, (gradient(kind, co, a) - gradient(kind, co, b)).norm() / dist);
  }
  return best;
}

inline void write_trace_csv(const std::filesystem::path& path, const SolverTrace& trace) {
  auto out = io::open_out(path);
  out << "iter,objective,alpha_y,alpha_mu,elapsed_s\n";
  for (std::size_t n = 0; n < trace.objective_per_iter.size(); ++n)
    out << n << ',' << io::fmt_real(trace.objective_per_iter[n]) << ',' << io::fmt_real(trace.step_sizes[n].first)
        << ',' << io::fmt_real(trace.step_sizes[n].second) << ',' << io::fmt_real(trace.elapsed_s[n]) << '\n';
}

}  // namespace cfmimo
