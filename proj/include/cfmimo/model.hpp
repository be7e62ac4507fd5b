#pragma once

// SINR and spectral efficiency in the mu-coordinates mu_mk = sqrt(eta_mk nu_mk).
//
// With conjugate beamforming the SINR of user k is
//
//   gamma_k = b_k / (c_k + 1/N^2)
//   b_k     = zeta_d (nubar_kk . mu_k)^2
//   c_k     = zeta_d ( sum_{i != k} (nubar_ik . mu_i)^2 + (1/N) sum_i sum_m beta_mk mu_mi^2 )
//
// where mu_i is column i of the M x K allocation. The beamforming-uncertainty
// term is weighted by the receiving user's gains beta_mk.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cfmimo/scenario.hpp"

namespace cfmimo {

// M x K, column k is the per-user vector, row m the per-AP vector.
using PowerAllocation = Matrix;

// nubar_ik for an interfering user i != k that shares pilot energy with k.
struct CrossTerm {
  int interferer;  // i
  int receiver;    // k
  Vector weights;  // nubar_ik, length M
};

struct Coefficients {
  int M = 0;
  int K = 0;
  int N = 1;
  double zeta_d = 1.0;
  double prelog = 1.0;
  Matrix nu_bar_diag;  // M x K, column k is nubar_kk = sqrt(nu_k)
  Matrix beta;         // M x K, column k is the squared diagonal of Dbar_k
  std::vector<CrossTerm> cross;  // only pairs with nonzero pilot Gram entry
  // cross indices grouped by receiver, cross_by_receiver[k] lists positions in `cross`.
  std::vector<std::vector<std::size_t>> cross_by_receiver;
  std::vector<std::vector<std::size_t>> cross_by_interferer;

  double noise() const { return 1.0 / (static_cast<double>(N) * static_cast<double>(N)); }

  // Dense nubar_ik; zero when users i and k have orthogonal pilots.
  Vector nu_bar(int i, int k) const {
    if (i == k) return nu_bar_diag.col(k);
    for (std::size_t idx : cross_by_receiver[static_cast<std::size_t>(k)])
      if (cross[idx].interferer == i) return cross[idx].weights;
    return Vector::Zero(M);
  }
};

inline Coefficients build_coefficients(const Scenario& s) {
  if (s.beta.rows() != s.M || s.beta.cols() != s.K || s.nu.rows() != s.M || s.nu.cols() != s.K)
    throw std::invalid_argument("build_coefficients: beta/nu shape mismatch");
  if (s.pilot_gram.rows() != s.K || s.pilot_gram.cols() != s.K)
    throw std::invalid_argument("build_coefficients: pilot_gram shape mismatch");
  if (s.N < 1) throw std::invalid_argument("build_coefficients: N must be positive");

  Coefficients c;
  c.M = s.M;
  c.K = s.K;
  c.N = s.N;
  c.zeta_d = s.zeta_d;
  c.prelog = s.prelog;
  c.beta = s.beta;
  c.nu_bar_diag = s.nu.cwiseSqrt();
  c.cross_by_receiver.resize(static_cast<std::size_t>(s.K));
  c.cross_by_interferer.resize(static_cast<std::size_t>(s.K));

  for (int k = 0; k < s.K; ++k) {
    for (int i = 0; i < s.K; ++i) {
      if (i == k) continue;
      const double g = s.pilot_gram(i, k);
      if (g == 0.0) continue;
      Vector w(s.M);
      for (int m = 0; m < s.M; ++m) {
        if (!(s.beta(m, i) > 0.0))
          throw std::invalid_argument("build_coefficients: zero beta in a contamination ratio (invalid scenario)");
        w(m) = g * std::sqrt(s.nu(m, i)) * (s.beta(m, k) / s.beta(m, i));
      }
      c.cross_by_receiver[static_cast<std::size_t>(k)].push_back(c.cross.size());
      c.cross_by_interferer[static_cast<std::size_t>(i)].push_back(c.cross.size());
      c.cross.push_back({i, k, std::move(w)});
    }
  }
  return c;
}

// Per-user signal and interference terms, shared by SINR, SE and gradients.
struct SinrTerms {
  Vector signal_inner;  // nubar_kk . mu_k
  Vector cross_inner;   // nubar_ik . mu_i, indexed like Coefficients::cross
  Vector b;             // b_k
  Vector c;             // c_k (without the 1/N^2 noise term)
};

// Squared row norms accumulated column by column (storage is column-major).
// Each row is summed in column order, so a single row gives the same bits.
inline Vector row_squared_norms(const Matrix& x) {
  Vector sq = Vector::Zero(x.rows());
  for (Eigen::Index k = 0; k < x.cols(); ++k) sq.array() += x.col(k).array().square();
  return sq;
}

// Everything below walks the AP rows in blocks of this many, so a caller that
// produces mu block by block can fold the sums in while the block is in cache.
inline constexpr Eigen::Index kRowBlock = 64;

namespace detail {

// Fixed summation order (four interleaved partial sums), independent of
// alignment, so any two callers summing the same block get the same bits.
inline double block_dot(const double* a, const double* b, Eigen::Index n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  Eigen::Index i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

// Inner products behind SinrTerms, before squaring.
struct SinrSums {
  Vector signal_inner;
  Vector cross_inner;
  Vector beam;  // sum_m beta_mk sum_i mu_mi^2

  explicit SinrSums(const Coefficients& co)
      : signal_inner(Vector::Zero(co.K)),
        cross_inner(Vector::Zero(static_cast<Eigen::Index>(co.cross.size()))),
        beam(Vector::Zero(co.K)) {}

  // Adds rows [r0, r0 + n) of mu, n <= kRowBlock.
  void add_rows(const Coefficients& co, const PowerAllocation& mu, Eigen::Index r0, Eigen::Index n) {
    const Eigen::Index M = mu.rows();
    double row_power[kRowBlock] = {};
    for (Eigen::Index k = 0; k < mu.cols(); ++k) {
      const double* x = mu.data() + k * M + r0;
      for (Eigen::Index m = 0; m < n; ++m) row_power[m] += x[m] * x[m];
      signal_inner(k) += detail::block_dot(co.nu_bar_diag.data() + k * M + r0, x, n);
    }
    for (Eigen::Index k = 0; k < mu.cols(); ++k) beam(k) += detail::block_dot(co.beta.data() + k * M + r0, row_power, n);
    for (std::size_t p = 0; p < co.cross.size(); ++p) {
      const double* x = mu.data() + co.cross[p].interferer * M + r0;
      cross_inner(static_cast<Eigen::Index>(p)) += detail::block_dot(co.cross[p].weights.data() + r0, x, n);
    }
  }
};

inline SinrTerms terms_from_sums(const Coefficients& co, SinrSums sums) {
  const double inv_n = 1.0 / static_cast<double>(co.N);
  SinrTerms t;
  t.b = co.zeta_d * sums.signal_inner.cwiseAbs2();
  t.c.resize(co.K);
  for (int k = 0; k < co.K; ++k) {
    double inter = 0.0;
    for (std::size_t p : co.cross_by_receiver[static_cast<std::size_t>(k)]) {
      const double v = sums.cross_inner(static_cast<Eigen::Index>(p));
      inter += v * v;
    }
    t.c(k) = co.zeta_d * (inter + inv_n * sums.beam(k));
  }
  t.signal_inner = std::move(sums.signal_inner);
  t.cross_inner = std::move(sums.cross_inner);
  return t;
}

inline SinrTerms sinr_terms(const Coefficients& co, const PowerAllocation& mu) {
  if (mu.rows() != co.M || mu.cols() != co.K) throw std::invalid_argument("allocation shape mismatch");
  SinrSums sums(co);
  for (Eigen::Index r0 = 0; r0 < mu.rows(); r0 += kRowBlock) sums.add_rows(co, mu, r0, std::min(kRowBlock, mu.rows() - r0));
  return terms_from_sums(co, std::move(sums));
}

inline Vector sinr(const Coefficients& co, const PowerAllocation& mu) {
  const auto t = sinr_terms(co, mu);
  return (t.b.array() / (t.c.array() + co.noise())).matrix();
}

// Natural-log units (nat/s/Hz).
inline Vector se_from_terms(const Coefficients& co, const SinrTerms& t) {
  return (co.prelog * (t.b.array() / (t.c.array() + co.noise())).log1p()).matrix();
}

inline Vector spectral_efficiency(const Coefficients& co, const PowerAllocation& mu) {
  return se_from_terms(co, sinr_terms(co, mu));
}

inline double total_se(const Coefficients& co, const PowerAllocation& mu) {
  return spectral_efficiency(co, mu).sum();
}

inline constexpr double kNatsToBits = 1.4426950408889634;  // 1 / ln 2

}  // namespace cfmimo
