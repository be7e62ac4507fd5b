#pragma once

// The four system utilities and their gradients with respect to mu.
//
//   SEmax  (1/K) sum_k SE_k
//   PFmax  sum_k log(eps + SE_k)
//   HRmax  K / sum_k (eps + SE_k)^-1
//   MRmax  -(1/tau) log((1/K) sum_k exp(-tau SE_k)), a smooth lower bound on min_k SE_k
//          within log(K)/tau
//
// Every gradient has the form sum_k w_k dSE_k/dmu with a utility-specific
// weight w_k = df/dSE_k, so a single fused pass over the SINR terms serves all four.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cfmimo/model.hpp"

namespace cfmimo {

enum class Utility { SEmax, PFmax, HRmax, MRmax };

inline constexpr Utility kAllUtilities[] = {Utility::SEmax, Utility::PFmax, Utility::HRmax, Utility::MRmax};

inline std::string_view to_string(Utility u) {
  switch (u) {
    case Utility::SEmax: return "SEmax";
    case Utility::PFmax: return "PFmax";
    case Utility::HRmax: return "HRmax";
    case Utility::MRmax: return "MRmax";
  }
  return "?";
}

inline Utility parse_utility(std::string_view s) {
  for (Utility u : kAllUtilities)
    if (to_string(u) == s) return u;
  throw std::invalid_argument("unknown utility '" + std::string(s) + "' (expected SEmax, PFmax, HRmax or MRmax)");
}

// Smoothing gap log(K)/tau is kept at 0.01 nat by default.
inline double default_tau(int K) { return K > 1 ? std::log(static_cast<double>(K)) / 0.01 : 100.0; }

struct UtilityKind {
  Utility kind = Utility::SEmax;
  double tau = 0.0;       // MRmax only; <= 0 means default_tau(K)
  double epsilon = 1e-6;  // PFmax / HRmax only

  double tau_for(int K) const { return tau > 0.0 ? tau : default_tau(K); }
};

class UnboundedGradient : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// dSE_k/dmu_i for every (k, i): result[k] is M x K with column i = dSE_k/dmu_i.
// Dense reference form; gradient() uses the fused path instead.
inline std::vector<Matrix> se_partials(const Coefficients& co, const PowerAllocation& mu) {
  const auto t = sinr_terms(co, mu);
  const double n0 = co.noise();
  const double inv_n = 1.0 / static_cast<double>(co.N);
  std::vector<Matrix> out(static_cast<std::size_t>(co.K), Matrix::Zero(co.M, co.K));
  for (int k = 0; k < co.K; ++k) {
    const double total = t.b(k) + t.c(k) + n0;
    const double interference = t.c(k) + n0;
    Matrix& d = out[static_cast<std::size_t>(k)];
    for (int i = 0; i < co.K; ++i) {
      Vector dc = 2.0 * co.zeta_d * inv_n * co.beta.col(k).cwiseProduct(mu.col(i));
      Vector db = Vector::Zero(co.M);
      if (i == k) {
        db = 2.0 * co.zeta_d * t.signal_inner(k) * co.nu_bar_diag.col(k);
      } else {
        const Vector w = co.nu_bar(i, k);
        dc += 2.0 * co.zeta_d * w.dot(mu.col(i)) * w;
      }
      d.col(i) = co.prelog * ((db + dc) / total - dc / interference);
    }
  }
  return out;
}

// Softmin weights exp(-tau SE_k) / sum_j exp(-tau SE_j), shifted by the minimum.
inline Vector softmin_weights(const Vector& se, double tau) {
  const double lo = se.minCoeff();
  Vector w = (-tau * (se.array() - lo)).exp().matrix();
  return w / w.sum();
}

// f_tau computed as min + (log K - log sum_k exp(-tau (SE_k - min))) / tau. The
// sum lies in [1, K], so min <= f_tau <= min + log(K)/tau holds in floating point.
inline double smoothed_min(const Vector& se, double tau) {
  const double lo = se.minCoeff();
  const double sum = (-tau * (se.array() - lo)).exp().sum();
  return lo + (std::log(static_cast<double>(se.size())) - std::log(sum)) / tau;
}

inline double utility_from_se(const UtilityKind& u, const Vector& se) {
  const auto K = static_cast<double>(se.size());
  switch (u.kind) {
    case Utility::SEmax: return se.sum() / K;
    case Utility::PFmax: return (u.epsilon + se.array()).log().sum();
    case Utility::HRmax: return K / (u.epsilon + se.array()).inverse().sum();
    case Utility::MRmax: return smoothed_min(se, u.tau_for(static_cast<int>(se.size())));
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline double evaluate(const UtilityKind& u, const Coefficients& co, const PowerAllocation& mu) {
  return utility_from_se(u, spectral_efficiency(co, mu));
}

// df/dSE_k for each user.
inline Vector utility_weights(const UtilityKind& u, const Vector& se) {
  const auto K = static_cast<double>(se.size());
  auto require_positive = [&](const char* name) {
    if (u.epsilon <= 0.0 && (se.array() <= 0.0).any())
      throw UnboundedGradient(std::string(name) + " gradient is unbounded: some SE_k is zero and epsilon = 0");
  };
  switch (u.kind) {
    case Utility::SEmax: return Vector::Constant(se.size(), 1.0 / K);
    case Utility::PFmax:
      require_positive("PFmax");
      return (u.epsilon + se.array()).inverse().matrix();
    case Utility::HRmax: {
      require_positive("HRmax");
      const auto inv = (u.epsilon + se.array()).inverse();
      const double h = inv.sum();
      return (K / (h * h) * inv.square()).matrix();
    }
    case Utility::MRmax: return softmin_weights(se, u.tau_for(static_cast<int>(se.size())));
  }
  return Vector::Zero(se.size());
}

struct ValueAndGradient {
  double value;
  Matrix gradient;
};

// Fused evaluation: one pass over the SINR terms gives f and grad f. Writes the
// gradient into g, reusing its storage when the shape already matches.
inline double value_and_gradient_into(const UtilityKind& u, const Coefficients& co, const PowerAllocation& mu,
                                      const SinrTerms& t, Matrix& g) {
  const double n0 = co.noise();
  const Vector se = se_from_terms(co, t);
  const Vector w = utility_weights(u, se);

  // dSE_k = prelog [ A_k db_k + (A_k - B_k) dc_k ],  A_k = 1/(b+c+n0), B_k = 1/(c+n0)
  Vector signal_coef(co.K);
  Vector interf_coef(co.K);
  for (int k = 0; k < co.K; ++k) {
    const double a = 1.0 / (t.b(k) + t.c(k) + n0);
    const double b = 1.0 / (t.c(k) + n0);
    signal_coef(k) = co.prelog * w(k) * a;
    interf_coef(k) = co.prelog * w(k) * (a - b);
  }

  const double two_zeta = 2.0 * co.zeta_d;
  // Beamforming-uncertainty part: (2 zeta/N) mu_i o sum_k q_k beta_k, shared by all i.
  const Vector beam_weight = (two_zeta / static_cast<double>(co.N)) * (co.beta * interf_coef);
  g.resize(co.M, co.K);
  // Column by column, so each column of g is written once while cached.
  for (int i = 0; i < co.K; ++i) {
    auto gi = g.col(i);
    gi = mu.col(i).cwiseProduct(beam_weight) + (signal_coef(i) * two_zeta * t.signal_inner(i)) * co.nu_bar_diag.col(i);
    for (std::size_t p : co.cross_by_interferer[static_cast<std::size_t>(i)]) {
      const auto& ct = co.cross[p];
      gi += (interf_coef(ct.receiver) * two_zeta * t.cross_inner(static_cast<Eigen::Index>(p))) * ct.weights;
    }
  }
  return utility_from_se(u, se);
}

inline ValueAndGradient value_and_gradient(const UtilityKind& u, const Coefficients& co, const PowerAllocation& mu) {
  ValueAndGradient out;
  out.value = value_and_gradient_into(u, co, mu, sinr_terms(co, mu), out.gradient);
  return out;
}

inline Matrix gradient(const UtilityKind& u, const Coefficients& co, const PowerAllocation& mu) {
  return value_and_gradient(u, co, mu).gradient;
}

}  // namespace cfmimo
