#pragma once

// Network drops for a cell-free downlink: geometry, large-scale fading and
// the channel-estimate statistics that power control works from.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cfmimo/random.hpp"

namespace cfmimo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct RadioParams {
  double bandwidth_hz = 20e6;
  double noise_density_dbm_per_hz = -174.0;
  double noise_figure_db = 9.0;
  double tx_power_dl_w = 1.0;
  double tx_power_pilot_w = 0.2;
  int T_p = 20;  // pilot length, symbols
  int T_c = 200; // coherence interval, symbols

  void validate() const {
    if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("bandwidth_hz must be positive");
    if (!(tx_power_dl_w > 0.0) || !(tx_power_pilot_w > 0.0))
      throw std::invalid_argument("transmit powers must be positive");
    if (T_p < 1 || T_c < 1) throw std::invalid_argument("T_p and T_c must be positive");
    if (T_p >= T_c) throw std::invalid_argument("T_p must be smaller than T_c");
  }

  double prelog() const { return 1.0 - static_cast<double>(T_p) / static_cast<double>(T_c); }
};

// Three-slope path loss. Distances in km, L in dB.
struct PathLossParams {
  double L_db = 140.7;
  double d0_km = 0.01;
  double d1_km = 0.05;
  double sigma_sh_db = 8.0;

  void validate() const {
    if (!(d0_km > 0.0) || !(d1_km > 0.0)) throw std::invalid_argument("reference distances must be positive");
    if (!(d0_km < d1_km)) throw std::invalid_argument("d0_km must be smaller than d1_km");
    if (!(sigma_sh_db >= 0.0)) throw std::invalid_argument("sigma_sh_db must be nonnegative");
  }
};

struct Scenario {
  int M = 0;  // APs
  int K = 0;  // users
  int N = 1;  // antennas per AP
  double D_km = 1.0;
  Matrix ap_pos;    // M x 2, km
  Matrix user_pos;  // K x 2, km
  Matrix beta;        // M x K, linear
  Matrix pilot_gram;  // K x K, |psi_i^H psi_k|
  std::vector<int> pilot_of_user;
  Matrix nu;  // M x K, mean square of the channel estimate entries
  double zeta_d = 1.0;
  double zeta_p = 1.0;
  double prelog = 0.9;
  int T_p = 1;
  int T_c = 2;
  std::uint64_t seed = 0;
};

inline double path_loss_db(double d_km, const PathLossParams& p) {
  if (!(d_km > 0.0)) throw std::invalid_argument("path_loss_db: distance must be positive");
  if (d_km > p.d1_km) return -p.L_db - 35.0 * std::log10(d_km);
  if (d_km > p.d0_km) return -p.L_db - 15.0 * std::log10(p.d1_km) - 20.0 * std::log10(d_km);
  return -p.L_db - 15.0 * std::log10(p.d1_km) - 20.0 * std::log10(p.d0_km);
}

struct NormalizedSnrs {
  double zeta_d;
  double zeta_p;
};

inline double noise_power_w(const RadioParams& r) {
  const double dbm = r.noise_density_dbm_per_hz + 10.0 * std::log10(r.bandwidth_hz) + r.noise_figure_db;
  return std::pow(10.0, (dbm - 30.0) / 10.0);
}

inline NormalizedSnrs normalized_snrs(const RadioParams& r) {
  r.validate();
  const double noise = noise_power_w(r);
  return {r.tx_power_dl_w / noise, r.tx_power_pilot_w / noise};
}

struct PilotAssignment {
  std::vector<int> pilot_of_user;
  Matrix gram;
};

inline Matrix gram_from_assignment(const std::vector<int>& pilot_of_user) {
  const auto K = static_cast<Eigen::Index>(pilot_of_user.size());
  Matrix gram = Matrix::Zero(K, K);
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index k = 0; k < K; ++k)
      if (pilot_of_user[i] == pilot_of_user[k]) gram(i, k) = 1.0;
  return gram;
}

// Orthonormal pilots; distinct when K <= T_p, otherwise round-robin over a
// random permutation of the users.
inline PilotAssignment assign_pilots(int K, int T_p, std::uint64_t seed) {
  if (K < 1) throw std::invalid_argument("assign_pilots: K must be positive");
  if (T_p < 1) throw std::invalid_argument("assign_pilots: T_p must be positive");
  std::vector<int> pilot(static_cast<std::size_t>(K));
  if (K <= T_p) {
    for (int k = 0; k < K; ++k) pilot[static_cast<std::size_t>(k)] = k;
  } else {
    std::vector<int> order(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) order[static_cast<std::size_t>(k)] = k;
    Rng rng(seed);
    rng.shuffle(order);
    for (int j = 0; j < K; ++j) pilot[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = j % T_p;
  }
  Matrix gram = gram_from_assignment(pilot);
  return {std::move(pilot), std::move(gram)};
}

// nu_mk = zeta_p T_p beta_mk^2 / (1 + zeta_p T_p sum_i beta_mi gram_ik^2)
inline Matrix channel_stats(const Matrix& beta, const Matrix& pilot_gram, double zeta_p, int T_p) {
  if (pilot_gram.rows() != beta.cols() || pilot_gram.cols() != beta.cols())
    throw std::invalid_argument("channel_stats: pilot_gram must be K x K");
  const double snr = zeta_p * static_cast<double>(T_p);
  const Matrix contamination = beta * pilot_gram.cwiseAbs2();  // (m,k) -> sum_i beta_mi gram_ik^2
  Matrix nu(beta.rows(), beta.cols());
  for (Eigen::Index k = 0; k < beta.cols(); ++k)
    for (Eigen::Index m = 0; m < beta.rows(); ++m)
      nu(m, k) = snr * beta(m, k) * beta(m, k) / (1.0 + snr * contamination(m, k));
  return nu;
}

struct DropConfig {
  int M = 100;
  int K = 40;
  int N = 1;
  double D_km = 1.0;
  RadioParams radio;
  PathLossParams path_loss;
};

inline Scenario generate_drop(const DropConfig& cfg, std::uint64_t seed) {
  if (cfg.M < 1 || cfg.K < 1 || cfg.N < 1) throw std::invalid_argument("generate_drop: dimensions must be positive");
  if (!(cfg.D_km > 0.0)) throw std::invalid_argument("generate_drop: D_km must be positive");
  cfg.radio.validate();
  cfg.path_loss.validate();

  Scenario s;
  s.M = cfg.M;
  s.K = cfg.K;
  s.N = cfg.N;
  s.D_km = cfg.D_km;
  s.T_p = cfg.radio.T_p;
  s.T_c = cfg.radio.T_c;
  s.prelog = cfg.radio.prelog();
  s.seed = seed;
  const auto snrs = normalized_snrs(cfg.radio);
  s.zeta_d = snrs.zeta_d;
  s.zeta_p = snrs.zeta_p;

  Rng rng(seed);
  s.ap_pos.resize(cfg.M, 2);
  for (int m = 0; m < cfg.M; ++m) {
    s.ap_pos(m, 0) = rng.uniform(0.0, cfg.D_km);
    s.ap_pos(m, 1) = rng.uniform(0.0, cfg.D_km);
  }
  s.user_pos.resize(cfg.K, 2);
  for (int k = 0; k < cfg.K; ++k) {
    s.user_pos(k, 0) = rng.uniform(0.0, cfg.D_km);
    s.user_pos(k, 1) = rng.uniform(0.0, cfg.D_km);
  }
  auto pilots = assign_pilots(cfg.K, cfg.radio.T_p, rng.next_u64());
  s.pilot_of_user = std::move(pilots.pilot_of_user);
  s.pilot_gram = std::move(pilots.gram);

  s.beta.resize(cfg.M, cfg.K);
  for (int k = 0; k < cfg.K; ++k) {
    for (int m = 0; m < cfg.M; ++m) {
      const double dx = s.ap_pos(m, 0) - s.user_pos(k, 0);
      const double dy = s.ap_pos(m, 1) - s.user_pos(k, 1);
      // Co-located points fall into the constant branch below d0.
      const double d = std::max(std::hypot(dx, dy), 1e-9);
      const double shadow = cfg.path_loss.sigma_sh_db > 0.0 ? rng.normal(0.0, cfg.path_loss.sigma_sh_db) : 0.0;
      s.beta(m, k) = std::pow(10.0, (path_loss_db(d, cfg.path_loss) + shadow) / 10.0);
    }
  }
  s.nu = channel_stats(s.beta, s.pilot_gram, s.zeta_p, s.T_p);
  return s;
}

}  // namespace cfmimo
