#pragma once

// Config-driven experiment runner.
//
// Config files are INI-style (sections, key = value). Unknown sections or keys
// are rejected so a typo never silently falls back to a default. Outputs are
// plain CSV:
//
//   results.csv   drop,seed,kind,user,se_bits_hz,min_se,total_se,iters,wall_s
//   summary.csv   one row per (sweep point, kind) for sweep experiments
//   meta.txt      the fully resolved config
//   trace_<drop>_<kind>.csv, cdf_<kind>.csv, timing.csv depending on the type

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cfmimo/model.hpp"
#include "cfmimo/objectives.hpp"
#include "cfmimo/scenario.hpp"
#include "cfmimo/scenario_io.hpp"
#include "cfmimo/solver.hpp"

namespace cfmimo {

enum class ExperimentType { Convergence, ApDensitySweep, Cdf, AvgSeVsM, ApSelectionSweep, AntennasSweep, Timing };

inline const std::map<std::string, ExperimentType>& experiment_names() {
  static const std::map<std::string, ExperimentType> names = {
      {"convergence", ExperimentType::Convergence},   {"ap_density_sweep", ExperimentType::ApDensitySweep},
      {"cdf", ExperimentType::Cdf},                   {"avg_se_vs_M", ExperimentType::AvgSeVsM},
      {"ap_selection_sweep", ExperimentType::ApSelectionSweep}, {"antennas_sweep", ExperimentType::AntennasSweep},
      {"timing", ExperimentType::Timing}};
  return names;
}

inline std::string to_string(ExperimentType t) {
  for (const auto& [name, type] : experiment_names())
    if (type == t) return name;
  return "?";
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  ExperimentType experiment = ExperimentType::Cdf;
  DropConfig scenario;
  std::vector<Utility> kinds = {Utility::SEmax, Utility::PFmax, Utility::HRmax, Utility::MRmax};
  double tau = 0.0;  // <= 0: default_tau(K)
  double epsilon = 1e-6;
  SolverOptions solver;
  int n_drops = 1;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  int workers = 0;  // 0: hardware concurrency
  bool per_drop_cdf = false;
  bool include_epa = false;
  bool save_allocations = false;
  bool save_scenarios = false;
  bool reproducible = false;  // wall_s written as 0 so reruns are byte-identical

  std::vector<double> densities = {100, 200, 400, 600, 800, 1000};  // APs per km^2
  std::vector<double> areas_km = {1.0, 10.0};
  std::vector<int> ap_counts = {200, 400, 800, 1600};
  std::vector<int> per_user_counts = {10, 25, 50, 100, 200, 500};
  std::vector<int> antennas = {1, 2, 4, 8};
  int timing_iterations = 100;
  int timing_repeats = 7;
  bool timing_full_solve = true;

  UtilityKind utility(Utility u) const { return {u, tau, epsilon}; }

  void validate() const {
    if (n_drops < 1) throw ConfigError("n_drops must be at least 1");
    if (kinds.empty()) throw ConfigError("kinds must list at least one utility");
    if (scenario.M < 1 || scenario.K < 1 || scenario.N < 1) throw ConfigError("M, K and N must be positive");
    if (!(scenario.D_km > 0.0)) throw ConfigError("D_km must be positive");
    if (timing_iterations < 1 || timing_repeats < 1) throw ConfigError("timing_iterations and timing_repeats must be positive");
    if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be nonnegative");
    try {
      scenario.radio.validate();
      scenario.path_loss.validate();
      solver.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

template <typename T>
T parse_scalar(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("bad value for '" + key + "': '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (auto item : io::split(text, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    out.push_back(parse_scalar<T>(key, item));
  }
  if (out.empty()) throw ConfigError("empty list for '" + key + "'");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    if constexpr (std::is_floating_point_v<T>)
      out << io::fmt_real(v[i]);
    else
      out << v[i];
  }
  return out.str();
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }

  ExperimentConfig cfg;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto real = [](double& dst) -> Setter { return [&dst](const auto& k, const auto& v) { dst = detail::parse_scalar<double>(k, v); }; };
  auto integer = [](int& dst) -> Setter { return [&dst](const auto& k, const auto& v) { dst = detail::parse_scalar<int>(k, v); }; };
  auto boolean = [](bool& dst) -> Setter { return [&dst](const auto& k, const auto& v) { dst = detail::parse_bool(k, v); }; };

  auto& sc = cfg.scenario;
  auto& so = cfg.solver;
  const std::map<std::string, std::map<std::string, Setter>> schema = {
      {"experiment",
       {{"type",
         [&](const auto& k, const auto& v) {
           const auto it = experiment_names().find(v);
           if (it == experiment_names().end()) throw ConfigError("unknown experiment type for '" + k + "': '" + v + "'");
           cfg.experiment = it->second;
         }},
        {"n_drops", integer(cfg.n_drops)},
        {"seed", [&](const auto& k, const auto& v) { cfg.seed = detail::parse_scalar<std::uint64_t>(k, v); }},
        {"output_dir", [&](const auto&, const auto& v) { cfg.output_dir = v; }},
        {"workers", integer(cfg.workers)},
        {"kinds",
         [&](const auto& k, const auto& v) {
           cfg.kinds.clear();
           for (const auto& name : detail::parse_list<std::string>(k, v)) {
             try {
               cfg.kinds.push_back(parse_utility(name));
             } catch (const std::invalid_argument& e) {
               throw ConfigError(e.what());
             }
           }
         }},
        {"per_drop_cdf", boolean(cfg.per_drop_cdf)},
        {"include_epa", boolean(cfg.include_epa)},
        {"save_allocations", boolean(cfg.save_allocations)},
        {"save_scenarios", boolean(cfg.save_scenarios)},
        {"reproducible", boolean(cfg.reproducible)}}},
      {"scenario",
       {{"M", integer(sc.M)},
        {"K", integer(sc.K)},
        {"N", integer(sc.N)},
        {"D_km", real(sc.D_km)},
        {"bandwidth_hz", real(sc.radio.bandwidth_hz)},
        {"noise_density_dbm_per_hz", real(sc.radio.noise_density_dbm_per_hz)},
        {"noise_figure_db", real(sc.radio.noise_figure_db)},
        {"tx_power_dl_w", real(sc.radio.tx_power_dl_w)},
        {"tx_power_pilot_w", real(sc.radio.tx_power_pilot_w)},
        {"T_p", integer(sc.radio.T_p)},
        {"T_c", integer(sc.radio.T_c)},
        {"L_db", real(sc.path_loss.L_db)},
        {"d0_km", real(sc.path_loss.d0_km)},
        {"d1_km", real(sc.path_loss.d1_km)},
        {"sigma_sh_db", real(sc.path_loss.sigma_sh_db)}}},
      {"objective", {{"tau", real(cfg.tau)}, {"epsilon", real(cfg.epsilon)}}},
      {"solver",
       {{"variant",
         [&](const auto& k, const auto& v) {
           if (v == "fixed") so.variant = StepVariant::FixedStep;
           else if (v == "linesearch") so.variant = StepVariant::LineSearch;
           else throw ConfigError("bad value for '" + k + "': expected fixed or linesearch");
         }},
        {"alpha0", real(so.alpha0)},
        {"delta", real(so.delta)},
        {"rho", real(so.rho)},
        {"max_iter", integer(so.max_iter)},
        {"stop_window", integer(so.stop_window)},
        {"stop_tol", real(so.stop_tol)},
        {"max_backtracks", integer(so.max_backtracks)},
        {"alpha_min", real(so.alpha_min)},
        {"bb_rule",
         [&](const auto& k, const auto& v) {
           if (v == "1" || v == "long") so.bb_rule = BbRule::Long;
           else if (v == "2" || v == "short") so.bb_rule = BbRule::Short;
           else throw ConfigError("bad value for '" + k + "': expected 1 or 2");
         }},
        {"n_starts", integer(so.n_starts)}}},
      {"sweep",
       {{"densities", [&](const auto& k, const auto& v) { cfg.densities = detail::parse_list<double>(k, v); }},
        {"areas_km", [&](const auto& k, const auto& v) { cfg.areas_km = detail::parse_list<double>(k, v); }},
        {"ap_counts", [&](const auto& k, const auto& v) { cfg.ap_counts = detail::parse_list<int>(k, v); }},
        {"per_user_counts", [&](const auto& k, const auto& v) { cfg.per_user_counts = detail::parse_list<int>(k, v); }},
        {"antennas", [&](const auto& k, const auto& v) { cfg.antennas = detail::parse_list<int>(k, v); }},
        {"timing_iterations", integer(cfg.timing_iterations)},
        {"timing_repeats", integer(cfg.timing_repeats)},
        {"timing_full_solve", boolean(cfg.timing_full_solve)}}},
  };

  for (const auto& [section, body] : tree) {
    const auto sec = schema.find(section);
    if (sec == schema.end()) {
      if (body.empty()) throw ConfigError("key '" + section + "' must appear inside a [section]");
      throw ConfigError("unknown config section [" + section + "]");
    }
    for (const auto& [key, node] : body) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw ConfigError("unknown config key '" + key + "' in [" + section + "]");
      setter->second(section + "." + key, node.get_value<std::string>());
    }
  }
  cfg.solver.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  return parse_experiment_config(in);
}

// The resolved config in the same INI dialect the parser accepts.
inline std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  std::vector<std::string> kinds;
  for (Utility u : c.kinds) kinds.emplace_back(to_string(u));
  const auto& r = c.scenario.radio;
  const auto& p = c.scenario.path_loss;
  const auto& s = c.solver;
  o << "[experiment]\n"
    << "type=" << to_string(c.experiment) << "\nn_drops=" << c.n_drops << "\nseed=" << c.seed
    << "\noutput_dir=" << c.output_dir.string() << "\nworkers=" << c.workers << "\nkinds=" << detail::join(kinds)
    << "\nper_drop_cdf=" << c.per_drop_cdf << "\ninclude_epa=" << c.include_epa
    << "\nsave_allocations=" << c.save_allocations << "\nsave_scenarios=" << c.save_scenarios
    << "\nreproducible=" << c.reproducible << "\n\n[scenario]\n"
    << "M=" << c.scenario.M << "\nK=" << c.scenario.K << "\nN=" << c.scenario.N
    << "\nD_km=" << io::fmt_real(c.scenario.D_km) << "\nbandwidth_hz=" << io::fmt_real(r.bandwidth_hz)
    << "\nnoise_density_dbm_per_hz=" << io::fmt_real(r.noise_density_dbm_per_hz)
    << "\nnoise_figure_db=" << io::fmt_real(r.noise_figure_db) << "\ntx_power_dl_w=" << io::fmt_real(r.tx_power_dl_w)
    << "\ntx_power_pilot_w=" << io::fmt_real(r.tx_power_pilot_w) << "\nT_p=" << r.T_p << "\nT_c=" << r.T_c
    << "\nL_db=" << io::fmt_real(p.L_db) << "\nd0_km=" << io::fmt_real(p.d0_km) << "\nd1_km=" << io::fmt_real(p.d1_km)
    << "\nsigma_sh_db=" << io::fmt_real(p.sigma_sh_db) << "\n\n[objective]\n"
    << "tau=" << io::fmt_real(c.tau > 0.0 ? c.tau : default_tau(c.scenario.K)) << "\nepsilon=" << io::fmt_real(c.epsilon)
    << "\n\n[solver]\n"
    << "variant=" << (s.variant == StepVariant::FixedStep ? "fixed" : "linesearch") << "\nalpha0=" << io::fmt_real(s.alpha0)
    << "\ndelta=" << io::fmt_real(s.delta) << "\nrho=" << io::fmt_real(s.rho) << "\nmax_iter=" << s.max_iter
    << "\nstop_window=" << s.stop_window << "\nstop_tol=" << io::fmt_real(s.stop_tol)
    << "\nmax_backtracks=" << s.max_backtracks << "\nalpha_min=" << io::fmt_real(s.alpha_min)
    << "\nbb_rule=" << (s.bb_rule == BbRule::Long ? 1 : 2) << "\nn_starts=" << s.n_starts << "\n\n[sweep]\n"
    << "densities=" << detail::join(c.densities) << "\nareas_km=" << detail::join(c.areas_km)
    << "\nap_counts=" << detail::join(c.ap_counts) << "\nper_user_counts=" << detail::join(c.per_user_counts)
    << "\nantennas=" << detail::join(c.antennas) << "\ntiming_iterations=" << c.timing_iterations
    << "\ntiming_repeats=" << c.timing_repeats << "\ntiming_full_solve=" << c.timing_full_solve << '\n';
  return o.str();
}

// ---------------------------------------------------------------------------
// Statistics

struct CdfStats {
  double median = 0.0;
  double p5 = 0.0;
  double p95 = 0.0;
  std::vector<std::pair<double, double>> cdf;  // (value, cumulative fraction), sorted
};

// Linear interpolation between order statistics at position q (n - 1).
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline CdfStats cdf_stats(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("cdf_stats: empty sample");
  std::sort(samples.begin(), samples.end());
  CdfStats s;
  s.median = percentile_sorted(samples, 0.5);
  s.p5 = percentile_sorted(samples, 0.05);
  s.p95 = percentile_sorted(samples, 0.95);
  const auto n = static_cast<double>(samples.size());
  s.cdf.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) s.cdf.emplace_back(samples[i], static_cast<double>(i + 1) / n);
  return s;
}

// ---------------------------------------------------------------------------
// Per-drop solves

struct KindResult {
  std::string kind;  // utility name or "EPA"
  Vector se_nats;
  int iters = 0;
  double wall_s = 0.0;
  PowerAllocation final_mu;
  SolverTrace trace;
};

struct DropResult {
  int drop = 0;
  std::uint64_t seed = 0;
  Scenario scenario;
  std::vector<KindResult> kinds;
};

inline std::uint64_t drop_seed(const ExperimentConfig& cfg, int drop) {
  return mix_seed(cfg.seed, static_cast<std::uint64_t>(drop));
}

// Solves every configured utility on one drop, starting from EPA.
inline DropResult solve_drop(const ExperimentConfig& cfg, const DropConfig& dc, int drop, int per_user_aps = 0) {
  DropResult out;
  out.drop = drop;
  out.seed = drop_seed(cfg, drop);
  out.scenario = generate_drop(dc, out.seed);
  const Coefficients co = build_coefficients(out.scenario);

  std::optional<ApMask> mask;
  if (per_user_aps > 0) mask = select_aps(out.scenario.beta, std::min(per_user_aps, dc.M));
  const ApMask* mask_ptr = mask ? &*mask : nullptr;
  const PowerAllocation mu0 = epa_allocation(out.scenario, mask_ptr);

  if (cfg.include_epa) {
    KindResult r;
    r.kind = "EPA";
    r.se_nats = spectral_efficiency(co, mu0);
    r.final_mu = mu0;
    out.kinds.push_back(std::move(r));
  }
  for (Utility u : cfg.kinds) {
    SolverOptions opts = cfg.solver;
    opts.seed = mix_seed(out.seed, static_cast<std::uint64_t>(u));
    SolverTrace trace = solve(co, cfg.utility(u), opts, mu0, mask_ptr);
    KindResult r;
    r.kind = std::string(to_string(u));
    r.se_nats = trace.per_user_se;
    r.iters = trace.iterations;
    r.wall_s = trace.wall_time_s;
    r.final_mu = trace.final_mu;
    r.trace = std::move(trace);
    out.kinds.push_back(std::move(r));
  }
  return out;
}

// Runs `task(i)` for i in [0, n) on a small worker pool; results land in slot i.
template <typename T, typename Fn>
std::vector<T> parallel_map(int n, int workers, Fn task) {
  std::vector<T> results(static_cast<std::size_t>(n));
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, n);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        results[static_cast<std::size_t>(i)] = task(i);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

inline void write_results_csv(const std::filesystem::path& path, const std::vector<DropResult>& drops, bool reproducible) {
  auto out = io::open_out(path);
  out << "drop,seed,kind,user,se_bits_hz,min_se,total_se,iters,wall_s\n";
  for (const auto& d : drops) {
    for (const auto& r : d.kinds) {
      const Vector bits = r.se_nats * kNatsToBits;
      const double lo = bits.minCoeff();
      const double total = bits.sum();
      for (Eigen::Index k = 0; k < bits.size(); ++k)
        out << d.drop << ',' << d.seed << ',' << r.kind << ',' << k << ',' << io::fmt_real(bits(k)) << ','
            << io::fmt_real(lo) << ',' << io::fmt_real(total) << ',' << r.iters << ','
            << io::fmt_real(reproducible ? 0.0 : r.wall_s) << '\n';
    }
  }
}

inline void write_drop_artifacts(const ExperimentConfig& cfg, const std::filesystem::path& dir, const std::vector<DropResult>& drops,
                                 bool traces) {
  for (const auto& d : drops) {
    if (cfg.save_scenarios) write_scenario_bundle(d.scenario, dir / ("scenario_" + std::to_string(d.drop)));
    for (const auto& r : d.kinds) {
      const std::string tag = std::to_string(d.drop) + "_" + r.kind;
      if (cfg.save_allocations) io::write_matrix_csv(dir / ("mu_" + tag + ".csv"), r.final_mu);
      if (traces && r.kind != "EPA") write_trace_csv(dir / ("trace_" + tag + ".csv"), r.trace);
    }
  }
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepPoint {
  std::string label;
  DropConfig scenario;
  double density = 0.0;
  int per_user_aps = 0;
};

struct SummaryRow {
  std::string point;
  double D_km;
  int M, K, N, per_user_aps;
  std::string kind;
  double mean_total_se, mean_min_se, mean_avg_se, p5_se, median_se;  // bits/s/Hz
};

inline std::vector<SummaryRow> summarize(const SweepPoint& p, const std::vector<DropResult>& drops) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const KindResult*>> by_kind;
  for (const auto& d : drops)
    for (const auto& r : d.kinds) {
      if (!by_kind.count(r.kind)) order.push_back(r.kind);
      by_kind[r.kind].push_back(&r);
    }
  std::vector<SummaryRow> rows;
  for (const auto& kind : order) {
    const auto& rs = by_kind[kind];
    double total = 0.0, lo = 0.0, avg = 0.0;
    std::vector<double> pooled;
    for (const KindResult* r : rs) {
      const Vector bits = r->se_nats * kNatsToBits;
      total += bits.sum();
      lo += bits.minCoeff();
      avg += bits.mean();
      pooled.insert(pooled.end(), bits.data(), bits.data() + bits.size());
    }
    const auto n = static_cast<double>(rs.size());
    const auto stats = cdf_stats(pooled);
    rows.push_back({p.label, p.scenario.D_km, p.scenario.M, p.scenario.K, p.scenario.N, p.per_user_aps, kind, total / n,
                    lo / n, avg / n, stats.p5, stats.median});
  }
  return rows;
}

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  auto out = io::open_out(path);
  out << "point,D_km,M,K,N,per_user_aps,kind,mean_total_se,mean_min_se,mean_avg_se,p5_se,median_se\n";
  for (const auto& r : rows)
    out << r.point << ',' << io::fmt_real(r.D_km) << ',' << r.M << ',' << r.K << ',' << r.N << ',' << r.per_user_aps << ','
        << r.kind << ',' << io::fmt_real(r.mean_total_se) << ',' << io::fmt_real(r.mean_min_se) << ','
        << io::fmt_real(r.mean_avg_se) << ',' << io::fmt_real(r.p5_se) << ',' << io::fmt_real(r.median_se) << '\n';
}

inline std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg) {
  std::vector<SweepPoint> pts;
  switch (cfg.experiment) {
    case ExperimentType::ApDensitySweep:
      for (double D : cfg.areas_km)
        for (double rho : cfg.densities) {
          SweepPoint p{"", cfg.scenario, rho, 0};
          p.scenario.D_km = D;
          p.scenario.M = std::max(1, static_cast<int>(std::lround(rho * D * D)));
          p.label = "D" + io::fmt_real(D) + "_density" + io::fmt_real(rho);
          pts.push_back(std::move(p));
        }
      break;
    case ExperimentType::AvgSeVsM:
      for (int M : cfg.ap_counts) {
        SweepPoint p{"M" + std::to_string(M), cfg.scenario, 0.0, 0};
        p.scenario.M = M;
        pts.push_back(std::move(p));
      }
      break;
    case ExperimentType::ApSelectionSweep:
      for (int c : cfg.per_user_counts) {
        if (c < 1 || c > cfg.scenario.M) throw ConfigError("per_user_counts entries must lie in [1, M]");
        pts.push_back({"aps" + std::to_string(c), cfg.scenario, 0.0, c});
      }
      break;
    case ExperimentType::AntennasSweep:
      for (int N : cfg.antennas) {
        if (N < 1) throw ConfigError("antennas entries must be positive");
        SweepPoint p{"N" + std::to_string(N), cfg.scenario, 0.0, 0};
        p.scenario.N = N;
        pts.push_back(std::move(p));
      }
      break;
    default:
      break;
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Timing

struct TimingRow {
  int M = 0;
  int K = 0;
  double per_iter_s = 0.0;
  double ratio = 0.0;  // vs previous M, 0 for the first row
  bool within_band = true;
  double full_solve_s = 0.0;
  int full_solve_iters = 0;
};

inline constexpr double kTimingRatioLow = 1.5;
inline constexpr double kTimingRatioHigh = 2.8;

// Per-iteration cost of the SEmax iteration over the configured AP counts.
// Uses the fixed-step iteration (constant work per iteration) with the stopping
// rule disabled. Each repeat runs every size back to back, so neighbouring sizes
// see the same machine state; the ratio is the median of the per-repeat ratios
// and the reported time the median per size.
inline std::vector<TimingRow> timing_benchmark(const ExperimentConfig& cfg) {
  const UtilityKind se{Utility::SEmax, cfg.tau, cfg.epsilon};
  struct Instance {
    Scenario s;
    Coefficients co;
    PowerAllocation mu0;
  };
  std::vector<Instance> inst;
  for (int M : cfg.ap_counts) {
    DropConfig dc = cfg.scenario;
    dc.M = M;
    Scenario s = generate_drop(dc, drop_seed(cfg, 0));
    Coefficients co = build_coefficients(s);
    PowerAllocation mu0 = epa_allocation(s);
    inst.push_back({std::move(s), std::move(co), std::move(mu0)});
  }

  SolverOptions fixed = cfg.solver;
  fixed.variant = StepVariant::FixedStep;
  fixed.alpha0 = 1e-6;
  fixed.max_iter = cfg.timing_iterations;
  fixed.stop_tol = 0.0;
  fixed.n_starts = 1;
  std::vector<std::vector<double>> per_iter(inst.size());
  for (int r = 0; r < cfg.timing_repeats; ++r)
    for (std::size_t j = 0; j < inst.size(); ++j) {
      const auto trace = solve_apg(inst[j].co, se, fixed, inst[j].mu0);
      per_iter[j].push_back(trace.wall_time_s / trace.iterations);
    }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  };

  std::vector<TimingRow> rows;
  for (std::size_t j = 0; j < inst.size(); ++j) {
    TimingRow row;
    row.M = inst[j].s.M;
    row.K = inst[j].s.K;
    row.per_iter_s = median(per_iter[j]);
    if (!rows.empty()) {
      std::vector<double> ratios;
      for (std::size_t r = 0; r < per_iter[j].size(); ++r) ratios.push_back(per_iter[j][r] / per_iter[j - 1][r]);
      row.ratio = median(ratios);
      // The band applies per doubling of M.
      const double doublings = std::log2(static_cast<double>(row.M) / rows.back().M);
      const double per_doubling = doublings > 0.0 ? std::pow(row.ratio, 1.0 / doublings) : row.ratio;
      row.within_band = per_doubling >= kTimingRatioLow && per_doubling <= kTimingRatioHigh;
    }
    if (cfg.timing_full_solve) {
      SolverOptions ls = cfg.solver;
      ls.variant = StepVariant::LineSearch;
      const auto trace = solve(inst[j].co, se, ls, inst[j].mu0);
      row.full_solve_s = trace.wall_time_s;
      row.full_solve_iters = trace.iterations;
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_timing_csv(const std::filesystem::path& path, const std::vector<TimingRow>& rows) {
  auto out = io::open_out(path);
  out << "M,K,per_iter_s,ratio_vs_prev,within_band,full_solve_s,full_solve_iters\n";
  for (const auto& r : rows)
    out << r.M << ',' << r.K << ',' << io::fmt_real(r.per_iter_s) << ',' << io::fmt_real(r.ratio) << ','
        << (r.within_band ? 1 : 0) << ',' << io::fmt_real(r.full_solve_s) << ',' << r.full_solve_iters << '\n';
}

// ---------------------------------------------------------------------------

struct ExperimentReport {
  std::vector<DropResult> drops;        // single-point experiments
  std::vector<SummaryRow> summary;      // sweeps
  std::vector<TimingRow> timing;
  std::map<std::string, CdfStats> cdf;  // per kind, pooled
};

inline std::vector<DropResult> run_point(const ExperimentConfig& cfg, const DropConfig& dc, int per_user_aps) {
  return parallel_map<DropResult>(cfg.n_drops, cfg.workers,
                                  [&](int d) { return solve_drop(cfg, dc, d, per_user_aps); });
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output dir " + dir.string() + ": " + ec.message());
  {
    auto meta = io::open_out(dir / "meta.txt");
    meta << config_to_text(cfg);
  }

  ExperimentReport rep;
  switch (cfg.experiment) {
    case ExperimentType::Timing: {
      rep.timing = timing_benchmark(cfg);
      write_timing_csv(dir / "timing.csv", rep.timing);
      break;
    }
    case ExperimentType::Convergence:
    case ExperimentType::Cdf: {
      rep.drops = run_point(cfg, cfg.scenario, 0);
      write_results_csv(dir / "results.csv", rep.drops, cfg.reproducible);
      write_drop_artifacts(cfg, dir, rep.drops, cfg.experiment == ExperimentType::Convergence);
      if (!cfg.reproducible) {
        auto t = io::open_out(dir / "timings.csv");
        t << "drop,kind,iters,wall_s\n";
        for (const auto& d : rep.drops)
          for (const auto& r : d.kinds) t << d.drop << ',' << r.kind << ',' << r.iters << ',' << io::fmt_real(r.wall_s) << '\n';
      }
      if (cfg.experiment == ExperimentType::Cdf) {
        std::map<std::string, std::vector<double>> pooled;
        for (const auto& d : rep.drops)
          for (const auto& r : d.kinds) {
            const Vector bits = r.se_nats * kNatsToBits;
            auto& dst = pooled[r.kind];
            dst.insert(dst.end(), bits.data(), bits.data() + bits.size());
            if (cfg.per_drop_cdf) {
              auto out = io::open_out(dir / ("cdf_" + r.kind + "_drop" + std::to_string(d.drop) + ".csv"));
              out << "se_bits_hz,fraction\n";
              for (const auto& [v, f] : cdf_stats(std::vector<double>(bits.data(), bits.data() + bits.size())).cdf)
                out << io::fmt_real(v) << ',' << io::fmt_real(f) << '\n';
            }
          }
        auto summary = io::open_out(dir / "cdf_summary.csv");
        summary << "kind,median,p5,p95,spread\n";
        for (const auto& [kind, samples] : pooled) {
          auto stats = cdf_stats(samples);
          auto out = io::open_out(dir / ("cdf_" + kind + ".csv"));
          out << "se_bits_hz,fraction\n";
          for (const auto& [v, f] : stats.cdf) out << io::fmt_real(v) << ',' << io::fmt_real(f) << '\n';
          summary << kind << ',' << io::fmt_real(stats.median) << ',' << io::fmt_real(stats.p5) << ','
                  << io::fmt_real(stats.p95) << ',' << io::fmt_real(stats.p95 - stats.p5) << '\n';
          rep.cdf.emplace(kind, std::move(stats));
        }
      }
      break;
    }
    default: {
      const auto points = sweep_points(cfg);
      for (const auto& p : points) {
        const auto drops = run_point(cfg, p.scenario, p.per_user_aps);
        const fs::path sub = dir / p.label;
        fs::create_directories(sub);
        write_results_csv(sub / "results.csv", drops, cfg.reproducible);
        write_drop_artifacts(cfg, sub, drops, false);
        auto rows = summarize(p, drops);
        rep.summary.insert(rep.summary.end(), rows.begin(), rows.end());
      }
      write_summary_csv(dir / "summary.csv", rep.summary);
      break;
    }
  }
  return rep;
}

}  // namespace cfmimo
