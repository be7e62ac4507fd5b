// cfmimo: scenario generation, single solves, experiments and the timing bench.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cfmimo/cfmimo.hpp"

namespace fs = std::filesystem;
using namespace cfmimo;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

ExperimentConfig resolve(const Common& c, CLI::App* sub, ExperimentType fallback) {
  ExperimentConfig cfg;
  if (!c.config.empty())
    cfg = load_experiment_config(c.config);
  else
    cfg.experiment = fallback;
  if (sub->count("--seed")) {
    cfg.seed = c.seed;
    cfg.solver.seed = c.seed;
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "override the base seed");
  sub->add_option("--out", c.out, "output directory");
}

int run_generate(const ExperimentConfig& cfg) {
  const Scenario s = generate_drop(cfg.scenario, cfg.seed);
  write_scenario_bundle(s, cfg.output_dir);
  std::cout << "wrote scenario M=" << s.M << " K=" << s.K << " N=" << s.N << " to " << cfg.output_dir.string() << '\n';
  return 0;
}

int run_solve(const ExperimentConfig& cfg, const std::string& bundle) {
  DropResult d;
  d.drop = 0;
  if (bundle.empty()) {
    d.seed = cfg.seed;
    d.scenario = generate_drop(cfg.scenario, cfg.seed);
  } else {
    d.scenario = read_scenario_bundle(bundle);
    d.seed = d.scenario.seed;
  }
  const Coefficients co = build_coefficients(d.scenario);
  const PowerAllocation mu0 = epa_allocation(d.scenario);
  fs::create_directories(cfg.output_dir);
  if (cfg.include_epa) {
    KindResult r;
    r.kind = "EPA";
    r.se_nats = spectral_efficiency(co, mu0);
    r.final_mu = mu0;
    d.kinds.push_back(std::move(r));
  }
  for (Utility u : cfg.kinds) {
    SolverTrace trace = solve(co, cfg.utility(u), cfg.solver, mu0);
    KindResult r;
    r.kind = std::string(to_string(u));
    r.se_nats = trace.per_user_se;
    r.iters = trace.iterations;
    r.wall_s = trace.wall_time_s;
    r.final_mu = trace.final_mu;
    std::cout << r.kind << ": " << r.iters << " iterations, min SE " << r.se_nats.minCoeff() * kNatsToBits
              << " total SE " << r.se_nats.sum() * kNatsToBits << " bits/s/Hz\n";
    r.trace = std::move(trace);
    d.kinds.push_back(std::move(r));
  }
  std::vector<DropResult> drops{std::move(d)};
  write_results_csv(cfg.output_dir / "results.csv", drops, cfg.reproducible);
  ExperimentConfig artifacts = cfg;
  artifacts.save_allocations = true;
  write_drop_artifacts(artifacts, cfg.output_dir, drops, true);
  return 0;
}

int run_bench(ExperimentConfig cfg) {
  cfg.experiment = ExperimentType::Timing;
  const auto rep = run_experiment(cfg);
  bool ok = true;
  for (const auto& r : rep.timing) {
    std::cout << "M=" << r.M << " K=" << r.K << " per_iter_s=" << r.per_iter_s;
    if (r.ratio > 0.0) std::cout << " ratio=" << r.ratio << (r.within_band ? "" : " (outside band)");
    if (cfg.timing_full_solve) std::cout << " full_solve_s=" << r.full_solve_s << " iters=" << r.full_solve_iters;
    std::cout << '\n';
    ok = ok && r.within_band;
  }
  if (!ok) {
    std::cerr << "error: per-iteration cost ratio outside [" << kTimingRatioLow << ", " << kTimingRatioHigh << "]\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cell-free massive MIMO downlink power control"};
  app.require_subcommand(1);

  Common gen_opts, solve_opts, exp_opts, bench_opts;
  std::string bundle;
  auto* gen = app.add_subcommand("generate", "draw one scenario and write it as a CSV bundle");
  add_common(gen, gen_opts);
  auto* sol = app.add_subcommand("solve", "solve every configured utility on one scenario");
  add_common(sol, solve_opts);
  sol->add_option("--scenario", bundle, "scenario bundle directory written by generate")->check(CLI::ExistingDirectory);
  auto* exp = app.add_subcommand("experiment", "run a config-driven experiment");
  add_common(exp, exp_opts);
  exp->get_option("--config")->required();
  auto* bench = app.add_subcommand("bench", "per-iteration timing over AP counts");
  add_common(bench, bench_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_generate(resolve(gen_opts, gen, ExperimentType::Cdf));
    if (sol->parsed()) return run_solve(resolve(solve_opts, sol, ExperimentType::Cdf), bundle);
    if (exp->parsed()) {
      const auto cfg = resolve(exp_opts, exp, ExperimentType::Cdf);
      run_experiment(cfg);
      std::cout << to_string(cfg.experiment) << " results in " << cfg.output_dir.string() << '\n';
      return 0;
    }
    if (bench->parsed()) return run_bench(resolve(bench_opts, bench, ExperimentType::Timing));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
