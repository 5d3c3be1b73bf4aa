#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "heatsrc/bench.hpp"

namespace {

using namespace heatsrc;

// 0 success, 1 validation error, 2 solver non-convergence.
constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitNotConverged = 2;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Scenario or lab configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Overrides every seed of the configuration");
  cmd->add_option("--out", o.out, "Output directory (default: output_dir of the config)");
}

std::vector<ScenarioConfig> load_instances(const CommonOptions& o) {
  ScenarioConfig cfg = load_scenario(o.config);
  if (o.seed) cfg = with_seed(cfg, *o.seed);
  validate(cfg);
  return expand_sweep(cfg);
}

std::filesystem::path out_dir(const CommonOptions& o, const std::string& fallback) {
  return o.out.empty() ? std::filesystem::path(fallback) : std::filesystem::path(o.out);
}

std::string describe(const MetricsRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%s: method=%s snr_db=%s rho=%.6g%s matched=%zu/%zu mean_pos_err=%.3e max_amp_err=%.3e rounds=%d "
                "converged=%s",
                r.name.c_str(), r.method.c_str(), std::isfinite(r.snr_db) ? format_real(r.snr_db).c_str() : "inf", r.rho,
                r.rho_valid ? "" : " (outside bounds)", r.assignment.pairs.size(), r.truth.size(), r.mean_position_error,
                r.max_amplitude_error, r.rounds, r.converged ? "yes" : "no");
  std::string s = buf;
  if (!r.certificates.empty()) {
    std::size_t certified = 0, held = 0;
    for (const auto& c : r.certificates) {
      certified += c.certified;
      held += c.certified && c.held;
    }
    s += " certified=" + std::to_string(certified) + " held=" + std::to_string(held);
  }
  return s;
}

int report(const std::vector<ScenarioOutcome>& outcomes, const std::filesystem::path& dir) {
  bool converged = true;
  for (const ScenarioOutcome& o : outcomes) {
    emit_results(o, dir);
    std::printf("%s runtime=%.2fs\n", describe(o.record).c_str(), o.runtime_seconds);
    converged = converged && o.record.converged;
  }
  std::printf("results written to %s\n", dir.string().c_str());
  return converged ? kExitOk : kExitNotConverged;
}

int cmd_simulate(const CommonOptions& o) {
  const auto instances = load_instances(o);
  const auto dir = out_dir(o, instances.front().output_dir);
  std::filesystem::create_directories(dir);
  for (const ScenarioConfig& c : instances) {
    const auto path = dir / (c.name + "_measurements.json");
    write_file_atomic(path, serialize_synthesis(synthesize(c)));
    std::printf("%s\n", path.string().c_str());
  }
  return kExitOk;
}

int cmd_solve(const CommonOptions& o, const std::string& measurements) {
  ScenarioConfig cfg = load_scenario(o.config);
  if (o.seed) cfg = with_seed(cfg, *o.seed);
  cfg.sweep_snr_db.clear();
  validate(cfg);
  const Synthesis data = parse_synthesis(read_file(measurements));
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioOutcome out = solve_scenario(cfg, data);
  out.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report({out}, out_dir(o, cfg.output_dir));
}

int cmd_bench(const CommonOptions& o, unsigned threads) {
  const auto instances = load_instances(o);
  return report(run_scenarios(instances, threads), out_dir(o, instances.front().output_dir));
}

int cmd_certify(const CommonOptions& o) {
  LabSpec spec = parse_lab(read_file(o.config));
  if (o.seed) spec.seed = *o.seed;
  validate(spec);
  const std::vector<LabRow> rows = run_lab(spec);
  const auto dir = out_dir(o, "results");
  std::filesystem::create_directories(dir);
  const auto path = dir / (spec.name + "_certificates.csv");
  write_file_atomic(path, lab_csv(rows, spec.dim));
  for (int m : spec.m_values) {
    std::size_t feasible = 0, total = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (const LabRow& r : rows) {
      if (r.m != m) continue;
      ++total;
      feasible += r.report.feasible;
      worst = std::min(worst, r.report.sigma > 0 ? r.report.tau / r.report.sigma : 0.0);
    }
    std::printf("m=%d feasible=%zu/%zu worst_tau_over_sigma=%.4f\n", m, feasible, total, worst);
  }
  std::printf("%s\n", path.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heat source recovery: simulation, solvers, certificates and benchmarks"};
  app.require_subcommand(1);

  CommonOptions sim_o, solve_o, cert_o, bench_o;
  std::string measurements;
  unsigned threads = 0;

  auto* sim = app.add_subcommand("simulate", "Synthesise the measurements of a scenario");
  add_common(sim, sim_o);
  auto* solve = app.add_subcommand("solve", "Run the configured method on stored measurements");
  add_common(solve, solve_o);
  solve->add_option("--measurements", measurements, "Output of simulate")->required()->check(CLI::ExistingFile);
  auto* cert = app.add_subcommand("certify", "Certificate lab report");
  add_common(cert, cert_o);
  auto* bench = app.add_subcommand("bench", "Run a scenario or SNR sweep end to end");
  add_common(bench, bench_o);
  bench->add_option("--threads", threads, "Concurrent instances (0: hardware concurrency)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*sim) return cmd_simulate(sim_o);
    if (*solve) return cmd_solve(solve_o, measurements);
    if (*cert) return cmd_certify(cert_o);
    if (*bench) return cmd_bench(bench_o, threads);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  }
  return kExitInvalid;
}
