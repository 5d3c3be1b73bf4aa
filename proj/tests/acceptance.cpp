// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "heatsrc/bench.hpp"
#include "oracles.hpp"

namespace heatsrc {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ScenarioConfig config(const std::string& file) {
  ScenarioConfig c = load_scenario(std::filesystem::path(HEATSRC_CONFIG_DIR) / file);
  validate(c);
  return c;
}

ScenarioOutcome timed_run(const ScenarioConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioOutcome o = run_scenario(c);
  o.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return o;
}

double max_pair_amplitude_error(const MetricsRecord& r) {
  double e = 0.0;
  for (const auto& p : r.assignment.pairs) e = std::max(e, p.amplitude_error);
  return e;
}

double max_pair_position_error(const MetricsRecord& r) {
  double e = 0.0;
  for (const auto& p : r.assignment.pairs) e = std::max(e, p.position_error);
  return e;
}

std::string summary(const ScenarioOutcome& o) {
  const MetricsRecord& r = o.record;
  return r.name + " matched=" + std::to_string(r.assignment.pairs.size()) + "/" + std::to_string(r.truth.size()) +
         fmt(" max_pos_err=%.3e", max_pair_position_error(r)) + fmt(" max_amp_err=%.3e", max_pair_amplitude_error(r)) +
         fmt(" runtime=%.2fs", o.runtime_seconds);
}

// All truth atoms matched; every matched pair within the tolerances; bounded runtime.
Verdict recovery_verdict(const ScenarioOutcome& o, double pos_tol, double amp_tol, double max_seconds) {
  const MetricsRecord& r = o.record;
  const bool pass = r.assignment.pairs.size() == r.truth.size() && max_pair_position_error(r) < pos_tol &&
                    max_pair_amplitude_error(r) < amp_tol && o.runtime_seconds < max_seconds;
  return {pass, summary(o)};
}

struct Suite {
  std::vector<ScenarioOutcome> certified_runs;

  Verdict on_grid() {
    const ScenarioOutcome o = timed_run(config("ongrid_1d.json"));
    certified_runs.push_back(o);
    return recovery_verdict(o, 1e-3 * kTwoPi, 1e-2, 60.0);
  }

  Verdict off_grid() {
    const ScenarioOutcome o = timed_run(config("offgrid_1d.json"));
    certified_runs.push_back(o);
    return recovery_verdict(o, 1e-2 * kTwoPi, 2e-2, 60.0);
  }

  Verdict noisy() {
    Verdict v{true, ""};
    for (const char* file : {"noisy_1d_rho_inside.json", "noisy_1d_rho_outside.json"}) {
      const ScenarioOutcome o = timed_run(config(file));
      certified_runs.push_back(o);
      const Verdict one = recovery_verdict(o, 0.05, 0.05, 120.0);
      v.pass = v.pass && one.pass;
      v.detail += (v.detail.empty() ? "" : "; ") + one.detail + (o.record.rho_valid ? " (rho inside)" : " (rho outside)");
    }
    return v;
  }

  Verdict baseline_contrast() {
    const ScenarioConfig c = config("baseline_1d.json");
    const ScenarioOutcome o = timed_run(c);
    const MetricsRecord& r = o.record;
    const double cell = (c.domain.hi[0] - c.domain.lo[0]) / c.baseline.grid_points;
    const double cells = r.mean_position_error / cell;
    const bool overshoot = r.max_abs_amplitude >= 1e3;
    return {!r.rho_valid && (overshoot || cells > 10.0),
            fmt("rho=%.4g", r.rho) + (r.rho_valid ? " (inside bounds)" : " (outside bounds)") +
                fmt(" max|mu|=%.3e", r.max_abs_amplitude) + fmt(" mean_cell_error=%.2f", cells)};
  }

  Verdict sweep_2d() {
    const ScenarioConfig c = config("sweep_2d.json");
    const double diameter = distance(c.domain.lo, c.domain.hi);
    Verdict v{true, ""};
    double prev = std::numeric_limits<double>::infinity();
    for (const ScenarioConfig& level : expand_sweep(c)) {
      const ScenarioOutcome o = timed_run(level);
      const MetricsRecord& r = o.record;
      const bool matched = r.assignment.pairs.size() == r.truth.size();
      v.pass = v.pass && matched && r.mean_position_error <= prev && o.runtime_seconds < 600.0;
      prev = r.mean_position_error;
      v.detail += (v.detail.empty() ? "" : "; ") + fmt("%g dB", r.snr_db) + fmt(" err=%.3e", r.mean_position_error) +
                  fmt(" %.2fs", o.runtime_seconds);
    }
    v.pass = v.pass && prev < 0.02 * diameter;
    v.detail += fmt(" bound(30 dB)=%.3e", 0.02 * diameter);
    return v;
  }

  Verdict adjoint() {
    CounterRng rng(2024);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
      const int dim = 1 + k % 2;
      std::vector<Sample> s;
      for (int i = 0; i < 12; ++i) {
        const Point x = dim == 1 ? Point(2.0 * rng.next_uniform()) : Point(2.0 * rng.next_uniform(), 2.0 * rng.next_uniform());
        s.push_back({x, 0.02 + 0.5 * rng.next_uniform()});
      }
      const MeasurementOperator op(SampleSet(dim, s), {dim});
      SparseMeasure mu(dim);
      const int atoms = 1 + static_cast<int>(rng.next_bits() % 5);
      while (static_cast<int>(mu.size()) < atoms)
        mu.add(dim == 1 ? Point(2.0 * rng.next_uniform()) : Point(2.0 * rng.next_uniform(), 2.0 * rng.next_uniform()),
               2.0 * rng.next_uniform() - 1.0);
      Eigen::VectorXd lam(op.rows());
      for (Eigen::Index i = 0; i < lam.size(); ++i) lam[i] = 2.0 * rng.next_uniform() - 1.0;
      double via_g = 0.0;
      for (const Atom& a : mu.atoms()) via_g += a.amplitude * certificate_eval(op, lam, a.position);
      const double lhs = measure(op, mu).dot(lam);
      worst = std::max(worst, std::abs(lhs - via_g) / (lam.norm() * tv_norm(mu)));
    }
    return {worst <= 1e-12, fmt("200 instances, worst relative defect %.3e", worst)};
  }

  Verdict solver_oracles() {
    CounterRng rng(77);
    const SolverConfig cfg = SolverConfig::noiseless();
    const double kkt_tol = std::max(cfg.tol_primal, cfg.tol_dual);
    auto sparse = [&](Eigen::Index n, int s) {
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
      for (int k = 0; k < s;) {
        const auto j = static_cast<Eigen::Index>(rng.next_bits() % static_cast<std::uint64_t>(n));
        if (mu[j] != 0.0) continue;
        mu[j] = (rng.next_uniform() < 0.5 ? -1.0 : 1.0) * (1.0 + rng.next_uniform());
        ++k;
      }
      return mu;
    };
    auto kkt_ok = [&](const SolveOutcome& o) {
      return !o.converged || (o.kkt.feasibility <= kkt_tol && o.kkt.certificate_bound <= kkt_tol &&
                              o.kkt.support_alignment <= kkt_tol && o.kkt.duality_gap <= kkt_tol);
    };
    double l1_worst = 0.0, gap_worst = 0.0;
    int kkt_failures = 0, converged = 0;
    for (int k = 0; k < 50; ++k) {
      const Eigen::MatrixXd A = oracle::gaussian_matrix(rng, 10, 30);
      const Eigen::VectorXd b = A * sparse(30, 2);
      const SolveOutcome o = solve_l1_equality(A, b, cfg);
      l1_worst = std::max(l1_worst, (o.primal - oracle::l1_minimize(A, b)).cwiseAbs().maxCoeff());
      kkt_failures += !kkt_ok(o);
      converged += o.converged;
    }
    const double lam = 0.1;
    for (int k = 0; k < 50; ++k) {
      const Eigen::MatrixXd A = oracle::gaussian_matrix(rng, 16, 64);
      const Eigen::VectorXd b = A * sparse(64, 3) + 0.05 * oracle::gaussian_matrix(rng, 16, 1).col(0);
      const double f_ref = oracle::lasso_objective(A, b, lam, oracle::lasso_coordinate_descent(A, b, lam));
      const SolveOutcome o = solve_lasso(A, b, lam, cfg);
      gap_worst = std::max(gap_worst, std::abs(oracle::lasso_objective(A, b, lam, o.primal) - f_ref) / f_ref);
      kkt_failures += !kkt_ok(o);
      converged += o.converged;
    }
    return {l1_worst < 1e-6 && gap_worst < 1e-7 && kkt_failures == 0,
            fmt("l1 max coeff error %.3e", l1_worst) + fmt(", lasso max relative gap %.3e", gap_worst) +
                ", converged " + std::to_string(converged) + "/100, KKT violations " + std::to_string(kkt_failures)};
  }

  // Worst sup-error over a fixed sample of p0.
  static double worst_sup_error(int dim, int m, double* worst_norm) {
    CounterRng rng(3);
    CertConfig cfg = CertConfig::for_grid(dim, 0.01, m);
    cfg.mesh_points = 256;
    double worst = 0.0;
    for (int k = 0; k < 16; ++k) {
      const Point p0 = dim == 1 ? Point(rng.next_uniform() - 0.5) : Point(rng.next_uniform() - 0.5, rng.next_uniform() - 0.5);
      const CertificateBuild b = build_certificate_g(cfg, p0);
      worst = std::max(worst, b.sup_error);
      *worst_norm = std::max(*worst_norm, b.coeff_norm);
    }
    return worst;
  }

  Verdict certificate_lab() {
    Verdict v{true, ""};
    double worst_norm = 0.0;
    for (double lambda : {0.1, 0.01, 0.001}) {
      int smallest = 0;
      double ratio = 0.0;
      for (int m = 4; m <= 64 && smallest == 0; m *= 2) {
        LabSpec spec;
        spec.dim = 2;
        spec.lambda = lambda;
        spec.m_values = {m};
        spec.random_p0 = 16;
        spec.mesh_points = 512;
        const std::vector<LabRow> rows = run_lab(spec);
        bool feasible = true;
        double worst = std::numeric_limits<double>::infinity();
        for (const LabRow& r : rows) {
          feasible = feasible && r.report.feasible;
          worst = std::min(worst, r.report.tau / r.report.sigma);
          worst_norm = std::max(worst_norm, r.report.coeff_norm);
        }
        if (feasible) {
          smallest = m;
          ratio = worst;
        }
      }
      v.pass = v.pass && smallest > 0 && ratio >= 0.5;
      v.detail += fmt("Lambda=%g", lambda) + " m*=" + std::to_string(smallest) + fmt(" tau/sigma=%.3f; ", ratio);
    }
    for (int dim : {1, 2}) {
      double prev = worst_sup_error(dim, 8, &worst_norm);
      std::string errs = fmt("%.2e", prev);
      for (int m : {16, 32}) {
        const double e = worst_sup_error(dim, m, &worst_norm);
        v.pass = v.pass && e <= 0.7 * prev;
        errs += fmt(" %.2e", e);
        prev = e;
      }
      v.detail += "err(8,16,32) " + std::to_string(dim) + "D: " + errs + "; ";
    }
    CounterRng rng(5);
    for (int k = 0; k < 200; ++k) {
      const Point delta(rng.next_uniform() - 0.5, rng.next_uniform() - 0.5);
      const int p = 1 + static_cast<int>(rng.next_bits() % 16);
      worst_norm = std::max(worst_norm, jackson_coefficients(delta, p, 1024).l2_norm());
    }
    v.pass = v.pass && worst_norm <= 1.0 + 1e-8;
    v.detail += fmt("max ||c||_2 = %.12f", worst_norm);
    return v;
  }

  // Runs collected by the recovery criteria plus extra seeded off-grid instances.
  Verdict theory_practice() {
    ScenarioConfig base = config("offgrid_1d.json");
    for (std::uint64_t seed : {3u, 5u, 9u}) certified_runs.push_back(timed_run(with_seed(base, seed)));
    std::size_t certified = 0, held = 0, runs = 0;
    for (const ScenarioOutcome& o : certified_runs) {
      bool any = false;
      for (const CertifiedAtom& c : o.record.certificates) {
        certified += c.certified;
        held += c.certified && c.held;
        any = any || c.certified;
      }
      runs += any;
    }
    return {certified > 0 && held == certified,
            std::to_string(held) + "/" + std::to_string(certified) + " certified atoms within radius over " +
                std::to_string(runs) + " certified runs of " + std::to_string(certified_runs.size())};
  }

  Verdict perturbed_support() {
    const double d2 = kTwoPi / 16.0;
    const double t = rho_bounds(16, 1).midpoint() * d2 * d2;
    const MeasurementOperator op(tensor_sample_set(1, 0.0, d2, 16, {t}), {1});
    SparseMeasure truth(1);
    truth.add(Point(1.0), 1.0);
    truth.add(Point(2.3), 0.7);
    const Point spur(2.3 + 5.0 * std::sqrt(t) + 0.1);
    const double c_norm = truth.amplitudes().norm();
    bool pass = std::min(distance(spur, Point(1.0)), distance(spur, Point(2.3))) >= 5.0 * std::sqrt(t);
    double prev = std::numeric_limits<double>::infinity(), spurious = 0.0;
    std::string detail;
    for (double delta : {1e-2, 1e-3, 1e-4}) {
      const SparseMeasure est = recover_amplitudes(op, {Point(1.0 + delta), Point(2.3 - delta), spur}, measure(op, truth));
      const double e = std::max(std::abs(est.atoms()[0].amplitude - 1.0), std::abs(est.atoms()[1].amplitude - 0.7) / 0.7);
      pass = pass && e < prev;
      prev = e;
      spurious = std::abs(est.atoms()[2].amplitude);
      detail += fmt("delta=%g", delta) + fmt(" err=%.3e; ", e);
    }
    pass = pass && spurious < 1e-2 * c_norm;
    return {pass, detail + fmt("spurious(1e-4)=%.3e", spurious) + fmt(" bound=%.3e", 1e-2 * c_norm)};
  }

  Verdict determinism() {
    std::vector<ScenarioConfig> cfgs{config("offgrid_1d.json"), config("noisy_1d_rho_inside.json"),
                                     config("baseline_1d.json"), expand_sweep(config("sweep_2d.json")).back()};
    bool pass = true;
    for (const ScenarioConfig& c : cfgs) {
      const std::string first = serialize_record(run_scenario(c).record);
      pass = pass && serialize_record(run_scenario(c).record) == first;
      pass = pass && serialize_record(parse_record(first)) == first;
    }
    const auto concurrent = run_scenarios(cfgs, 4);
    for (std::size_t i = 0; i < cfgs.size(); ++i)
      pass = pass && serialize_record(concurrent[i].record) == serialize_record(run_scenario(cfgs[i]).record);
    return {pass, std::to_string(cfgs.size()) + " configs, sequential and concurrent runs compared byte for byte"};
  }
};

}  // namespace
}  // namespace heatsrc

int main() {
  using heatsrc::Verdict;
  heatsrc::Suite suite;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"noiseless_1d_on_grid", [&] { return suite.on_grid(); }},
      {"noiseless_1d_off_grid", [&] { return suite.off_grid(); }},
      {"noisy_1d_40db_rho_inside_and_outside", [&] { return suite.noisy(); }},
      {"baseline_contrast", [&] { return suite.baseline_contrast(); }},
      {"sweep_2d_snr", [&] { return suite.sweep_2d(); }},
      {"adjoint_identity", [&] { return suite.adjoint(); }},
      {"solver_oracle_equivalence", [&] { return suite.solver_oracles(); }},
      {"certificate_lab", [&] { return suite.certificate_lab(); }},
      {"theory_practice_consistency", [&] { return suite.theory_practice(); }},
      {"perturbed_support_amplitudes", [&] { return suite.perturbed_support(); }},
      {"determinism", [&] { return suite.determinism(); }},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
