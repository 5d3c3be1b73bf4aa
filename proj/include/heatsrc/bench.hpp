#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heatsrc/baseline_sl0.hpp"
#include "heatsrc/cert_lab.hpp"
#include "heatsrc/refinement.hpp"

namespace heatsrc {

inline constexpr int kSchemaVersion = 1;

// Config problems carry the dotted path of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct SourceSpec {
  // explicit | on_grid | off_grid. on_grid draws distinct nodes of the
  // grid_points-per-axis grid lo + j (hi - lo) / grid_points.
  std::string mode = "explicit";
  int count = 3;
  std::vector<Point> positions;
  // Empty means all ones.
  std::vector<double> amplitudes;
  std::uint64_t seed = 1;
  int grid_points = 128;
  double min_separation = 0.0;
  // Random draws keep this distance from the domain boundary.
  double margin = 0.0;

  bool operator==(const SourceSpec&) const = default;
};

struct SensorSpec {
  // Per axis; positions lo + n (hi - lo) / count, n = 0..count-1.
  int count = 16;
  int time_count = 1;
  // explicit uses rho; midpoint uses the centre of the (rho_min, rho_max) interval. rho_factor scales either.
  std::string rho_rule = "midpoint";
  double rho = 0.0;
  double rho_factor = 1.0;

  bool operator==(const SensorSpec&) const = default;
};

struct RefinementSpec {
  // auto selects noisy iff snr_db is finite.
  std::string mode = "auto";
  int initial_points_per_dim = 16;
  // Non-positive keeps the preset of the mode.
  double stop_tol = 0.0;
  int max_rounds = 12;
  double final_threshold = 0.99;
  double cluster_gap = 0.0;
  // Negative selects the true source count.
  int k_sources = -1;
  // noise_variance: lambda = lambda_factor s_d^2; noise_std: lambda = lambda_factor s_d;
  // explicit: lambda = lasso_lambda.
  std::string lambda_rule = "noise_variance";
  double lambda_factor = 0.35;
  double lasso_lambda = 0.0;
  int max_iters = 100000;
  // Non-positive keeps the preset of the mode.
  double tol = 0.0;
  std::uint64_t kmeans_seed = 1;

  bool operator==(const RefinementSpec&) const = default;
};

struct BaselineSpec {
  int grid_points = 128;
  Sl0Config sl0;

  bool operator==(const BaselineSpec& o) const {
    return grid_points == o.grid_points && sl0.sigma_decrease == o.sl0.sigma_decrease &&
           sl0.sigma_min == o.sl0.sigma_min && sl0.inner_iters == o.sl0.inner_iters && sl0.step_mu == o.sl0.step_mu;
  }
};

struct EvaluationSpec {
  // Per axis, over the domain, at the first sample time.
  int mesh_points = 256;

  bool operator==(const EvaluationSpec&) const = default;
};

struct CertificationSpec {
  bool enabled = false;
  int mesh_points = 2048;
  int p_jackson = 0;

  bool operator==(const CertificationSpec&) const = default;
};

struct ScenarioConfig {
  int schema_version = kSchemaVersion;
  std::string name = "scenario";
  int dim = 1;
  Domain domain{Point(0.0), Point(1.0)};
  SourceSpec sources;
  SensorSpec sensors;
  // +inf for noiseless data.
  double snr_db = 0.0;
  std::uint64_t noise_seed = 1;
  std::string method = "refinement";
  RefinementSpec refinement;
  BaselineSpec baseline;
  EvaluationSpec evaluation;
  CertificationSpec certification;
  // Sweep values; each produces one instance named <name>_snr<value>.
  std::vector<double> sweep_snr_db;
  // Default output directory; the command line --out takes precedence.
  std::string output_dir = "results";

  bool operator==(const ScenarioConfig&) const = default;
};

ScenarioConfig parse_scenario(const std::string& json_text);
std::string serialize_scenario(const ScenarioConfig& cfg);
ScenarioConfig load_scenario(const std::filesystem::path& path);
// Throws ConfigError.
void validate(const ScenarioConfig& cfg);
// Sets the source and k-means seeds to seed and the noise seed to seed + 1.
ScenarioConfig with_seed(ScenarioConfig cfg, std::uint64_t seed);
std::vector<ScenarioConfig> expand_sweep(const ScenarioConfig& cfg);

struct Assignment {
  struct Pair {
    std::size_t truth = 0;
    std::size_t estimate = 0;
    double position_error = 0.0;
    // |c_est - c_true| / |c_true|.
    double amplitude_error = 0.0;

    bool operator==(const Pair&) const = default;
  };
  std::vector<Pair> pairs;
  std::vector<std::size_t> unmatched_truth;
  std::vector<std::size_t> unmatched_estimate;
  double total_distance = 0.0;

  bool operator==(const Assignment&) const = default;
};

// Minimum total Euclidean distance injective matching of min(s, s_hat) pairs;
// exhaustive when max(s, s_hat) <= 6, Hungarian otherwise.
Assignment match_sources(const SparseMeasure& truth, const SparseMeasure& estimate);

struct Synthesis {
  SparseMeasure truth;
  std::vector<Sample> samples;
  double rho = 0.0;
  Eigen::VectorXd clean;
  Eigen::VectorXd observed;
  double noise_variance = 0.0;
  double noise_norm = 0.0;
};

// Truth, sampling and noisy data of a scenario; the baseline synthesises with its own discrete model.
Synthesis synthesize(const ScenarioConfig& cfg);
std::string serialize_synthesis(const Synthesis& s);
Synthesis parse_synthesis(const std::string& json_text);

struct CertifiedAtom {
  std::size_t truth = 0;
  bool certified = false;
  double sigma = 0.0;
  double tau = 0.0;
  double radius = 0.0;
  // Distance from the truth atom to the nearest estimated atom.
  double nearest = 0.0;
  bool held = false;

  bool operator==(const CertifiedAtom&) const = default;
};

struct MetricsRecord {
  int schema_version = kSchemaVersion;
  std::string name;
  std::string method;
  int dim = 1;
  double rho = 0.0;
  bool rho_valid = false;
  double snr_db = 0.0;
  double noise_variance = 0.0;
  double noise_norm = 0.0;
  double lasso_lambda = 0.0;
  SparseMeasure truth;
  SparseMeasure estimate;
  Assignment assignment;
  double mean_position_error = 0.0;
  double max_position_error = 0.0;
  double max_amplitude_error = 0.0;
  double max_abs_amplitude = 0.0;
  double field_rmse = 0.0;
  double field_relative_rmse = 0.0;
  int rounds = 0;
  bool converged = true;
  std::vector<RoundDiagnostics> per_round;
  KktResiduals kkt;
  // TV norm of the estimate over that of the truth.
  double rho_ratio = 0.0;
  std::vector<CertifiedAtom> certificates;
  bool certificates_held = true;

  bool operator==(const MetricsRecord&) const = default;
};

std::string serialize_record(const MetricsRecord& r);
MetricsRecord parse_record(const std::string& json_text);

// Plot data alongside the record.
struct Artifacts {
  // Evaluation mesh points with certificate values (refinement only).
  std::vector<Point> mesh;
  std::vector<double> certificate;
  std::vector<double> field_truth;
  std::vector<double> field_estimate;
  int mesh_points = 0;
};

struct ScenarioOutcome {
  MetricsRecord record;
  Artifacts artifacts;
  double runtime_seconds = 0.0;
};

ScenarioOutcome run_scenario(const ScenarioConfig& cfg);
// Runs the configured method on already synthesised data.
ScenarioOutcome solve_scenario(const ScenarioConfig& cfg, const Synthesis& data);
// Runs instances concurrently; results in input order.
std::vector<ScenarioOutcome> run_scenarios(const std::vector<ScenarioConfig>& cfgs, unsigned threads = 0);

// Writes <dir>/<name>.json, <name>_atoms.csv, <name>_field.csv, <name>_certificate.csv and
// <name>_timing.json; each file via a temporary and rename. Returns the written paths.
std::vector<std::filesystem::path> emit_results(const ScenarioOutcome& outcome, const std::filesystem::path& dir);

// Certificate lab sweep: one atom of unit mass at each p0, for each grid size m.
struct LabSpec {
  int schema_version = kSchemaVersion;
  std::string name = "lab";
  int dim = 2;
  double lambda = 0.01;
  std::vector<int> m_values{16};
  // 0 selects CertConfig::for_grid.
  int p_jackson = 0;
  int quadrature_points = 4096;
  int mesh_points = 512;
  // Explicit points in [-1/2, 1/2]^dim; when empty, random_p0 uniform draws from seed.
  std::vector<Point> p0;
  int random_p0 = 16;
  std::uint64_t seed = 42;

  bool operator==(const LabSpec&) const = default;
};

struct LabRow {
  int m = 0;
  int p_jackson = 0;
  Point p0;
  CertificateReport report;
};

LabSpec parse_lab(const std::string& json_text);
std::string serialize_lab(const LabSpec& spec);
void validate(const LabSpec& spec);
std::vector<Point> lab_points(const LabSpec& spec);
std::vector<LabRow> run_lab(const LabSpec& spec);
// Header plus one row per (m, p0).
std::string lab_csv(const std::vector<LabRow>& rows, int dim);

// Atomic text write; throws std::runtime_error naming the path.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// %.17g.
std::string format_real(double v);

}  // namespace heatsrc
