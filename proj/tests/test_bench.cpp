#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "heatsrc/bench.hpp"
#include "oracles.hpp"

namespace heatsrc {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("heatsrc_test_bench_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

// Two on-grid sources, noiseless, a handful of rounds.
ScenarioConfig small_1d() {
  ScenarioConfig c;
  c.name = "small_1d";
  c.domain = Domain{Point(0.0), Point(kTwoPi)};
  c.sources.mode = "explicit";
  c.sources.positions = {Point(kTwoPi * 3.0 / 16.0), Point(kTwoPi * 10.0 / 16.0)};
  c.sources.amplitudes = {1.0, 0.5};
  c.snr_db = kInf;
  c.evaluation.mesh_points = 32;
  return c;
}

ScenarioConfig small_2d() {
  ScenarioConfig c = load_scenario(std::filesystem::path(HEATSRC_CONFIG_DIR) / "sweep_2d.json");
  c.sweep_snr_db.clear();
  c.snr_db = 30.0;
  c.evaluation.mesh_points = 12;
  return c;
}

SparseMeasure random_measure(CounterRng& rng, int dim, std::size_t n) {
  SparseMeasure m(dim);
  while (m.size() < n) {
    const Point p = dim == 2 ? Point(rng.next_uniform(), rng.next_uniform()) : Point(rng.next_uniform());
    m.add(p, 0.5 + rng.next_uniform());
  }
  return m;
}

TEST(ScenarioConfig, RoundTripsThroughJson) {
  ScenarioConfig c = small_1d();
  c.sweep_snr_db = {0.0, 12.5, kInf};
  c.refinement.lambda_rule = "explicit";
  c.refinement.lasso_lambda = 0.125;
  c.baseline.sl0.step_mu = 1.5;
  c.certification.enabled = true;
  EXPECT_EQ(parse_scenario(serialize_scenario(c)), c);
  EXPECT_EQ(serialize_scenario(parse_scenario(serialize_scenario(c))), serialize_scenario(c));
  EXPECT_EQ(parse_scenario(serialize_scenario(ScenarioConfig{})), ScenarioConfig{});
}

TEST(ScenarioConfig, ShippedConfigsValidateAndRoundTrip) {
  for (const auto& entry : std::filesystem::directory_iterator(HEATSRC_CONFIG_DIR)) {
    if (entry.path().filename().string().rfind("lab", 0) == 0) {
      const LabSpec lab = parse_lab(read_file(entry.path()));
      EXPECT_NO_THROW(validate(lab));
      EXPECT_EQ(parse_lab(serialize_lab(lab)), lab);
      continue;
    }
    const ScenarioConfig c = load_scenario(entry.path());
    EXPECT_NO_THROW(validate(c)) << entry.path();
    EXPECT_EQ(parse_scenario(serialize_scenario(c)), c) << entry.path();
  }
}

TEST(ScenarioConfig, InfiniteSnrIsAString) {
  const std::string text = serialize_scenario(small_1d());
  EXPECT_NE(text.find("\"inf\""), std::string::npos);
  EXPECT_EQ(parse_scenario(text).snr_db, kInf);
}

ConfigError config_error(const std::string& text) {
  try {
    validate(parse_scenario(text));
  } catch (const ConfigError& e) {
    return e;
  }
  ADD_FAILURE() << "no ConfigError for " << text;
  return ConfigError("", "");
}

TEST(ScenarioConfig, ErrorsNameTheField) {
  const std::string head =
      R"({"schema_version": 1, "domain": {"lo": [0.0], "hi": [1.0]}, "sources": {"positions": [[0.5]]}, )";
  EXPECT_EQ(config_error(head + R"("bogus": 1})").field(), "bogus");
  EXPECT_EQ(config_error(head + R"("sensors": {"count": 3, "colour": 1}})").field(), "sensors.colour");
  EXPECT_EQ(config_error(head + R"("dim": 3})").field(), "dim");
  EXPECT_EQ(config_error(head + R"("method": "magic"})").field(), "method");
  EXPECT_EQ(config_error(head + R"("sensors": {"count": 0}})").field(), "sensors.count");
  EXPECT_EQ(config_error(head + R"("sensors": {"count": "many"}})").field(), "sensors.count");
  EXPECT_EQ(config_error(head + R"("sweep_snr_db": [1, "nan"]})").field(), "sweep_snr_db[1]");
  EXPECT_EQ(config_error(R"({"domain": {"lo": [0.0], "hi": [1.0]}})").field(), "schema_version");
  EXPECT_EQ(config_error(R"({"schema_version": 2, "domain": {"lo": [0.0], "hi": [1.0]}})").field(), "schema_version");
  EXPECT_THROW(parse_scenario("{not json"), ConfigError);
}

TEST(ScenarioConfig, WithSeedSetsEverySeed) {
  const ScenarioConfig c = with_seed(small_1d(), 77);
  EXPECT_EQ(c.sources.seed, 77u);
  EXPECT_EQ(c.refinement.kmeans_seed, 77u);
  EXPECT_EQ(c.noise_seed, 78u);
}

TEST(ExpandSweep, NamesEncodeTheSnr) {
  ScenarioConfig c = small_1d();
  EXPECT_EQ(expand_sweep(c).size(), 1u);
  EXPECT_EQ(expand_sweep(c).front(), c);
  c.sweep_snr_db = {0.0, 20.0, 12.5, -3.0, kInf};
  const auto v = expand_sweep(c);
  ASSERT_EQ(v.size(), 5u);
  const std::vector<std::string> names{"small_1d_snr0", "small_1d_snr20", "small_1d_snr12p5", "small_1d_snrm3",
                                       "small_1d_snrinf"};
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(v[i].name, names[i]);
    EXPECT_EQ(v[i].snr_db, c.sweep_snr_db[i]);
    EXPECT_TRUE(v[i].sweep_snr_db.empty());
  }
}

TEST(MatchSources, IdenticalMeasuresHaveZeroError) {
  CounterRng rng(1);
  const SparseMeasure m = random_measure(rng, 2, 4);
  const Assignment a = match_sources(m, m);
  ASSERT_EQ(a.pairs.size(), 4u);
  EXPECT_EQ(a.total_distance, 0.0);
  for (const auto& p : a.pairs) {
    EXPECT_EQ(p.truth, p.estimate);
    EXPECT_EQ(p.position_error, 0.0);
    EXPECT_EQ(p.amplitude_error, 0.0);
  }
  EXPECT_TRUE(a.unmatched_truth.empty());
  EXPECT_TRUE(a.unmatched_estimate.empty());
}

TEST(MatchSources, PermutationInvariant) {
  CounterRng rng(2);
  const SparseMeasure m = random_measure(rng, 1, 5);
  std::vector<Atom> atoms = m.atoms();
  std::reverse(atoms.begin(), atoms.end());
  std::rotate(atoms.begin(), atoms.begin() + 2, atoms.end());
  const Assignment a = match_sources(m, SparseMeasure(1, atoms));
  ASSERT_EQ(a.pairs.size(), 5u);
  EXPECT_EQ(a.total_distance, 0.0);
  for (const auto& p : a.pairs) {
    EXPECT_EQ(p.amplitude_error, 0.0);
    EXPECT_EQ(m.atoms()[p.truth], atoms[p.estimate]);
  }
}

// Truth at 0, 1, 2; estimates shifted so that greedy nearest matching is suboptimal.
TEST(MatchSources, KnownPerturbationMatchesBruteForce) {
  const SparseMeasure truth(1, {{Point(0.0), 1.0}, {Point(1.0), 1.0}, {Point(2.0), 1.0}});
  const SparseMeasure est(1, {{Point(0.6), 1.1}, {Point(1.55), 0.9}, {Point(-0.3), 1.0}});
  const Assignment a = match_sources(truth, est);
  EXPECT_NEAR(a.total_distance, oracle::brute_force_matching_cost(truth, est), 1e-15);
  EXPECT_NEAR(a.total_distance, 0.3 + 0.4 + 0.45, 1e-15);
  for (const auto& p : a.pairs) {
    if (p.truth == 1) {
      EXPECT_NEAR(p.amplitude_error, 0.1, 1e-15);
    }
  }
}

TEST(MatchSources, TotalCostEqualsBruteForce) {
  CounterRng rng(3);
  for (int k = 0; k < 200; ++k) {
    const int dim = 1 + k % 2;
    const auto s = static_cast<std::size_t>(1 + rng.next_bits() % 6);
    const auto s_hat = static_cast<std::size_t>(1 + rng.next_bits() % 6);
    const SparseMeasure truth = random_measure(rng, dim, s);
    const SparseMeasure est = random_measure(rng, dim, s_hat);
    const Assignment a = match_sources(truth, est);
    EXPECT_NEAR(a.total_distance, oracle::brute_force_matching_cost(truth, est), 1e-12) << "instance " << k;
    EXPECT_EQ(a.pairs.size(), std::min(s, s_hat));
    EXPECT_EQ(a.unmatched_truth.size(), s - a.pairs.size());
    EXPECT_EQ(a.unmatched_estimate.size(), s_hat - a.pairs.size());
    std::set<std::size_t> ti, ei;
    double sum = 0.0;
    for (const auto& p : a.pairs) {
      ti.insert(p.truth);
      ei.insert(p.estimate);
      sum += p.position_error;
    }
    EXPECT_EQ(ti.size(), a.pairs.size());
    EXPECT_EQ(ei.size(), a.pairs.size());
    EXPECT_NEAR(sum, a.total_distance, 1e-12);
  }
}

TEST(MatchSources, HungarianPathMatchesBruteForce) {
  CounterRng rng(4);
  for (int k = 0; k < 10; ++k) {
    const SparseMeasure truth = random_measure(rng, 2, 7 + static_cast<std::size_t>(k % 2));
    const SparseMeasure est = random_measure(rng, 2, 7);
    EXPECT_NEAR(match_sources(truth, est).total_distance, oracle::brute_force_matching_cost(truth, est), 1e-12);
  }
}

TEST(MatchSources, EmptyEstimateLeavesTruthUnmatched) {
  CounterRng rng(5);
  const Assignment a = match_sources(random_measure(rng, 1, 3), SparseMeasure(1));
  EXPECT_TRUE(a.pairs.empty());
  EXPECT_EQ(a.unmatched_truth.size(), 3u);
  EXPECT_EQ(a.total_distance, 0.0);
}

TEST(Synthesis, RoundTripsThroughJson) {
  ScenarioConfig c = small_1d();
  c.snr_db = 25.0;
  const Synthesis s = synthesize(c);
  const Synthesis r = parse_synthesis(serialize_synthesis(s));
  EXPECT_EQ(r.truth, s.truth);
  EXPECT_EQ(r.rho, s.rho);
  EXPECT_EQ(r.clean, s.clean);
  EXPECT_EQ(r.observed, s.observed);
  EXPECT_EQ(r.noise_variance, s.noise_variance);
  ASSERT_EQ(r.samples.size(), s.samples.size());
  EXPECT_NE(s.clean, s.observed);
}

TEST(RunScenario, SolveOnStoredDataMatchesRun) {
  const ScenarioConfig c = small_1d();
  EXPECT_EQ(serialize_record(solve_scenario(c, synthesize(c)).record), serialize_record(run_scenario(c).record));
}

TEST(RunScenario, RecordRoundTripsExactly) {
  ScenarioConfig c = small_1d();
  c.certification.enabled = true;
  c.certification.mesh_points = 256;
  const MetricsRecord r = run_scenario(c).record;
  EXPECT_FALSE(r.per_round.empty());
  EXPECT_EQ(r.certificates.size(), 2u);
  const MetricsRecord back = parse_record(serialize_record(r));
  EXPECT_EQ(back, r);
  EXPECT_EQ(serialize_record(back), serialize_record(r));
}

TEST(RunScenario, RecoversSmallOnGridScenario) {
  const MetricsRecord r = run_scenario(small_1d()).record;
  ASSERT_EQ(r.assignment.pairs.size(), 2u);
  EXPECT_LT(r.mean_position_error, 1e-3 * kTwoPi);
  EXPECT_LT(r.max_amplitude_error, 1e-2);
  EXPECT_TRUE(r.rho_valid);
}

TEST(RunScenario, ByteIdenticalRecords) {
  const ScenarioConfig c = small_1d();
  const std::string first = serialize_record(run_scenario(c).record);
  EXPECT_EQ(serialize_record(run_scenario(c).record), first);
  const auto many = run_scenarios({c, c, c}, 3);
  for (const auto& o : many) EXPECT_EQ(serialize_record(o.record), first);
}

TEST(RunScenario, ConcurrentSweepKeepsInputOrder) {
  ScenarioConfig c = small_1d();
  c.sweep_snr_db = {20.0, 40.0};
  const auto instances = expand_sweep(c);
  const auto outcomes = run_scenarios(instances, 2);
  ASSERT_EQ(outcomes.size(), 2u);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    EXPECT_EQ(outcomes[i].record.name, instances[i].name);
    EXPECT_EQ(serialize_record(outcomes[i].record), serialize_record(run_scenario(instances[i]).record));
  }
}

TEST(RunScenario, InvalidConfigThrowsConfigError) {
  ScenarioConfig c = small_1d();
  c.sensors.count = -1;
  EXPECT_THROW(run_scenario(c), ConfigError);
}

TEST(EmitResults, WritesAllFilesWithHeaders) {
  ScenarioConfig c = small_1d();
  c.certification.enabled = true;
  c.certification.mesh_points = 256;
  const ScenarioOutcome o = run_scenario(c);
  const auto dir = scratch_dir("emit");
  const auto paths = emit_results(o, dir);
  ASSERT_EQ(paths.size(), 5u);
  for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p)) << p;
  EXPECT_EQ(parse_record(read_file(dir / "small_1d.json")), o.record);

  const std::string cert = read_file(dir / "small_1d_certificate.csv");
  EXPECT_EQ(first_line(cert), "x,certificate");
  EXPECT_EQ(count_lines(cert), 1 + o.artifacts.certificate.size());
  EXPECT_EQ(o.artifacts.certificate.size(), o.artifacts.mesh.size());
  EXPECT_EQ(o.artifacts.mesh.size(), 32u);

  const std::string atoms = read_file(dir / "small_1d_atoms.csv");
  EXPECT_EQ(first_line(atoms), "kind,index,x,amplitude");
  EXPECT_EQ(count_lines(atoms), 1 + o.record.truth.size() + o.record.estimate.size());

  const std::string field = read_file(dir / "small_1d_field.csv");
  EXPECT_EQ(first_line(field), "x,truth,estimate");
  EXPECT_EQ(count_lines(field), 33u);

  const std::string timing = read_file(dir / "small_1d_timing.json");
  EXPECT_NE(timing.find("runtime_seconds"), std::string::npos);
  EXPECT_EQ(read_file(dir / "small_1d.json").find("runtime"), std::string::npos);

  for (const auto& entry : std::filesystem::directory_iterator(dir))
    EXPECT_EQ(entry.path().string().find(".tmp."), std::string::npos) << entry.path();
  std::filesystem::remove_all(dir);
}

// Values are written with 17 significant digits and parse back bit-exactly.
TEST(EmitResults, TabularValuesRoundTrip) {
  ScenarioConfig c = small_1d();
  const ScenarioOutcome o = run_scenario(c);
  const auto dir = scratch_dir("digits");
  emit_results(o, dir);
  std::istringstream in(read_file(dir / "small_1d_field.csv"));
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; std::getline(in, line); ++i) {
    std::istringstream row(line);
    std::string x, truth, est;
    std::getline(row, x, ',');
    std::getline(row, truth, ',');
    std::getline(row, est, ',');
    EXPECT_EQ(std::stod(x), o.artifacts.mesh[i][0]);
    EXPECT_EQ(std::stod(truth), o.artifacts.field_truth[i]);
    EXPECT_EQ(std::stod(est), o.artifacts.field_estimate[i]);
  }
  EXPECT_EQ(format_real(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(format_real(std::numbers::pi)), std::numbers::pi);
  std::filesystem::remove_all(dir);
}

TEST(EmitResults, TwoDimensionalFieldGridMatchesMesh) {
  const ScenarioConfig c = small_2d();
  const ScenarioOutcome o = run_scenario(c);
  const auto dir = scratch_dir("field2d");
  emit_results(o, dir);
  const std::string field = read_file(dir / (c.name + "_field.csv"));
  EXPECT_EQ(first_line(field), "x,y,truth,estimate");
  EXPECT_EQ(count_lines(field), 1u + 12u * 12u);
  std::set<double> xs, ys;
  for (const Point& p : o.artifacts.mesh) {
    xs.insert(p[0]);
    ys.insert(p[1]);
  }
  EXPECT_EQ(xs.size(), 12u);
  EXPECT_EQ(ys.size(), 12u);
  EXPECT_EQ(first_line(read_file(dir / (c.name + "_atoms.csv"))), "kind,index,x,y,amplitude");
  std::filesystem::remove_all(dir);
}

TEST(EmitResults, BaselineCertificateDumpIsHeaderOnly) {
  ScenarioConfig c = load_scenario(std::filesystem::path(HEATSRC_CONFIG_DIR) / "baseline_1d.json");
  c.evaluation.mesh_points = 16;
  const ScenarioOutcome o = run_scenario(c);
  EXPECT_EQ(o.record.method, "baseline");
  EXPECT_FALSE(o.record.rho_valid);
  const auto dir = scratch_dir("baseline");
  emit_results(o, dir);
  EXPECT_EQ(read_file(dir / "baseline_1d_certificate.csv"), "x,certificate\n");
  std::filesystem::remove_all(dir);
}

TEST(EmitResults, UnwritableDirectoryNamesThePath) {
  const auto dir = scratch_dir("blocked");
  const auto blocker = dir / "file";
  write_file_atomic(blocker, "x");
  try {
    emit_results(run_scenario(small_1d()), blocker / "sub");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find((blocker / "sub").string()), std::string::npos) << e.what();
  }
  std::filesystem::remove_all(dir);
}

TEST(WriteFileAtomic, ReplacesContentWithoutLeftovers) {
  const auto dir = scratch_dir("atomic");
  const auto p = dir / "out.txt";
  write_file_atomic(p, "first\n");
  write_file_atomic(p, "second\n");
  EXPECT_EQ(read_file(p), "second\n");
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++n;
  EXPECT_EQ(n, 1u);
  EXPECT_THROW(write_file_atomic(dir / "missing" / "x.txt", "y"), std::runtime_error);
  EXPECT_THROW(read_file(dir / "absent.txt"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Lab, SpecRoundTripAndCsvShape) {
  LabSpec s;
  s.dim = 1;
  s.lambda = 0.01;
  s.m_values = {8, 16};
  s.random_p0 = 3;
  s.mesh_points = 256;
  s.quadrature_points = 1024;
  EXPECT_EQ(parse_lab(serialize_lab(s)), s);
  EXPECT_EQ(lab_points(s).size(), 3u);
  const auto rows = run_lab(s);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].p_jackson, 2);
  EXPECT_EQ(rows[3].p_jackson, 4);
  const std::string csv = lab_csv(rows, 1);
  EXPECT_EQ(first_line(csv), "m,p_jackson,p0_x,sigma,tau,tau_over_sigma,feasible,sup_error,coeff_norm,radius");
  EXPECT_EQ(count_lines(csv), 7u);
  for (const LabRow& r : rows) EXPECT_LE(r.report.coeff_norm, 1.0 + 1e-8);
  LabSpec bad = s;
  bad.m_values = {0};
  EXPECT_THROW(validate(bad), ConfigError);
}

}  // namespace
}  // namespace heatsrc
