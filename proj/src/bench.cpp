#include "heatsrc/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace heatsrc {

using json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Non-finite doubles travel as strings so every binary64 value round-trips.
json real_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string indexed(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

double real_from(const json& v, const std::string& path) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ConfigError(path, "expected a real number or one of \"inf\", \"-inf\", \"nan\"");
}

std::int64_t integer_from(const json& v, const std::string& path) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9.0e15) return static_cast<std::int64_t>(d);
  }
  throw ConfigError(path, "expected an integer");
}

int int_from(const json& v, const std::string& path) {
  const std::int64_t i = integer_from(v, path);
  if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max())
    throw ConfigError(path, "integer out of range");
  return static_cast<int>(i);
}

std::uint64_t seed_from(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  const std::int64_t i = integer_from(v, path);
  if (i < 0) throw ConfigError(path, "seeds must be non-negative");
  return static_cast<std::uint64_t>(i);
}

std::string string_from(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

bool bool_from(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
  return v.get<bool>();
}

// Object reader that rejects keys it was not asked about.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::vector<std::string> allowed) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
        throw ConfigError(join(path_, it.key()), "unknown key");
    }
  }

  const json* find(const std::string& key) const {
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  const json& require(const std::string& key) const {
    const json* v = find(key);
    if (!v) throw ConfigError(join(path_, key), "missing required key");
    return *v;
  }
  std::string path(const std::string& key) const { return join(path_, key); }

  void get(const std::string& key, double& out) const {
    if (const json* v = find(key)) out = real_from(*v, path(key));
  }
  void get(const std::string& key, int& out) const {
    if (const json* v = find(key)) out = int_from(*v, path(key));
  }
  void get(const std::string& key, std::uint64_t& out) const {
    if (const json* v = find(key)) out = seed_from(*v, path(key));
  }
  void get(const std::string& key, std::string& out) const {
    if (const json* v = find(key)) out = string_from(*v, path(key));
  }
  void get(const std::string& key, bool& out) const {
    if (const json* v = find(key)) out = bool_from(*v, path(key));
  }

 private:
  const json& j_;
  std::string path_;
};

json point_json(const Point& p) {
  json a = json::array();
  for (int i = 0; i < p.dim; ++i) a.push_back(real_json(p[i]));
  return a;
}

Point point_from(const json& v, int dim, const std::string& path) {
  if (v.is_number() && dim == 1) return Point(real_from(v, path));
  if (!v.is_array() || static_cast<int>(v.size()) != dim)
    throw ConfigError(path, "expected an array of " + std::to_string(dim) + " coordinate(s)");
  if (dim == 1) return Point(real_from(v[0], indexed(path, 0)));
  return Point(real_from(v[0], indexed(path, 0)), real_from(v[1], indexed(path, 1)));
}

std::vector<double> reals_from(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(real_from(v[i], indexed(path, i)));
  return out;
}

json reals_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(real_json(x));
  return a;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(real_json(v[i]));
  return a;
}

Eigen::VectorXd vector_from(const json& v, const std::string& path) {
  const std::vector<double> r = reals_from(v, path);
  return Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
}

json measure_json(const SparseMeasure& mu) {
  json a = json::array();
  for (const Atom& at : mu.atoms()) a.push_back({{"position", point_json(at.position)}, {"amplitude", real_json(at.amplitude)}});
  return a;
}

SparseMeasure measure_from(const json& v, int dim, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of atoms");
  SparseMeasure mu(dim);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string p = indexed(path, i);
    ObjectReader r(v[i], p, {"position", "amplitude"});
    const Point x = point_from(r.require("position"), dim, r.path("position"));
    const double c = real_from(r.require("amplitude"), r.path("amplitude"));
    try {
      mu.add(x, c);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(p, e.what());
    }
  }
  return mu;
}

json kkt_json(const KktResiduals& k) {
  return {{"feasibility", real_json(k.feasibility)},
          {"certificate_bound", real_json(k.certificate_bound)},
          {"support_alignment", real_json(k.support_alignment)},
          {"duality_gap", real_json(k.duality_gap)}};
}

KktResiduals kkt_from(const json& v, const std::string& path) {
  ObjectReader r(v, path, {"feasibility", "certificate_bound", "support_alignment", "duality_gap"});
  KktResiduals k;
  k.feasibility = real_from(r.require("feasibility"), r.path("feasibility"));
  k.certificate_bound = real_from(r.require("certificate_bound"), r.path("certificate_bound"));
  k.support_alignment = real_from(r.require("support_alignment"), r.path("support_alignment"));
  k.duality_gap = real_from(r.require("duality_gap"), r.path("duality_gap"));
  return k;
}

std::size_t index_from(const json& v, const std::string& path) {
  const std::int64_t i = integer_from(v, path);
  if (i < 0) throw ConfigError(path, "expected a non-negative index");
  return static_cast<std::size_t>(i);
}

json indices_json(const std::vector<std::size_t>& v) {
  json a = json::array();
  for (std::size_t i : v) a.push_back(i);
  return a;
}

std::vector<std::size_t> indices_from(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(index_from(v[i], indexed(path, i)));
  return out;
}

json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
}

bool valid_name(const std::string& n) {
  if (n.empty()) return false;
  return std::all_of(n.begin(), n.end(), [](char ch) {
    return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '_' || ch == '-' ||
           ch == '.';
  });
}

double axis_width(const Domain& d, int axis) { return d.hi[axis] - d.lo[axis]; }

// Sensor spacing Delta_2; validation keeps 2D domains square.
double sensor_spacing(const ScenarioConfig& cfg) { return axis_width(cfg.domain, 0) / cfg.sensors.count; }

double baseline_spacing(const ScenarioConfig& cfg) { return axis_width(cfg.domain, 0) / cfg.baseline.grid_points; }

double scenario_rho(const ScenarioConfig& cfg) {
  const double base =
      cfg.sensors.rho_rule == "midpoint" ? rho_bounds(cfg.sensors.count, cfg.sensors.time_count).midpoint() : cfg.sensors.rho;
  return base * cfg.sensors.rho_factor;
}

// Index of p on the baseline grid lo + m Delta_1, if it lies on it.
std::optional<int> baseline_index(const ScenarioConfig& cfg, double x) {
  const double d1 = baseline_spacing(cfg);
  const double m = std::round((x - cfg.domain.lo[0]) / d1);
  if (m < 0 || m >= cfg.baseline.grid_points) return std::nullopt;
  if (std::abs(cfg.domain.lo[0] + m * d1 - x) > 1e-9 * axis_width(cfg.domain, 0)) return std::nullopt;
  return static_cast<int>(m);
}

bool is_noisy(const ScenarioConfig& cfg) {
  if (cfg.refinement.mode == "noisy") return true;
  if (cfg.refinement.mode == "noiseless") return false;
  return std::isfinite(cfg.snr_db);
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ScenarioConfig parse_scenario(const std::string& json_text) {
  const json j = parse_json_text(json_text);
  ObjectReader r(j, "", {"schema_version", "name", "dim", "domain", "sources", "sensors", "snr_db", "noise_seed",
                         "method", "refinement", "baseline", "evaluation", "certification", "sweep_snr_db",
                         "output_dir"});
  ScenarioConfig c;
  c.schema_version = int_from(r.require("schema_version"), "schema_version");
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(c.schema_version));
  r.get("name", c.name);
  r.get("dim", c.dim);
  if (c.dim != 1 && c.dim != 2) throw ConfigError("dim", "must be 1 or 2");
  {
    ObjectReader d(r.require("domain"), "domain", {"lo", "hi"});
    c.domain.lo = point_from(d.require("lo"), c.dim, "domain.lo");
    c.domain.hi = point_from(d.require("hi"), c.dim, "domain.hi");
  }
  if (const json* v = r.find("sources")) {
    ObjectReader s(*v, "sources",
                   {"mode", "count", "positions", "amplitudes", "seed", "grid_points", "min_separation", "margin"});
    SourceSpec& o = c.sources;
    s.get("mode", o.mode);
    s.get("count", o.count);
    if (const json* p = s.find("positions")) {
      if (!p->is_array()) throw ConfigError("sources.positions", "expected an array");
      o.positions.clear();
      for (std::size_t i = 0; i < p->size(); ++i) o.positions.push_back(point_from((*p)[i], c.dim, indexed("sources.positions", i)));
    }
    if (const json* a = s.find("amplitudes")) o.amplitudes = reals_from(*a, "sources.amplitudes");
    s.get("seed", o.seed);
    s.get("grid_points", o.grid_points);
    s.get("min_separation", o.min_separation);
    s.get("margin", o.margin);
  }
  if (const json* v = r.find("sensors")) {
    ObjectReader s(*v, "sensors", {"count", "time_count", "rho_rule", "rho", "rho_factor"});
    s.get("count", c.sensors.count);
    s.get("time_count", c.sensors.time_count);
    s.get("rho_rule", c.sensors.rho_rule);
    s.get("rho", c.sensors.rho);
    s.get("rho_factor", c.sensors.rho_factor);
  }
  r.get("snr_db", c.snr_db);
  r.get("noise_seed", c.noise_seed);
  r.get("method", c.method);
  if (const json* v = r.find("refinement")) {
    ObjectReader s(*v, "refinement",
                   {"mode", "initial_points_per_dim", "stop_tol", "max_rounds", "final_threshold", "cluster_gap",
                    "k_sources", "lambda_rule", "lambda_factor", "lasso_lambda", "max_iters", "tol", "kmeans_seed"});
    RefinementSpec& o = c.refinement;
    s.get("mode", o.mode);
    s.get("initial_points_per_dim", o.initial_points_per_dim);
    s.get("stop_tol", o.stop_tol);
    s.get("max_rounds", o.max_rounds);
    s.get("final_threshold", o.final_threshold);
    s.get("cluster_gap", o.cluster_gap);
    s.get("k_sources", o.k_sources);
    s.get("lambda_rule", o.lambda_rule);
    s.get("lambda_factor", o.lambda_factor);
    s.get("lasso_lambda", o.lasso_lambda);
    s.get("max_iters", o.max_iters);
    s.get("tol", o.tol);
    s.get("kmeans_seed", o.kmeans_seed);
  }
  if (const json* v = r.find("baseline")) {
    ObjectReader s(*v, "baseline", {"grid_points", "sl0"});
    s.get("grid_points", c.baseline.grid_points);
    if (const json* q = s.find("sl0")) {
      ObjectReader t(*q, "baseline.sl0", {"sigma_decrease", "sigma_min", "inner_iters", "step_mu"});
      t.get("sigma_decrease", c.baseline.sl0.sigma_decrease);
      t.get("sigma_min", c.baseline.sl0.sigma_min);
      t.get("inner_iters", c.baseline.sl0.inner_iters);
      t.get("step_mu", c.baseline.sl0.step_mu);
    }
  }
  if (const json* v = r.find("evaluation")) {
    ObjectReader s(*v, "evaluation", {"mesh_points"});
    s.get("mesh_points", c.evaluation.mesh_points);
  }
  if (const json* v = r.find("certification")) {
    ObjectReader s(*v, "certification", {"enabled", "mesh_points", "p_jackson"});
    s.get("enabled", c.certification.enabled);
    s.get("mesh_points", c.certification.mesh_points);
    s.get("p_jackson", c.certification.p_jackson);
  }
  if (const json* v = r.find("sweep_snr_db")) c.sweep_snr_db = reals_from(*v, "sweep_snr_db");
  r.get("output_dir", c.output_dir);
  return c;
}

std::string serialize_scenario(const ScenarioConfig& c) {
  json positions = json::array();
  for (const Point& p : c.sources.positions) positions.push_back(point_json(p));
  json j = {
      {"schema_version", c.schema_version},
      {"name", c.name},
      {"dim", c.dim},
      {"domain", {{"lo", point_json(c.domain.lo)}, {"hi", point_json(c.domain.hi)}}},
      {"sources",
       {{"mode", c.sources.mode},
        {"count", c.sources.count},
        {"positions", positions},
        {"amplitudes", reals_json(c.sources.amplitudes)},
        {"seed", c.sources.seed},
        {"grid_points", c.sources.grid_points},
        {"min_separation", real_json(c.sources.min_separation)},
        {"margin", real_json(c.sources.margin)}}},
      {"sensors",
       {{"count", c.sensors.count},
        {"time_count", c.sensors.time_count},
        {"rho_rule", c.sensors.rho_rule},
        {"rho", real_json(c.sensors.rho)},
        {"rho_factor", real_json(c.sensors.rho_factor)}}},
      {"snr_db", real_json(c.snr_db)},
      {"noise_seed", c.noise_seed},
      {"method", c.method},
      {"refinement",
       {{"mode", c.refinement.mode},
        {"initial_points_per_dim", c.refinement.initial_points_per_dim},
        {"stop_tol", real_json(c.refinement.stop_tol)},
        {"max_rounds", c.refinement.max_rounds},
        {"final_threshold", real_json(c.refinement.final_threshold)},
        {"cluster_gap", real_json(c.refinement.cluster_gap)},
        {"k_sources", c.refinement.k_sources},
        {"lambda_rule", c.refinement.lambda_rule},
        {"lambda_factor", real_json(c.refinement.lambda_factor)},
        {"lasso_lambda", real_json(c.refinement.lasso_lambda)},
        {"max_iters", c.refinement.max_iters},
        {"tol", real_json(c.refinement.tol)},
        {"kmeans_seed", c.refinement.kmeans_seed}}},
      {"baseline",
       {{"grid_points", c.baseline.grid_points},
        {"sl0",
         {{"sigma_decrease", real_json(c.baseline.sl0.sigma_decrease)},
          {"sigma_min", real_json(c.baseline.sl0.sigma_min)},
          {"inner_iters", c.baseline.sl0.inner_iters},
          {"step_mu", real_json(c.baseline.sl0.step_mu)}}}}},
      {"evaluation", {{"mesh_points", c.evaluation.mesh_points}}},
      {"certification",
       {{"enabled", c.certification.enabled},
        {"mesh_points", c.certification.mesh_points},
        {"p_jackson", c.certification.p_jackson}}},
      {"sweep_snr_db", reals_json(c.sweep_snr_db)},
      {"output_dir", c.output_dir},
  };
  return j.dump(2) + "\n";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw std::runtime_error(path.string() + ": read failed");
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  static std::atomic<std::uint64_t> counter{0};
  const std::size_t tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(tid) + "." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open temporary file " + tmp.string());
    out << content;
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw std::runtime_error(path.string() + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw std::runtime_error(path.string() + ": rename failed: " + ec.message());
  }
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return parse_scenario(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ":" + e.field(), std::string(e.what()).substr(e.field().size() + 2));
  }
}

void validate(const ScenarioConfig& c) {
  if (c.schema_version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version");
  if (!valid_name(c.name)) throw ConfigError("name", "must be non-empty and use only [A-Za-z0-9_.-]");
  if (c.dim != 1 && c.dim != 2) throw ConfigError("dim", "must be 1 or 2");
  if (c.domain.lo.dim != c.dim || c.domain.hi.dim != c.dim) throw ConfigError("domain", "bounds must have dimension dim");
  for (int a = 0; a < c.dim; ++a) {
    if (!std::isfinite(c.domain.lo[a]) || !std::isfinite(c.domain.hi[a]) || !(c.domain.lo[a] < c.domain.hi[a]))
      throw ConfigError("domain", "requires finite bounds with lo < hi");
  }
  if (c.dim == 2 && std::abs(axis_width(c.domain, 0) - axis_width(c.domain, 1)) > 1e-12 * axis_width(c.domain, 0))
    throw ConfigError("domain", "2D domains must be square");

  const SourceSpec& s = c.sources;
  if (s.mode != "explicit" && s.mode != "on_grid" && s.mode != "off_grid")
    throw ConfigError("sources.mode", "must be explicit, on_grid or off_grid");
  const std::size_t n_src = s.mode == "explicit" ? s.positions.size() : static_cast<std::size_t>(std::max(s.count, 0));
  if (s.mode == "explicit") {
    if (s.positions.empty()) throw ConfigError("sources.positions", "explicit mode needs at least one position");
    std::set<Point> seen;
    for (std::size_t i = 0; i < s.positions.size(); ++i) {
      const Point& p = s.positions[i];
      if (p.dim != c.dim || !is_finite(p) || !c.domain.contains(p))
        throw ConfigError(indexed("sources.positions", i), "must be a finite point inside the domain");
      if (!seen.insert(p).second) throw ConfigError(indexed("sources.positions", i), "duplicate position");
    }
  } else {
    if (s.count < 1) throw ConfigError("sources.count", "must be >= 1");
    if (s.grid_points < 1) throw ConfigError("sources.grid_points", "must be >= 1");
  }
  if (!s.amplitudes.empty() && s.amplitudes.size() != n_src)
    throw ConfigError("sources.amplitudes", "must be empty or match the number of sources");
  for (std::size_t i = 0; i < s.amplitudes.size(); ++i) {
    if (!std::isfinite(s.amplitudes[i]) || s.amplitudes[i] == 0.0)
      throw ConfigError(indexed("sources.amplitudes", i), "must be finite and non-zero");
  }
  if (!(s.min_separation >= 0.0) || !std::isfinite(s.min_separation))
    throw ConfigError("sources.min_separation", "must be finite and >= 0");
  if (!(s.margin >= 0.0) || !(2.0 * s.margin < axis_width(c.domain, 0)))
    throw ConfigError("sources.margin", "must be >= 0 and below half the domain width");

  if (c.sensors.count < 2) throw ConfigError("sensors.count", "must be >= 2");
  if (c.sensors.time_count < 1) throw ConfigError("sensors.time_count", "must be >= 1");
  if (c.sensors.rho_rule != "midpoint" && c.sensors.rho_rule != "explicit")
    throw ConfigError("sensors.rho_rule", "must be midpoint or explicit");
  if (c.sensors.rho_rule == "explicit" && !(c.sensors.rho > 0.0 && std::isfinite(c.sensors.rho)))
    throw ConfigError("sensors.rho", "must be finite and > 0");
  if (!(c.sensors.rho_factor > 0.0 && std::isfinite(c.sensors.rho_factor)))
    throw ConfigError("sensors.rho_factor", "must be finite and > 0");

  if (std::isnan(c.snr_db) || c.snr_db == -kInf) throw ConfigError("snr_db", "must be a number or \"inf\"");
  for (std::size_t i = 0; i < c.sweep_snr_db.size(); ++i) {
    if (std::isnan(c.sweep_snr_db[i]) || c.sweep_snr_db[i] == -kInf)
      throw ConfigError(indexed("sweep_snr_db", i), "must be a number or \"inf\"");
  }
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must be non-empty");

  if (c.method != "refinement" && c.method != "baseline") throw ConfigError("method", "must be refinement or baseline");

  const RefinementSpec& r = c.refinement;
  if (r.mode != "auto" && r.mode != "noiseless" && r.mode != "noisy")
    throw ConfigError("refinement.mode", "must be auto, noiseless or noisy");
  if (r.initial_points_per_dim < 2) throw ConfigError("refinement.initial_points_per_dim", "must be >= 2");
  if (!std::isfinite(r.stop_tol)) throw ConfigError("refinement.stop_tol", "must be finite");
  if (r.max_rounds < 1) throw ConfigError("refinement.max_rounds", "must be >= 1");
  if (!(r.final_threshold > 0.0 && r.final_threshold <= 1.0))
    throw ConfigError("refinement.final_threshold", "must lie in (0, 1]");
  if (!(r.cluster_gap >= 0.0) || !std::isfinite(r.cluster_gap))
    throw ConfigError("refinement.cluster_gap", "must be finite and >= 0");
  if (r.k_sources < -1) throw ConfigError("refinement.k_sources", "must be >= -1");
  if (r.lambda_rule != "noise_variance" && r.lambda_rule != "noise_std" && r.lambda_rule != "explicit")
    throw ConfigError("refinement.lambda_rule", "must be noise_variance, noise_std or explicit");
  if (!(r.lambda_factor > 0.0 && std::isfinite(r.lambda_factor)))
    throw ConfigError("refinement.lambda_factor", "must be finite and > 0");
  if (r.lambda_rule == "explicit" && !(r.lasso_lambda > 0.0 && std::isfinite(r.lasso_lambda)))
    throw ConfigError("refinement.lasso_lambda", "must be finite and > 0");
  if (r.max_iters < 1) throw ConfigError("refinement.max_iters", "must be >= 1");
  if (!std::isfinite(r.tol)) throw ConfigError("refinement.tol", "must be finite");
  if (c.method == "refinement" && r.mode == "noisy" && r.lambda_rule != "explicit") {
    const bool noiseless_instance = !std::isfinite(c.snr_db) &&
                                    (c.sweep_snr_db.empty() || std::any_of(c.sweep_snr_db.begin(), c.sweep_snr_db.end(),
                                                                           [](double v) { return !std::isfinite(v); }));
    if (noiseless_instance)
      throw ConfigError("refinement.lambda_rule", "noise-based rules need finite snr_db in noisy mode");
  }

  if (c.baseline.grid_points < 2) throw ConfigError("baseline.grid_points", "must be >= 2");
  try {
    validate(c.baseline.sl0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("baseline.sl0", e.what());
  }
  if (c.method == "baseline") {
    if (c.dim != 1) throw ConfigError("method", "the baseline is one-dimensional");
    if (s.mode == "off_grid") throw ConfigError("sources.mode", "the baseline needs sources on its grid");
    if (s.mode == "on_grid" && s.grid_points != c.baseline.grid_points)
      throw ConfigError("sources.grid_points", "must equal baseline.grid_points for the baseline");
    for (std::size_t i = 0; i < s.positions.size() && s.mode == "explicit"; ++i) {
      if (!baseline_index(c, s.positions[i][0]))
        throw ConfigError(indexed("sources.positions", i), "not a node of the baseline grid");
    }
  }

  if (c.evaluation.mesh_points < 2) throw ConfigError("evaluation.mesh_points", "must be >= 2");
  if (c.certification.mesh_points < 2) throw ConfigError("certification.mesh_points", "must be >= 2");
  if (c.certification.p_jackson < 0) throw ConfigError("certification.p_jackson", "must be >= 0");
  if (c.certification.enabled && c.method != "refinement")
    throw ConfigError("certification.enabled", "only available for the refinement method");
}

ScenarioConfig with_seed(ScenarioConfig cfg, std::uint64_t seed) {
  cfg.sources.seed = seed;
  cfg.refinement.kmeans_seed = seed;
  cfg.noise_seed = seed + 1;
  return cfg;
}

std::vector<ScenarioConfig> expand_sweep(const ScenarioConfig& cfg) {
  if (cfg.sweep_snr_db.empty()) return {cfg};
  std::vector<ScenarioConfig> out;
  for (double v : cfg.sweep_snr_db) {
    ScenarioConfig c = cfg;
    c.sweep_snr_db.clear();
    c.snr_db = v;
    std::string label;
    if (!std::isfinite(v)) {
      label = "inf";
    } else {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%g", v);
      for (const char* p = buf; *p; ++p) label += *p == '.' ? 'p' : (*p == '-' ? 'm' : *p);
    }
    c.name = cfg.name + "_snr" + label;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matching

namespace {

// Rectangular assignment, rows <= cols, minimising the summed cost; returns the column of each row.
std::vector<std::size_t> hungarian(const Eigen::MatrixXd& cost) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<Eigen::Index> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), kInf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Eigen::Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= m; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[js];
        if (cur < minv[js]) {
          minv[js] = cur;
          way[js] = j0;
        }
        if (minv[js] < delta) {
          delta = minv[js];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= m; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) {
          u[static_cast<std::size_t>(p[js])] += delta;
          v[js] -= delta;
        } else {
          minv[js] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Eigen::Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(static_cast<std::size_t>(n), 0);
  for (Eigen::Index j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0)
      row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = static_cast<std::size_t>(j - 1);
  }
  return row_to_col;
}

// Exhaustive counterpart for small instances; first minimum in lexicographic order.
std::vector<std::size_t> brute_force_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  const auto m = static_cast<std::size_t>(cost.cols());
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
  double best_cost = kInf;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
    if (total < best_cost) {
      best_cost = total;
      best.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

Assignment match_sources(const SparseMeasure& truth, const SparseMeasure& estimate) {
  Assignment out;
  const std::size_t s = truth.size();
  const std::size_t e = estimate.size();
  if (s == 0 || e == 0) {
    for (std::size_t i = 0; i < s; ++i) out.unmatched_truth.push_back(i);
    for (std::size_t j = 0; j < e; ++j) out.unmatched_estimate.push_back(j);
    return out;
  }
  // Rows index the smaller side.
  const bool rows_truth = s <= e;
  const std::size_t n = std::min(s, e), m = std::max(s, e);
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const Point& a = rows_truth ? truth.atoms()[i].position : truth.atoms()[j].position;
      const Point& b = rows_truth ? estimate.atoms()[j].position : estimate.atoms()[i].position;
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = distance(a, b);
    }
  }
  const std::vector<std::size_t> cols = m <= 6 ? brute_force_assignment(cost) : hungarian(cost);
  std::vector<char> truth_used(s, 0), est_used(e, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Assignment::Pair pr;
    pr.truth = rows_truth ? i : cols[i];
    pr.estimate = rows_truth ? cols[i] : i;
    const Atom& ta = truth.atoms()[pr.truth];
    const Atom& ea = estimate.atoms()[pr.estimate];
    pr.position_error = distance(ta.position, ea.position);
    pr.amplitude_error = std::abs(ea.amplitude - ta.amplitude) / std::abs(ta.amplitude);
    truth_used[pr.truth] = 1;
    est_used[pr.estimate] = 1;
    out.pairs.push_back(pr);
  }
  std::sort(out.pairs.begin(), out.pairs.end(), [](const auto& a, const auto& b) { return a.truth < b.truth; });
  for (const auto& pr : out.pairs) out.total_distance += pr.position_error;
  for (std::size_t i = 0; i < s; ++i)
    if (!truth_used[i]) out.unmatched_truth.push_back(i);
  for (std::size_t j = 0; j < e; ++j)
    if (!est_used[j]) out.unmatched_estimate.push_back(j);
  return out;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

std::vector<double> scenario_times(const ScenarioConfig& cfg, double rho) {
  const double d2 = sensor_spacing(cfg);
  std::vector<double> times;
  for (int l = 1; l <= cfg.sensors.time_count; ++l) times.push_back(l * rho * d2 * d2);
  return times;
}

// Time-major; in 2D the second coordinate runs fastest.
std::vector<Sample> scenario_samples(const ScenarioConfig& cfg, const std::vector<double>& times) {
  const int n = cfg.sensors.count;
  const double d2 = sensor_spacing(cfg);
  std::vector<Sample> out;
  for (double t : times) {
    if (cfg.dim == 1) {
      for (int i = 0; i < n; ++i) out.push_back({Point(cfg.domain.lo[0] + i * d2), t});
    } else {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out.push_back({Point(cfg.domain.lo[0] + i * d2, cfg.domain.lo[1] + j * d2), t});
    }
  }
  return out;
}

bool far_enough(const std::vector<Point>& placed, const Point& p, double min_sep) {
  for (const Point& q : placed) {
    if (q == p || distance(q, p) < min_sep) return false;
  }
  return true;
}

std::vector<Point> draw_positions(const ScenarioConfig& cfg) {
  const SourceSpec& s = cfg.sources;
  if (s.mode == "explicit") return s.positions;
  CounterRng rng(s.seed);
  std::vector<Point> placed;
  constexpr int kMaxAttempts = 100000;
  for (int attempt = 0; attempt < kMaxAttempts && static_cast<int>(placed.size()) < s.count; ++attempt) {
    Point p = Point::zero(cfg.dim);
    bool inside = true;
    for (int a = 0; a < cfg.dim; ++a) {
      const double lo = cfg.domain.lo[a], w = axis_width(cfg.domain, a);
      const double u = rng.next_uniform();
      if (s.mode == "on_grid") {
        const int j = std::min(s.grid_points - 1, static_cast<int>(std::floor(u * s.grid_points)));
        p[a] = lo + j * w / s.grid_points;
      } else {
        p[a] = lo + s.margin + (1.0 - u) * (w - 2.0 * s.margin);
      }
      if (p[a] < lo + s.margin || p[a] > lo + w - s.margin) inside = false;
    }
    if (inside && far_enough(placed, p, s.min_separation)) placed.push_back(p);
  }
  if (static_cast<int>(placed.size()) < s.count)
    throw ConfigError("sources", "could not place " + std::to_string(s.count) + " sources with the requested separation");
  return placed;
}

SparseMeasure truth_measure(const ScenarioConfig& cfg) {
  const std::vector<Point> pos = draw_positions(cfg);
  SparseMeasure mu(cfg.dim);
  for (std::size_t i = 0; i < pos.size(); ++i) mu.add(pos[i], cfg.sources.amplitudes.empty() ? 1.0 : cfg.sources.amplitudes[i]);
  return mu;
}

DictionaryMatrix scenario_baseline_matrix(const ScenarioConfig& cfg, double rho) {
  const double d2 = sensor_spacing(cfg);
  return baseline_matrix(cfg.sensors.count, cfg.sensors.time_count, cfg.baseline.grid_points, rho * d2 * d2,
                         baseline_spacing(cfg), d2);
}

}  // namespace

Synthesis synthesize(const ScenarioConfig& cfg) {
  validate(cfg);
  Synthesis out;
  out.truth = truth_measure(cfg);
  out.rho = scenario_rho(cfg);
  const std::vector<double> times = scenario_times(cfg, out.rho);
  out.samples = scenario_samples(cfg, times);
  if (cfg.method == "baseline") {
    const DictionaryMatrix M = scenario_baseline_matrix(cfg, out.rho);
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(cfg.baseline.grid_points);
    for (const Atom& a : out.truth.atoms()) {
      const auto m = baseline_index(cfg, a.position[0]);
      if (!m) throw ConfigError("sources", "source off the baseline grid");
      mu[*m] = a.amplitude;
    }
    out.clean = M.entries * mu;
  } else {
    const MeasurementOperator op(SampleSet(cfg.dim, out.samples), KernelParams{cfg.dim});
    out.clean = measure(op, out.truth);
  }
  out.noise_variance = std::isfinite(cfg.snr_db) ? noise_variance(out.clean, cfg.snr_db) : 0.0;
  out.observed = add_noise(out.clean, cfg.snr_db, cfg.noise_seed);
  out.noise_norm = (out.observed - out.clean).norm();
  return out;
}

std::string serialize_synthesis(const Synthesis& s) {
  json samples = json::array();
  for (const Sample& x : s.samples) samples.push_back({{"x", point_json(x.x)}, {"t", real_json(x.t)}});
  const json j = {{"schema_version", kSchemaVersion},
                  {"dim", s.truth.dim()},
                  {"rho", real_json(s.rho)},
                  {"noise_variance", real_json(s.noise_variance)},
                  {"noise_norm", real_json(s.noise_norm)},
                  {"truth", measure_json(s.truth)},
                  {"samples", samples},
                  {"clean", vector_json(s.clean)},
                  {"observed", vector_json(s.observed)}};
  return j.dump(2) + "\n";
}

Synthesis parse_synthesis(const std::string& json_text) {
  const json j = parse_json_text(json_text);
  ObjectReader r(j, "",
                 {"schema_version", "dim", "rho", "noise_variance", "noise_norm", "truth", "samples", "clean", "observed"});
  if (int_from(r.require("schema_version"), "schema_version") != kSchemaVersion)
    throw ConfigError("schema_version", "unsupported version");
  const int dim = int_from(r.require("dim"), "dim");
  if (dim != 1 && dim != 2) throw ConfigError("dim", "must be 1 or 2");
  Synthesis s;
  s.rho = real_from(r.require("rho"), "rho");
  s.noise_variance = real_from(r.require("noise_variance"), "noise_variance");
  s.noise_norm = real_from(r.require("noise_norm"), "noise_norm");
  s.truth = measure_from(r.require("truth"), dim, "truth");
  const json& samples = r.require("samples");
  if (!samples.is_array()) throw ConfigError("samples", "expected an array");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string p = indexed("samples", i);
    ObjectReader q(samples[i], p, {"x", "t"});
    s.samples.push_back({point_from(q.require("x"), dim, q.path("x")), real_from(q.require("t"), q.path("t"))});
  }
  s.clean = vector_from(r.require("clean"), "clean");
  s.observed = vector_from(r.require("observed"), "observed");
  if (static_cast<std::size_t>(s.observed.size()) != s.samples.size() || s.clean.size() != s.observed.size())
    throw ConfigError("observed", "length must equal the number of samples");
  return s;
}

// ---------------------------------------------------------------------------
// Scenario execution

namespace {

std::vector<Point> evaluation_mesh(const ScenarioConfig& cfg) {
  const int n = cfg.evaluation.mesh_points;
  auto coord = [&](int a, int i) { return cfg.domain.lo[a] + axis_width(cfg.domain, a) * i / (n - 1); };
  std::vector<Point> mesh;
  if (cfg.dim == 1) {
    for (int i = 0; i < n; ++i) mesh.emplace_back(coord(0, i));
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) mesh.emplace_back(coord(0, i), coord(1, j));
  }
  return mesh;
}

// Field of mu at time t under the kernel of the scenario's method.
double scenario_field(const ScenarioConfig& cfg, const SparseMeasure& mu, const Point& x, double t) {
  if (cfg.method != "baseline") return evaluate_field(mu, x, t);
  double u = 0.0;
  for (const Atom& a : mu.atoms()) {
    const double r = x[0] - a.position[0];
    u += a.amplitude * std::exp(-r * r / (4.0 * t)) / std::sqrt(4.0 * std::numbers::pi * t);
  }
  return u;
}

std::vector<CertifiedAtom> certify_truth(const ScenarioConfig& cfg, const Synthesis& data, const RecoveryResult& rec) {
  std::vector<CertifiedAtom> out;
  const double total = tv_norm(data.truth);
  std::vector<Atom> scaled;
  for (const Atom& a : data.truth.atoms()) scaled.push_back({a.position, a.amplitude / total});
  const SparseMeasure mu0(cfg.dim, scaled);
  const double t = data.samples.front().t;
  const double lambda = 0.5 * t;
  const bool noisy = std::isfinite(cfg.snr_db);
  NoiseModel noise;
  double rho_eff = 1.0;
  if (noisy) {
    rho_eff = rec.grid_primal.lpNorm<1>() / total;
    noise.eps = data.noise_norm / total;
    noise.rho = std::max(rho_eff, 1.0);
  }
  const bool same_origin = cfg.dim == 1 || cfg.domain.lo[0] == cfg.domain.lo[1];
  const UniformSampleGrid grid{cfg.dim, cfg.domain.lo[0], sensor_spacing(cfg), cfg.sensors.count, t};
  for (std::size_t i = 0; i < mu0.size(); ++i) {
    CertifiedAtom ca;
    ca.truth = i;
    ca.nearest = kInf;
    for (const Atom& e : rec.estimate.atoms()) ca.nearest = std::min(ca.nearest, distance(e.position, mu0.atoms()[i].position));
    if (same_origin && (!noisy || rho_eff >= 1.0)) {
      try {
        const CertificateBuild b =
            build_certificate_on_grid(grid, mu0.atoms()[i].position, cfg.certification.p_jackson, 1.0, 4096,
                                      cfg.certification.mesh_points);
        const CertificateReport rep =
            verify_soft_conditions(b.certificate, mu0, i, lambda, cfg.certification.mesh_points, noise);
        ca.sigma = rep.sigma;
        ca.tau = rep.tau;
        ca.radius = noisy ? rep.bound_noisy : rep.bound_noiseless;
        ca.certified = rep.feasible && std::isfinite(ca.radius);
      } catch (const std::invalid_argument&) {
        ca.certified = false;
      }
    }
    if (!ca.certified) ca.radius = kInf;
    ca.held = ca.certified && ca.nearest <= ca.radius;
    out.push_back(ca);
  }
  return out;
}

void fill_metrics(const ScenarioConfig& cfg, const Synthesis& data, ScenarioOutcome& out) {
  MetricsRecord& r = out.record;
  r.assignment = match_sources(r.truth, r.estimate);
  if (r.assignment.pairs.empty()) {
    r.mean_position_error = r.max_position_error = r.max_amplitude_error = kInf;
  } else {
    double sum = 0.0;
    for (const auto& p : r.assignment.pairs) {
      sum += p.position_error;
      r.max_position_error = std::max(r.max_position_error, p.position_error);
      r.max_amplitude_error = std::max(r.max_amplitude_error, p.amplitude_error);
    }
    r.mean_position_error = sum / static_cast<double>(r.assignment.pairs.size());
  }
  r.rho_ratio = tv_norm(r.estimate) / tv_norm(r.truth);

  Artifacts& art = out.artifacts;
  art.mesh = evaluation_mesh(cfg);
  art.mesh_points = cfg.evaluation.mesh_points;
  const double t = data.samples.front().t;
  double se = 0.0, st = 0.0;
  for (const Point& x : art.mesh) {
    const double ut = scenario_field(cfg, r.truth, x, t);
    const double ue = scenario_field(cfg, r.estimate, x, t);
    art.field_truth.push_back(ut);
    art.field_estimate.push_back(ue);
    se += (ue - ut) * (ue - ut);
    st += ut * ut;
  }
  const double n = static_cast<double>(art.mesh.size());
  r.field_rmse = std::sqrt(se / n);
  r.field_relative_rmse = st > 0.0 ? std::sqrt(se / st) : 0.0;
}

}  // namespace

ScenarioOutcome solve_scenario(const ScenarioConfig& cfg, const Synthesis& data) {
  validate(cfg);
  if (data.truth.dim() != cfg.dim) throw ConfigError("dim", "measurements have a different dimension");
  if (data.samples.empty() || data.observed.size() != static_cast<Eigen::Index>(data.samples.size()))
    throw ConfigError("measurements", "need one observation per sample");
  ScenarioOutcome out;
  MetricsRecord& r = out.record;
  r.name = cfg.name;
  r.method = cfg.method;
  r.dim = cfg.dim;
  r.rho = data.rho;
  r.rho_valid = validate_rho(data.rho, rho_bounds(cfg.sensors.count, cfg.sensors.time_count));
  r.snr_db = cfg.snr_db;
  r.noise_variance = data.noise_variance;
  r.noise_norm = data.noise_norm;
  r.truth = data.truth;

  if (cfg.method == "baseline") {
    const DictionaryMatrix M = scenario_baseline_matrix(cfg, data.rho);
    if (M.entries.rows() != data.observed.size()) throw ConfigError("measurements", "length does not match the sensors");
    const Eigen::VectorXd mu = sl0_solve(M, data.observed, cfg.baseline.sl0);
    r.max_abs_amplitude = mu.cwiseAbs().maxCoeff();
    if (!std::isfinite(r.max_abs_amplitude)) r.max_abs_amplitude = kInf;
    // The s largest-magnitude grid entries form the estimate.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(mu.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::abs(mu[a]) > std::abs(mu[b]); });
    SparseMeasure est(1);
    const double d1 = baseline_spacing(cfg);
    for (std::size_t k = 0; k < order.size() && est.size() < data.truth.size(); ++k) {
      const double c = mu[order[k]];
      if (c != 0.0 && std::isfinite(c)) est.add(Point(cfg.domain.lo[0] + static_cast<double>(order[k]) * d1), c);
    }
    r.estimate = est;
    r.rounds = 1;
    r.converged = true;
    fill_metrics(cfg, data, out);
    return out;
  }

  const MeasurementOperator op(SampleSet(cfg.dim, data.samples), KernelParams{cfg.dim});
  const bool noisy = is_noisy(cfg);
  RefinementConfig rc = noisy ? RefinementConfig::noisy(cfg.domain) : RefinementConfig::noiseless(cfg.domain);
  const RefinementSpec& rs = cfg.refinement;
  rc.initial_points_per_dim = rs.initial_points_per_dim;
  if (rs.stop_tol > 0.0) rc.stop_tol = rs.stop_tol;
  rc.max_rounds = rs.max_rounds;
  rc.final_threshold = rs.final_threshold;
  rc.cluster_gap = rs.cluster_gap;
  rc.k_sources = cfg.dim == 2 ? (rs.k_sources < 0 ? static_cast<int>(data.truth.size()) : rs.k_sources) : 0;
  rc.kmeans_seed = rs.kmeans_seed;
  rc.solver.max_iters = rs.max_iters;
  if (rs.tol > 0.0) rc.solver.tol_primal = rc.solver.tol_dual = rs.tol;
  if (noisy) {
    if (rs.lambda_rule == "explicit")
      rc.lasso_lambda = rs.lasso_lambda;
    else if (rs.lambda_rule == "noise_std")
      rc.lasso_lambda = rs.lambda_factor * std::sqrt(data.noise_variance);
    else
      rc.lasso_lambda = rs.lambda_factor * data.noise_variance;
    if (!(rc.lasso_lambda > 0.0)) throw ConfigError("refinement.lambda_rule", "the LASSO weight must be positive");
  }
  r.lasso_lambda = rc.lasso_lambda;

  const RecoveryResult rec = run_refinement(op, data.observed, rc, noisy);
  r.estimate = rec.estimate;
  r.rounds = rec.rounds;
  r.converged = rec.converged;
  r.per_round = rec.per_round;
  if (!rec.per_round.empty()) r.kkt = rec.per_round.back().kkt;
  for (const Atom& a : rec.estimate.atoms()) r.max_abs_amplitude = std::max(r.max_abs_amplitude, std::abs(a.amplitude));
  fill_metrics(cfg, data, out);
  for (const Point& x : out.artifacts.mesh) out.artifacts.certificate.push_back(rec.certificate(x));

  if (cfg.certification.enabled) {
    r.certificates = certify_truth(cfg, data, rec);
    r.certificates_held =
        std::all_of(r.certificates.begin(), r.certificates.end(), [](const CertifiedAtom& c) { return !c.certified || c.held; });
  }
  return out;
}

ScenarioOutcome run_scenario(const ScenarioConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioOutcome out = solve_scenario(cfg, synthesize(cfg));
  out.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<ScenarioOutcome> run_scenarios(const std::vector<ScenarioConfig>& cfgs, unsigned threads) {
  std::vector<ScenarioOutcome> results(cfgs.size());
  std::vector<std::exception_ptr> errors(cfgs.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(cfgs.size(), 1)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < cfgs.size(); i = next.fetch_add(1)) {
      try {
        results[i] = run_scenario(cfgs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned k = 1; k < threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

// ---------------------------------------------------------------------------
// Records and files

std::string serialize_record(const MetricsRecord& r) {
  json pairs = json::array();
  for (const auto& p : r.assignment.pairs)
    pairs.push_back({{"truth", p.truth},
                     {"estimate", p.estimate},
                     {"position_error", real_json(p.position_error)},
                     {"amplitude_error", real_json(p.amplitude_error)}});
  json rounds = json::array();
  for (const auto& d : r.per_round)
    rounds.push_back({{"round", d.round},
                      {"objective", real_json(d.objective)},
                      {"threshold", real_json(d.threshold)},
                      {"grid_size", d.grid_size},
                      {"selected", d.selected},
                      {"iterations", d.iterations},
                      {"converged", d.converged},
                      {"polished", d.polished},
                      {"kkt", kkt_json(d.kkt)}});
  json certs = json::array();
  for (const auto& c : r.certificates)
    certs.push_back({{"truth", c.truth},
                     {"certified", c.certified},
                     {"sigma", real_json(c.sigma)},
                     {"tau", real_json(c.tau)},
                     {"radius", real_json(c.radius)},
                     {"nearest", real_json(c.nearest)},
                     {"held", c.held}});
  const json j = {{"schema_version", r.schema_version},
                  {"name", r.name},
                  {"method", r.method},
                  {"dim", r.dim},
                  {"rho", real_json(r.rho)},
                  {"rho_valid", r.rho_valid},
                  {"snr_db", real_json(r.snr_db)},
                  {"noise_variance", real_json(r.noise_variance)},
                  {"noise_norm", real_json(r.noise_norm)},
                  {"lasso_lambda", real_json(r.lasso_lambda)},
                  {"truth", measure_json(r.truth)},
                  {"estimate", measure_json(r.estimate)},
                  {"assignment",
                   {{"pairs", pairs},
                    {"unmatched_truth", indices_json(r.assignment.unmatched_truth)},
                    {"unmatched_estimate", indices_json(r.assignment.unmatched_estimate)},
                    {"total_distance", real_json(r.assignment.total_distance)}}},
                  {"mean_position_error", real_json(r.mean_position_error)},
                  {"max_position_error", real_json(r.max_position_error)},
                  {"max_amplitude_error", real_json(r.max_amplitude_error)},
                  {"max_abs_amplitude", real_json(r.max_abs_amplitude)},
                  {"field_rmse", real_json(r.field_rmse)},
                  {"field_relative_rmse", real_json(r.field_relative_rmse)},
                  {"rounds", r.rounds},
                  {"converged", r.converged},
                  {"per_round", rounds},
                  {"kkt", kkt_json(r.kkt)},
                  {"rho_ratio", real_json(r.rho_ratio)},
                  {"certificates", certs},
                  {"certificates_held", r.certificates_held}};
  return j.dump(2) + "\n";
}

MetricsRecord parse_record(const std::string& json_text) {
  const json j = parse_json_text(json_text);
  ObjectReader rd(j, "",
                  {"schema_version", "name", "method", "dim", "rho", "rho_valid", "snr_db", "noise_variance",
                   "noise_norm", "lasso_lambda", "truth", "estimate", "assignment", "mean_position_error",
                   "max_position_error", "max_amplitude_error", "max_abs_amplitude", "field_rmse",
                   "field_relative_rmse", "rounds", "converged", "per_round", "kkt", "rho_ratio", "certificates",
                   "certificates_held"});
  auto real = [&](const char* k) { return real_from(rd.require(k), k); };
  MetricsRecord r;
  r.schema_version = int_from(rd.require("schema_version"), "schema_version");
  if (r.schema_version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version");
  r.name = string_from(rd.require("name"), "name");
  r.method = string_from(rd.require("method"), "method");
  r.dim = int_from(rd.require("dim"), "dim");
  if (r.dim != 1 && r.dim != 2) throw ConfigError("dim", "must be 1 or 2");
  r.rho = real("rho");
  r.rho_valid = bool_from(rd.require("rho_valid"), "rho_valid");
  r.snr_db = real("snr_db");
  r.noise_variance = real("noise_variance");
  r.noise_norm = real("noise_norm");
  r.lasso_lambda = real("lasso_lambda");
  r.truth = measure_from(rd.require("truth"), r.dim, "truth");
  r.estimate = measure_from(rd.require("estimate"), r.dim, "estimate");
  {
    ObjectReader a(rd.require("assignment"), "assignment", {"pairs", "unmatched_truth", "unmatched_estimate", "total_distance"});
    const json& pairs = a.require("pairs");
    if (!pairs.is_array()) throw ConfigError("assignment.pairs", "expected an array");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::string p = indexed("assignment.pairs", i);
      ObjectReader q(pairs[i], p, {"truth", "estimate", "position_error", "amplitude_error"});
      Assignment::Pair pr;
      pr.truth = index_from(q.require("truth"), q.path("truth"));
      pr.estimate = index_from(q.require("estimate"), q.path("estimate"));
      pr.position_error = real_from(q.require("position_error"), q.path("position_error"));
      pr.amplitude_error = real_from(q.require("amplitude_error"), q.path("amplitude_error"));
      r.assignment.pairs.push_back(pr);
    }
    r.assignment.unmatched_truth = indices_from(a.require("unmatched_truth"), "assignment.unmatched_truth");
    r.assignment.unmatched_estimate = indices_from(a.require("unmatched_estimate"), "assignment.unmatched_estimate");
    r.assignment.total_distance = real_from(a.require("total_distance"), "assignment.total_distance");
  }
  r.mean_position_error = real("mean_position_error");
  r.max_position_error = real("max_position_error");
  r.max_amplitude_error = real("max_amplitude_error");
  r.max_abs_amplitude = real("max_abs_amplitude");
  r.field_rmse = real("field_rmse");
  r.field_relative_rmse = real("field_relative_rmse");
  r.rounds = int_from(rd.require("rounds"), "rounds");
  r.converged = bool_from(rd.require("converged"), "converged");
  const json& rounds = rd.require("per_round");
  if (!rounds.is_array()) throw ConfigError("per_round", "expected an array");
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const std::string p = indexed("per_round", i);
    ObjectReader q(rounds[i], p,
                   {"round", "objective", "threshold", "grid_size", "selected", "iterations", "converged", "polished", "kkt"});
    RoundDiagnostics d;
    d.round = int_from(q.require("round"), q.path("round"));
    d.objective = real_from(q.require("objective"), q.path("objective"));
    d.threshold = real_from(q.require("threshold"), q.path("threshold"));
    d.grid_size = index_from(q.require("grid_size"), q.path("grid_size"));
    d.selected = index_from(q.require("selected"), q.path("selected"));
    d.iterations = int_from(q.require("iterations"), q.path("iterations"));
    d.converged = bool_from(q.require("converged"), q.path("converged"));
    d.polished = bool_from(q.require("polished"), q.path("polished"));
    d.kkt = kkt_from(q.require("kkt"), q.path("kkt"));
    r.per_round.push_back(d);
  }
  r.kkt = kkt_from(rd.require("kkt"), "kkt");
  r.rho_ratio = real("rho_ratio");
  const json& certs = rd.require("certificates");
  if (!certs.is_array()) throw ConfigError("certificates", "expected an array");
  for (std::size_t i = 0; i < certs.size(); ++i) {
    const std::string p = indexed("certificates", i);
    ObjectReader q(certs[i], p, {"truth", "certified", "sigma", "tau", "radius", "nearest", "held"});
    CertifiedAtom c;
    c.truth = index_from(q.require("truth"), q.path("truth"));
    c.certified = bool_from(q.require("certified"), q.path("certified"));
    c.sigma = real_from(q.require("sigma"), q.path("sigma"));
    c.tau = real_from(q.require("tau"), q.path("tau"));
    c.radius = real_from(q.require("radius"), q.path("radius"));
    c.nearest = real_from(q.require("nearest"), q.path("nearest"));
    c.held = bool_from(q.require("held"), q.path("held"));
    r.certificates.push_back(c);
  }
  r.certificates_held = bool_from(rd.require("certificates_held"), "certificates_held");
  return r;
}

std::vector<std::filesystem::path> emit_results(const ScenarioOutcome& outcome, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error(dir.string() + ": cannot create directory: " + ec.message());
  const MetricsRecord& r = outcome.record;
  const Artifacts& a = outcome.artifacts;
  const bool two_d = r.dim == 2;
  auto coords = [&](const Point& p) { return two_d ? format_real(p[0]) + "," + format_real(p[1]) : format_real(p[0]); };
  const std::string axes = two_d ? "x,y" : "x";

  std::vector<std::filesystem::path> paths;
  auto put = [&](const std::string& suffix, const std::string& content) {
    const std::filesystem::path p = dir / (r.name + suffix);
    write_file_atomic(p, content);
    paths.push_back(p);
  };

  put(".json", serialize_record(r));

  std::string atoms = "kind,index," + axes + ",amplitude\n";
  for (std::size_t i = 0; i < r.truth.size(); ++i)
    atoms += "truth," + std::to_string(i) + "," + coords(r.truth.atoms()[i].position) + "," +
             format_real(r.truth.atoms()[i].amplitude) + "\n";
  for (std::size_t i = 0; i < r.estimate.size(); ++i)
    atoms += "estimate," + std::to_string(i) + "," + coords(r.estimate.atoms()[i].position) + "," +
             format_real(r.estimate.atoms()[i].amplitude) + "\n";
  put("_atoms.csv", atoms);

  std::string field = axes + ",truth,estimate\n";
  for (std::size_t i = 0; i < a.mesh.size(); ++i)
    field += coords(a.mesh[i]) + "," + format_real(a.field_truth[i]) + "," + format_real(a.field_estimate[i]) + "\n";
  put("_field.csv", field);

  // The baseline has no dual certificate; its dump is the header alone.
  std::string cert = axes + ",certificate\n";
  for (std::size_t i = 0; i < a.certificate.size(); ++i)
    cert += coords(a.mesh[i]) + "," + format_real(a.certificate[i]) + "\n";
  put("_certificate.csv", cert);

  const json timing = {{"name", r.name}, {"runtime_seconds", outcome.runtime_seconds}};
  put("_timing.json", timing.dump(2) + "\n");
  return paths;
}

// ---------------------------------------------------------------------------
// Certificate lab

LabSpec parse_lab(const std::string& json_text) {
  const json j = parse_json_text(json_text);
  ObjectReader r(j, "", {"schema_version", "name", "dim", "lambda", "m_values", "p_jackson", "quadrature_points",
                         "mesh_points", "p0", "random_p0", "seed"});
  LabSpec s;
  s.schema_version = int_from(r.require("schema_version"), "schema_version");
  if (s.schema_version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version");
  r.get("name", s.name);
  r.get("dim", s.dim);
  if (s.dim != 1 && s.dim != 2) throw ConfigError("dim", "must be 1 or 2");
  r.get("lambda", s.lambda);
  if (const json* v = r.find("m_values")) {
    if (!v->is_array()) throw ConfigError("m_values", "expected an array");
    s.m_values.clear();
    for (std::size_t i = 0; i < v->size(); ++i) s.m_values.push_back(int_from((*v)[i], indexed("m_values", i)));
  }
  r.get("p_jackson", s.p_jackson);
  r.get("quadrature_points", s.quadrature_points);
  r.get("mesh_points", s.mesh_points);
  if (const json* v = r.find("p0")) {
    if (!v->is_array()) throw ConfigError("p0", "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) s.p0.push_back(point_from((*v)[i], s.dim, indexed("p0", i)));
  }
  r.get("random_p0", s.random_p0);
  r.get("seed", s.seed);
  return s;
}

std::string serialize_lab(const LabSpec& s) {
  json p0 = json::array();
  for (const Point& p : s.p0) p0.push_back(point_json(p));
  json ms = json::array();
  for (int m : s.m_values) ms.push_back(m);
  const json j = {{"schema_version", s.schema_version}, {"name", s.name},
                  {"dim", s.dim},
                  {"lambda", real_json(s.lambda)},
                  {"m_values", ms},
                  {"p_jackson", s.p_jackson},
                  {"quadrature_points", s.quadrature_points},
                  {"mesh_points", s.mesh_points},
                  {"p0", p0},
                  {"random_p0", s.random_p0},
                  {"seed", s.seed}};
  return j.dump(2) + "\n";
}

void validate(const LabSpec& s) {
  if (s.schema_version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version");
  if (!valid_name(s.name)) throw ConfigError("name", "must be non-empty and use only [A-Za-z0-9_.-]");
  if (s.dim != 1 && s.dim != 2) throw ConfigError("dim", "must be 1 or 2");
  if (!(s.lambda > 0.0 && std::isfinite(s.lambda))) throw ConfigError("lambda", "must be finite and > 0");
  if (s.m_values.empty()) throw ConfigError("m_values", "must be non-empty");
  for (std::size_t i = 0; i < s.m_values.size(); ++i) {
    if (s.m_values[i] < 4) throw ConfigError(indexed("m_values", i), "must be >= 4 so that the Jackson translates fit");
    if (s.p_jackson > 0 && 2 * s.p_jackson + (s.m_values[i] + 1) / 2 > s.m_values[i])
      throw ConfigError("p_jackson", "too large for m = " + std::to_string(s.m_values[i]));
  }
  if (s.p_jackson < 0) throw ConfigError("p_jackson", "must be >= 0");
  if (s.quadrature_points < 16) throw ConfigError("quadrature_points", "must be >= 16");
  if (s.mesh_points < 2) throw ConfigError("mesh_points", "must be >= 2");
  for (std::size_t i = 0; i < s.p0.size(); ++i) {
    const Point& p = s.p0[i];
    for (int a = 0; a < s.dim; ++a)
      if (!(std::abs(p[a]) <= 0.5)) throw ConfigError(indexed("p0", i), "coordinates must lie in [-1/2, 1/2]");
  }
  if (s.p0.empty() && s.random_p0 < 1) throw ConfigError("random_p0", "must be >= 1 without explicit p0");
}

std::vector<Point> lab_points(const LabSpec& s) {
  if (!s.p0.empty()) return s.p0;
  CounterRng rng(s.seed);
  std::vector<Point> out;
  for (int i = 0; i < s.random_p0; ++i) {
    Point p = Point::zero(s.dim);
    for (int a = 0; a < s.dim; ++a) p[a] = rng.next_uniform() - 0.5;
    out.push_back(p);
  }
  return out;
}

std::vector<LabRow> run_lab(const LabSpec& s) {
  validate(s);
  std::vector<LabRow> rows;
  const std::vector<Point> pts = lab_points(s);
  for (int m : s.m_values) {
    CertConfig cfg = CertConfig::for_grid(s.dim, s.lambda, m);
    if (s.p_jackson > 0) cfg.p_jackson = s.p_jackson;
    cfg.quadrature_points = s.quadrature_points;
    cfg.mesh_points = s.mesh_points;
    for (const Point& p : pts) {
      SparseMeasure mu(s.dim);
      mu.add(p, 1.0);
      rows.push_back({m, cfg.p_jackson, p, certify_atom(cfg, mu, 0)});
    }
  }
  return rows;
}

std::string lab_csv(const std::vector<LabRow>& rows, int dim) {
  std::string out = dim == 2 ? "m,p_jackson,p0_x,p0_y" : "m,p_jackson,p0_x";
  out += ",sigma,tau,tau_over_sigma,feasible,sup_error,coeff_norm,radius\n";
  for (const LabRow& r : rows) {
    out += std::to_string(r.m) + "," + std::to_string(r.p_jackson) + "," + format_real(r.p0[0]);
    if (dim == 2) out += "," + format_real(r.p0[1]);
    const CertificateReport& c = r.report;
    out += "," + format_real(c.sigma) + "," + format_real(c.tau) + "," + format_real(c.sigma > 0 ? c.tau / c.sigma : 0.0) +
           "," + (c.feasible ? "1" : "0") + "," + format_real(c.sup_error) + "," + format_real(c.coeff_norm) + "," +
           format_real(c.bound_noiseless) + "\n";
  }
  return out;
}

}  // namespace heatsrc
