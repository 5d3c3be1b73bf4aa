#include "heatsrc/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace heatsrc {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void validate(const RefinementConfig& cfg) {
  const Domain& d = cfg.domain;
  if (d.lo.dim != d.hi.dim || (d.dim() != 1 && d.dim() != 2))
    throw std::invalid_argument("RefinementConfig: domain must be 1D or 2D");
  for (int i = 0; i < d.dim(); ++i)
    if (!(d.lo[i] < d.hi[i])) throw std::invalid_argument("RefinementConfig: empty domain");
  if (cfg.initial_points_per_dim < 1) throw std::invalid_argument("RefinementConfig: initial_points_per_dim < 1");
  if (!(cfg.stop_tol > 0.0)) throw std::invalid_argument("RefinementConfig: stop_tol must be positive");
  if (cfg.max_rounds < 1) throw std::invalid_argument("RefinementConfig: max_rounds must be >= 1");
  if (!(cfg.final_threshold > 0.0 && cfg.final_threshold < 1.0))
    throw std::invalid_argument("RefinementConfig: final_threshold must lie in (0, 1)");
  for (int k = 1; k <= cfg.max_rounds; ++k) {
    const double t = cfg.peak_threshold_schedule(k);
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("RefinementConfig: thresholds must lie in (0, 1)");
  }
  if (cfg.k_sources < 0) throw std::invalid_argument("RefinementConfig: k_sources must be >= 0");
  if (!(cfg.rcond > 0.0)) throw std::invalid_argument("RefinementConfig: rcond must be positive");
}

double ascend_objective(const DualCertificate& cert, const Point& x) { return std::abs(cert(x)); }

// Backtracking gradient ascent on |nu|, kept inside the domain box.
Point ascend(const DualCertificate& cert, Point x, const Domain& domain, double step0, int max_iters, double tol) {
  double step = step0;
  for (int it = 0; it < max_iters; ++it) {
    const ValueGradient vg = cert.value_gradient(x);
    const double s = vg.value >= 0.0 ? 1.0 : -1.0;
    Point g = s * vg.gradient;
    const double gnorm2 = squared_norm(g);
    if (std::sqrt(gnorm2) < tol) break;
    const double f0 = std::abs(vg.value);
    bool moved = false;
    while (step > 1e-14 * step0) {
      const Point trial = domain.clip(x + step * g);
      const double f1 = ascend_objective(cert, trial);
      const Point delta = trial - x;
      if (f1 >= f0 + 1e-4 * (delta[0] * g[0] + (x.dim == 2 ? delta[1] * g[1] : 0.0)) && trial != x) {
        x = trial;
        moved = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return x;
}

// Single-linkage components of pts under link distance <= gap.
std::vector<int> link_components(const std::vector<Point>& pts, double gap, int* count) {
  std::vector<int> label(pts.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (label[i] >= 0) continue;
    std::vector<std::size_t> stack{i};
    label[i] = next;
    while (!stack.empty()) {
      const std::size_t a = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < pts.size(); ++j) {
        if (label[j] < 0 && distance(pts[a], pts[j]) <= gap) {
          label[j] = next;
          stack.push_back(j);
        }
      }
    }
    ++next;
  }
  *count = next;
  return label;
}

std::vector<Point> kmeans(const std::vector<Point>& pts, int k, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Point> centers;
  centers.push_back(pts[static_cast<std::size_t>(rng.next_bits() % pts.size())]);
  std::vector<double> d2(pts.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      d2[i] = std::min(d2[i], squared_norm(pts[i] - centers.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = rng.next_uniform() * total;
      double acc = 0.0;
      pick = pts.size() - 1;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        acc += d2[i];
        if (acc >= u) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pts[pick]);
  }
  std::vector<int> assign(pts.size(), -1);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dd = squared_norm(pts[i] - centers[static_cast<std::size_t>(c)]);
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (int c = 0; c < k; ++c) {
      Point sum = pts[0];
      for (int i = 0; i < sum.dim; ++i) sum[i] = 0.0;
      int n = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (assign[i] != c) continue;
        sum = sum + pts[i];
        ++n;
      }
      if (n > 0) centers[static_cast<std::size_t>(c)] = (1.0 / n) * sum;
    }
  }
  return centers;
}

}  // namespace

Point Domain::clip(const Point& p) const {
  Point r = p;
  for (int i = 0; i < p.dim; ++i) r[i] = std::clamp(p[i], lo[i], hi[i]);
  return r;
}

bool Domain::contains(const Point& p) const {
  for (int i = 0; i < p.dim; ++i)
    if (p[i] < lo[i] || p[i] > hi[i]) return false;
  return true;
}

CandidateGrid::CandidateGrid(Domain domain) : domain_(domain) {}

CandidateGrid CandidateGrid::uniform(const Domain& domain, int points_per_dim) {
  if (points_per_dim < 1) throw std::invalid_argument("CandidateGrid::uniform: points_per_dim < 1");
  CandidateGrid g(domain);
  const double h0 = (domain.hi[0] - domain.lo[0]) / points_per_dim;
  if (domain.dim() == 1) {
    for (int i = 0; i < points_per_dim; ++i) g.insert(Point(domain.lo[0] + i * h0), h0);
  } else {
    const double h1 = (domain.hi[1] - domain.lo[1]) / points_per_dim;
    for (int i = 0; i < points_per_dim; ++i)
      for (int j = 0; j < points_per_dim; ++j)
        g.insert(Point(domain.lo[0] + i * h0, domain.lo[1] + j * h1), std::min(h0, h1));
  }
  return g;
}

double CandidateGrid::min_spacing() const {
  double h = std::numeric_limits<double>::infinity();
  for (double s : spacing_) h = std::min(h, s);
  return h;
}

std::optional<std::size_t> CandidateGrid::find(const Point& p) const {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    double linf = 0.0;
    for (int k = 0; k < p.dim; ++k) linf = std::max(linf, std::abs(points_[i][k] - p[k]));
    if (linf <= 1e-6 * spacing_[i]) return i;
  }
  return std::nullopt;
}

std::size_t CandidateGrid::insert(const Point& p, double spacing) {
  if (p.dim != domain_.dim()) throw std::invalid_argument("CandidateGrid: dimension mismatch");
  if (!(spacing > 0.0)) throw std::invalid_argument("CandidateGrid: spacing must be positive");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    double linf = 0.0;
    for (int k = 0; k < p.dim; ++k) linf = std::max(linf, std::abs(points_[i][k] - p[k]));
    if (linf <= 1e-6 * std::min(spacing, spacing_[i])) {
      spacing_[i] = std::min(spacing_[i], spacing);
      return i;
    }
  }
  points_.push_back(p);
  spacing_.push_back(spacing);
  return points_.size() - 1;
}

void CandidateGrid::set_spacing(std::size_t i, double spacing) {
  if (!(spacing > 0.0)) throw std::invalid_argument("CandidateGrid: spacing must be positive");
  spacing_.at(i) = spacing;
}

double ThresholdSchedule::operator()(int k) const { return 1.0 - offset / std::pow(base, k); }

RefinementConfig RefinementConfig::noiseless(const Domain& domain) {
  RefinementConfig c;
  c.domain = domain;
  c.stop_tol = 1e-4;
  c.solver = SolverConfig::noiseless();
  return c;
}

RefinementConfig RefinementConfig::noisy(const Domain& domain) {
  RefinementConfig c;
  c.domain = domain;
  c.stop_tol = 1e-6;
  c.solver = SolverConfig::noisy();
  return c;
}

CandidateGrid refine_grid(const CandidateGrid& grid, const std::vector<Point>& selected) {
  CandidateGrid out = grid;
  const Domain& dom = grid.domain();
  for (const Point& q : selected) {
    std::size_t qi = 0;
    double h = 0.0;
    if (auto found = out.find(q)) {
      qi = *found;
      h = out.spacing()[qi];
    } else {
      h = grid.min_spacing();
      qi = out.insert(dom.clip(q), h);
    }
    const Point c = out.points()[qi];
    const double half = 0.5 * h;
    if (c.dim == 1) {
      for (double s : {-1.0, 1.0}) out.insert(dom.clip(Point(c[0] + s * half)), half);
    } else {
      for (int a = -1; a <= 1; ++a)
        for (int bb = -1; bb <= 1; ++bb)
          if (a != 0 || bb != 0) out.insert(dom.clip(Point(c[0] + a * half, c[1] + bb * half)), half);
    }
    out.set_spacing(qi, std::min(out.spacing()[qi], half));
  }
  return out;
}

Eigen::VectorXd pinv_solve(const MatrixXd& A, const VectorXd& b, double rcond) {
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s[0] == 0.0) throw std::invalid_argument("pinv_solve: all-zero matrix");
  VectorXd utb = svd.matrixU().transpose() * b;
  for (Index i = 0; i < s.size(); ++i) utb[i] = s[i] > rcond * s[0] ? utb[i] / s[i] : 0.0;
  return svd.matrixV() * utb;
}

SparseMeasure recover_amplitudes(const MeasurementOperator& op, const std::vector<Point>& x_star,
                                 const VectorXd& b, double rcond) {
  if (x_star.empty()) throw std::invalid_argument("recover_amplitudes: empty support");
  if (b.size() != op.rows()) throw std::invalid_argument("recover_amplitudes: measurement length mismatch");
  const DictionaryMatrix A = build_dictionary(op, x_star);
  const VectorXd c = pinv_solve(A.entries, b, rcond);
  SparseMeasure mu(op.dim());
  for (std::size_t i = 0; i < x_star.size(); ++i) mu.add(x_star[i], c[static_cast<Index>(i)]);
  return mu;
}

namespace {

// Runs of super-threshold points sorted by position; a run breaks where the
// distance to the previous point exceeds link(prev, cur). Returns run midpoints.
template <class Link>
std::vector<Point> run_midpoints_1d(std::vector<std::pair<double, double>> xh, Link link) {
  std::sort(xh.begin(), xh.end());
  std::vector<Point> out;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= xh.size(); ++i) {
    if (i == xh.size() || xh[i].first - xh[i - 1].first > link(xh[i - 1].second, xh[i].second)) {
      out.emplace_back(0.5 * (xh[start].first + xh[i - 1].first));
      start = i;
    }
  }
  return out;
}

}  // namespace

std::vector<Point> select_peaks_1d(const std::vector<std::pair<Point, double>>& cert_values, double threshold,
                                   double cluster_gap) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("select_peaks_1d: threshold outside (0,1)");
  std::vector<std::pair<double, double>> xh;
  for (const auto& [p, v] : cert_values)
    if (std::abs(v) >= threshold) xh.emplace_back(p[0], 0.0);
  return run_midpoints_1d(std::move(xh), [&](double, double) { return cluster_gap; });
}

std::vector<Point> select_peaks_1d(const CandidateGrid& grid, const VectorXd& values, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("select_peaks_1d: threshold outside (0,1)");
  if (values.size() != static_cast<Index>(grid.size())) throw std::invalid_argument("select_peaks_1d: size mismatch");
  std::vector<std::pair<double, double>> xh;
  for (std::size_t j = 0; j < grid.size(); ++j)
    if (std::abs(values[static_cast<Index>(j)]) >= threshold) xh.emplace_back(grid.points()[j][0], grid.spacing()[j]);
  return run_midpoints_1d(std::move(xh), [](double ha, double hb) { return 3.0 * std::max(ha, hb); });
}

std::vector<Point> select_peaks_2d(const DualCertificate& cert, const CandidateGrid& grid, double threshold, int k,
                                   const RefinementConfig& cfg, PeakDiagnostics* diag) {
  if (k < 0) throw std::invalid_argument("select_peaks_2d: k must be >= 0");
  const double gap = cfg.cluster_gap > 0.0 ? cfg.cluster_gap : 3.0 * grid.min_spacing();
  std::vector<Point> pts;
  for (const Point& p : grid.points())
    if (std::abs(cert(p)) > threshold) pts.push_back(p);
  PeakDiagnostics local;
  local.candidates = pts.size();
  local.requested_k = k;
  if (pts.empty()) {
    if (diag) *diag = local;
    return {};
  }
  int kk = k;
  if (kk == 0) link_components(pts, gap, &kk);
  if (kk > static_cast<int>(pts.size())) {
    kk = static_cast<int>(pts.size());
    local.k_reduced = true;
  }
  if (k > 0 && kk < k) local.k_reduced = true;
  local.used_k = kk;

  double t_min = std::numeric_limits<double>::infinity();
  for (const auto& s : cert.op().samples().samples()) t_min = std::min(t_min, s.t);
  const std::vector<Point> centers = kmeans(pts, kk, cfg.kmeans_seed);
  std::vector<std::pair<double, Point>> maxima;
  for (const Point& c : centers) {
    const Point m = ascend(cert, c, grid.domain(), t_min, cfg.grad_max_iters, cfg.grad_tol);
    maxima.emplace_back(std::abs(cert(m)), m);
  }
  std::stable_sort(maxima.begin(), maxima.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Point> out;
  for (const auto& [v, m] : maxima) {
    bool dup = false;
    for (const Point& o : out)
      if (distance(o, m) < gap) dup = true;
    if (dup) {
      ++local.deduplicated;
    } else {
      out.push_back(m);
    }
  }
  if (diag) *diag = local;
  return out;
}

RecoveryResult run_refinement(const MeasurementOperator& op, const VectorXd& b, const RefinementConfig& cfg,
                              bool noisy) {
  validate(cfg);
  if (b.size() != op.rows()) throw std::invalid_argument("run_refinement: measurement length mismatch");
  if (cfg.domain.dim() != op.dim()) throw std::invalid_argument("run_refinement: domain dimension mismatch");
  if (noisy && !(cfg.lasso_lambda > 0.0)) throw std::invalid_argument("run_refinement: lasso_lambda must be positive");

  CandidateGrid grid = CandidateGrid::uniform(cfg.domain, cfg.initial_points_per_dim);
  MatrixXd A(op.rows(), 0);
  std::vector<RoundDiagnostics> rounds;
  SolveOutcome last;
  CandidateGrid last_grid = grid;
  bool all_converged = true;
  double prev = std::numeric_limits<double>::quiet_NaN();

  for (int k = 1; k <= cfg.max_rounds; ++k) {
    const Index old_cols = A.cols();
    A.conservativeResize(op.rows(), static_cast<Index>(grid.size()));
    for (Index j = old_cols; j < A.cols(); ++j) A.col(j) = op.column(grid.points()[static_cast<std::size_t>(j)]);

    SolveOutcome outcome = noisy ? solve_lasso(A, b, cfg.lasso_lambda, cfg.solver) : solve_l1_equality(A, b, cfg.solver);
    const double objective = noisy ? outcome.primal_objective / cfg.lasso_lambda : outcome.dual_objective;
    const VectorXd nu = A.transpose() * outcome.dual;
    const double thr = cfg.peak_threshold_schedule(k);
    std::vector<Point> selected;
    for (Index j = 0; j < nu.size(); ++j)
      if (std::abs(nu[j]) >= thr) selected.push_back(grid.points()[static_cast<std::size_t>(j)]);

    RoundDiagnostics diag;
    diag.round = k;
    diag.objective = objective;
    diag.threshold = thr;
    diag.grid_size = grid.size();
    diag.selected = selected.size();
    diag.iterations = outcome.iterations;
    diag.converged = outcome.converged;
    diag.polished = outcome.polished;
    diag.kkt = outcome.kkt;
    rounds.push_back(diag);
    all_converged = all_converged && outcome.converged;
    last = std::move(outcome);
    last_grid = grid;

    if (k > 1 && std::abs(objective - prev) < cfg.stop_tol) break;
    prev = objective;
    if (k == cfg.max_rounds || selected.empty()) break;
    grid = refine_grid(grid, selected);
  }

  DualCertificate certificate(op, last.dual);
  const double gap = cfg.cluster_gap > 0.0 ? cfg.cluster_gap : 3.0 * last_grid.min_spacing();
  PeakDiagnostics peaks;
  std::vector<Point> x_star;
  const VectorXd nu = A.leftCols(static_cast<Index>(last_grid.size())).transpose() * last.dual;
  if (op.dim() == 1) {
    if (cfg.cluster_gap > 0.0) {
      std::vector<std::pair<Point, double>> values;
      for (std::size_t j = 0; j < last_grid.size(); ++j)
        values.emplace_back(last_grid.points()[j], nu[static_cast<Index>(j)]);
      x_star = select_peaks_1d(values, cfg.final_threshold, cfg.cluster_gap);
    } else {
      x_star = select_peaks_1d(last_grid, nu, cfg.final_threshold);
    }
    peaks.candidates = 0;
    for (Index j = 0; j < nu.size(); ++j)
      if (std::abs(nu[j]) >= cfg.final_threshold) ++peaks.candidates;
    peaks.used_k = static_cast<int>(x_star.size());
  } else {
    RefinementConfig c2 = cfg;
    c2.cluster_gap = gap;
    x_star = select_peaks_2d(certificate, last_grid, cfg.final_threshold, cfg.k_sources, c2, &peaks);
  }

  SparseMeasure estimate(op.dim());
  if (!x_star.empty()) estimate = recover_amplitudes(op, x_star, b, cfg.rcond);
  return RecoveryResult{estimate,     x_star,      last_grid.points(),
                        last_grid.spacing(), last.primal, certificate,
                        static_cast<int>(rounds.size()), rounds, peaks,
                        all_converged};
}

}  // namespace heatsrc
