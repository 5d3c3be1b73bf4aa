#include "heatsrc/cert_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace heatsrc {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using cplx = std::complex<double>;

constexpr double kPi = std::numbers::pi;

int jackson_nodes(int p) { return std::max(256, 8 * p + 64); }

// (sin(px/2) / sin(x/2))^4 with the removable singularity at multiples of 2 pi.
double jackson_raw(int p, double x) {
  const double s = std::sin(0.5 * x);
  if (std::abs(s) < 1e-12) {
    const double p2 = static_cast<double>(p) * p;
    return p2 * p2;
  }
  const double r = std::sin(0.5 * p * x) / s;
  return r * r * r * r;
}

// Integral of J_p(theta) e^{-i n theta}; J_p is an even trigonometric polynomial
// of degree 2p - 2, so the periodic trapezoid rule is exact.
double jackson_fourier(int p, int n) {
  const int nodes = jackson_nodes(p) + 2 * std::abs(n);
  const double h = 2.0 * kPi / nodes;
  double acc = 0.0;
  for (int k = 0; k < nodes; ++k) {
    const double x = -kPi + k * h;
    acc += jackson_raw(p, x) * std::cos(n * x);
  }
  return jackson_normalization(p) * acc * h;
}

// The plane wave e^{i d theta} on [-pi/2, pi/2], joined linearly back to its
// value at -pi/2 across [pi/2, 3pi/2]; continuous and 2 pi periodic.
cplx prolonged_wave(double d, double theta) {
  if (theta <= 0.5 * kPi) return std::exp(cplx(0.0, d * theta));
  const cplx start = std::exp(cplx(0.0, 0.5 * kPi * d));
  const cplx slope = (std::exp(cplx(0.0, -0.5 * kPi * d)) - start) / kPi;
  return start + (theta - 0.5 * kPi) * slope;
}

// c_n = a_hat(n) j_hat(n), n = -2p..2p.
std::vector<cplx> axis_coefficients(double d, int p, int quadrature_points) {
  const int nmax = 2 * p;
  std::vector<cplx> out(static_cast<std::size_t>(2 * nmax + 1));
  const double h = 2.0 * kPi / quadrature_points;
  std::vector<cplx> samples(static_cast<std::size_t>(quadrature_points));
  for (int k = 0; k < quadrature_points; ++k) samples[static_cast<std::size_t>(k)] = prolonged_wave(d, -0.5 * kPi + k * h);
  for (int n = -nmax; n <= nmax; ++n) {
    cplx acc = 0.0;
    for (int k = 0; k < quadrature_points; ++k) {
      const double theta = -0.5 * kPi + k * h;
      acc += samples[static_cast<std::size_t>(k)] * std::exp(cplx(0.0, -n * theta));
    }
    const cplx a_hat = acc * h / (2.0 * kPi);
    out[static_cast<std::size_t>(n + nmax)] = a_hat * jackson_fourier(p, n);
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  if (n == 1) {
    v[0] = 0.5 * (lo + hi);
    return v;
  }
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return v;
}

struct Deviation {
  Point lo;
  Point hi;
  double spacing = 0.0;
  double box_sup = 0.0;
  double tail = 0.0;
  double hessian = 0.0;
  double margin = 0.0;
};

// sup of |g(x) - coef a(x - p0)| on a tensor mesh over a box that contains all
// active kernel centres and p0 with a Gaussian-decay pad, a tail bound beyond
// the box and a curvature margin between mesh points.
Deviation deviation(const DualCertificate& g, const Point& p0, double coef, double lambda, int mesh_points) {
  const MeasurementOperator& op = g.op();
  const int dim = op.dim();
  const VectorXd& w = g.weights();

  // Envelope magnitude S bounds |f| everywhere; the pad makes the tail negligible relative to 1e-13 S.
  double envelope = std::abs(coef);
  double t_max = 2.0 * lambda;
  double hessian = std::abs(coef) / (2.0 * lambda);
  Point lo = p0;
  Point hi = p0;
  for (Index s = 0; s < op.rows(); ++s) {
    if (w[s] == 0.0) continue;
    const Sample& smp = op.samples()[s];
    const double peak = std::abs(w[s]) * green_kernel(Point::zero(dim), smp.t, op.kernel());
    envelope += peak;
    hessian += peak / smp.t;
    t_max = std::max(t_max, smp.t);
    for (int i = 0; i < dim; ++i) {
      lo[i] = std::min(lo[i], smp.x[i]);
      hi[i] = std::max(hi[i], smp.x[i]);
    }
  }
  const double pad = envelope > 0.0 ? std::sqrt(2.0 * t_max * std::max(1.0, std::log(envelope / 1e-13))) : 0.0;
  for (int i = 0; i < dim; ++i) {
    lo[i] -= pad;
    hi[i] += pad;
  }

  std::array<std::vector<double>, 2> axes;
  double spacing = 0.0;
  for (int i = 0; i < dim; ++i) {
    axes[static_cast<std::size_t>(i)] = linspace(lo[i], hi[i], mesh_points);
    spacing = std::max(spacing, (hi[i] - lo[i]) / std::max(1, mesh_points - 1));
  }
  const int n1 = mesh_points;
  const int n2 = dim == 2 ? mesh_points : 1;

  // Group active samples by time; within a time the kernel factorises over axes.
  std::map<double, std::vector<Index>> by_time;
  for (Index s = 0; s < op.rows(); ++s)
    if (w[s] != 0.0) by_time[op.samples()[s].t].push_back(s);

  MatrixXd values = MatrixXd::Zero(n1, n2);
  for (const auto& [t, rows] : by_time) {
    std::map<double, Index> u1, u2;
    for (Index s : rows) {
      u1.emplace(op.samples()[s].x[0], 0);
      if (dim == 2) u2.emplace(op.samples()[s].x[1], 0);
    }
    if (dim == 1) u2.emplace(0.0, 0);
    Index c = 0;
    for (auto& [x, idx] : u1) idx = c++;
    c = 0;
    for (auto& [x, idx] : u2) idx = c++;
    MatrixXd W = MatrixXd::Zero(static_cast<Index>(u1.size()), static_cast<Index>(u2.size()));
    for (Index s : rows) {
      const Point& x = op.samples()[s].x;
      W(u1.at(x[0]), dim == 2 ? u2.at(x[1]) : 0) += w[s];
    }
    const double pref = green_kernel(Point::zero(dim), t, op.kernel());
    MatrixXd E1(n1, W.rows());
    for (const auto& [x, j] : u1)
      for (int i = 0; i < n1; ++i) {
        const double d = axes[0][static_cast<std::size_t>(i)] - x;
        E1(i, j) = pref * std::exp(-d * d / (2.0 * t));
      }
    MatrixXd E2(n2, W.cols());
    for (const auto& [x, j] : u2)
      for (int i = 0; i < n2; ++i) {
        if (dim == 1) {
          E2(i, j) = 1.0;
          continue;
        }
        const double d = axes[1][static_cast<std::size_t>(i)] - x;
        E2(i, j) = std::exp(-d * d / (2.0 * t));
      }
    values.noalias() += E1 * W * E2.transpose();
  }

  VectorXd a1(n1), a2(n2);
  for (int i = 0; i < n1; ++i) {
    const double d = axes[0][static_cast<std::size_t>(i)] - p0[0];
    a1[i] = std::exp(-d * d / (4.0 * lambda));
  }
  for (int i = 0; i < n2; ++i) {
    const double d = dim == 2 ? axes[1][static_cast<std::size_t>(i)] - p0[1] : 0.0;
    a2[i] = std::exp(-d * d / (4.0 * lambda));
  }
  values.noalias() -= coef * a1 * a2.transpose();

  Deviation out;
  out.lo = lo;
  out.hi = hi;
  out.spacing = spacing;
  out.box_sup = values.cwiseAbs().maxCoeff();
  out.hessian = hessian;
  const double r = 0.5 * spacing * std::sqrt(static_cast<double>(dim));
  out.margin = 0.5 * hessian * r * r;

  // Outside the box every centre c is at least its distance to the box boundary away.
  auto inner = [&](const Point& x) {
    double d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < dim; ++i) d = std::min({d, x[i] - lo[i], hi[i] - x[i]});
    return std::max(0.0, d);
  };
  double tail = 0.0;
  for (Index s = 0; s < op.rows(); ++s) {
    if (w[s] == 0.0) continue;
    const Sample& smp = op.samples()[s];
    const double d = inner(smp.x);
    tail += std::abs(w[s]) * green_kernel(Point::zero(dim), smp.t, op.kernel()) * std::exp(-d * d / (2.0 * smp.t));
  }
  const double d0 = inner(p0);
  tail += std::abs(coef) * std::exp(-d0 * d0 / (4.0 * lambda));
  out.tail = tail;
  return out;
}

double radius_from_level(double level, double lambda) {
  return std::sqrt(4.0 * lambda * std::log(1.0 / level));
}

// Euclidean projection onto {v : ||v||_1 <= rho}.
VectorXd project_l1_ball(const VectorXd& v, double rho) {
  if (v.lpNorm<1>() <= rho) return v;
  std::vector<double> u(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) u[static_cast<std::size_t>(i)] = std::abs(v[i]);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double cand = (cumsum - rho) / static_cast<double>(j + 1);
    if (u[j] - cand > 0.0) theta = cand;
  }
  VectorXd out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double a = std::max(0.0, std::abs(v[i]) - theta);
    out[i] = v[i] >= 0.0 ? a : -a;
  }
  return out;
}

}  // namespace

CertConfig CertConfig::for_grid(int dim, double lambda, int m) {
  CertConfig c;
  c.dim = dim;
  c.lambda = lambda;
  c.m = m;
  c.p_jackson = std::max(1, m / 4);
  return c;
}

void validate(const CertConfig& cfg) {
  if (cfg.dim != 1 && cfg.dim != 2) throw std::invalid_argument("CertConfig: dim must be 1 or 2");
  if (!(cfg.lambda > 0.0) || !std::isfinite(cfg.lambda)) throw std::invalid_argument("CertConfig: lambda must be positive");
  if (cfg.m < 1) throw std::invalid_argument("CertConfig: m must be positive");
  if (cfg.p_jackson < 1) throw std::invalid_argument("CertConfig: p_jackson must be positive");
  if (cfg.quadrature_points < 16) throw std::invalid_argument("CertConfig: quadrature_points must be >= 16");
  if (cfg.mesh_points < 2) throw std::invalid_argument("CertConfig: mesh_points must be >= 2");
}

SampleSet lab_sample_set(const CertConfig& cfg) {
  validate(cfg);
  return tensor_sample_set(cfg.dim, -1.0, 1.0 / cfg.m, 2 * cfg.m + 1, {2.0 * cfg.lambda});
}

double jackson_normalization(int p) {
  if (p < 1) throw std::invalid_argument("jackson_kernel: p must be >= 1");
  static std::mutex mutex;
  static std::map<int, double> cache;
  {
    std::lock_guard<std::mutex> lock(mutex);
    if (auto it = cache.find(p); it != cache.end()) return it->second;
  }
  const int nodes = jackson_nodes(p);
  const double h = 2.0 * kPi / nodes;
  double acc = 0.0;
  for (int k = 0; k < nodes; ++k) acc += jackson_raw(p, -kPi + k * h);
  const double lam = 1.0 / (acc * h);
  std::lock_guard<std::mutex> lock(mutex);
  cache.emplace(p, lam);
  return lam;
}

double jackson_kernel(int p, double x) { return jackson_normalization(p) * jackson_raw(p, x); }

std::complex<double> JacksonCoefficients::at(int n1, int n2) const {
  const int nmax = max_index();
  if (std::abs(n1) > nmax || std::abs(n2) > nmax || (dim == 1 && n2 != 0)) return 0.0;
  const cplx f2 = dim == 2 ? factor2[static_cast<std::size_t>(n2 + nmax)] : cplx(1.0);
  return factor1[static_cast<std::size_t>(n1 + nmax)] * f2;
}

double JacksonCoefficients::l2_norm() const {
  double s1 = 0.0;
  for (const cplx& c : factor1) s1 += std::norm(c);
  double s2 = 1.0;
  if (dim == 2) {
    s2 = 0.0;
    for (const cplx& c : factor2) s2 += std::norm(c);
  }
  return std::sqrt(s1 * s2);
}

std::complex<double> JacksonCoefficients::evaluate(const Point& omega) const {
  const int nmax = max_index();
  auto axis = [&](const std::vector<cplx>& f, double w) {
    cplx acc = 0.0;
    for (int n = -nmax; n <= nmax; ++n) acc += f[static_cast<std::size_t>(n + nmax)] * std::exp(cplx(0.0, n * w));
    return acc;
  };
  const cplx v = axis(factor1, omega[0]);
  return dim == 2 ? v * axis(factor2, omega[1]) : v;
}

JacksonCoefficients jackson_coefficients(const Point& delta, int p, int quadrature_points) {
  if (p < 1) throw std::invalid_argument("jackson_coefficients: p must be >= 1");
  if (quadrature_points < 16) throw std::invalid_argument("jackson_coefficients: too few quadrature points");
  for (int i = 0; i < delta.dim; ++i)
    if (!(std::abs(delta[i]) <= 0.5)) throw std::invalid_argument("jackson_coefficients: |delta| must be <= 1/2");
  JacksonCoefficients c;
  c.dim = delta.dim;
  c.p = p;
  c.factor1 = axis_coefficients(delta[0], p, quadrature_points);
  if (delta.dim == 2) c.factor2 = axis_coefficients(delta[1], p, quadrature_points);
  return c;
}

double plane_wave_sup_error(const JacksonCoefficients& c, const Point& delta, int mesh_points) {
  if (mesh_points < 2) throw std::invalid_argument("plane_wave_sup_error: mesh_points must be >= 2");
  const std::vector<double> w = linspace(-0.5 * kPi, 0.5 * kPi, mesh_points);
  const int nmax = c.max_index();
  auto axis = [&](const std::vector<cplx>& f, double d) {
    std::vector<cplx> target(w.size()), approx(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      target[i] = std::exp(cplx(0.0, d * w[i]));
      cplx acc = 0.0;
      for (int n = -nmax; n <= nmax; ++n) acc += f[static_cast<std::size_t>(n + nmax)] * std::exp(cplx(0.0, n * w[i]));
      approx[i] = acc;
    }
    return std::pair{target, approx};
  };
  const auto [t1, p1] = axis(c.factor1, delta[0]);
  if (c.dim == 1) {
    double err = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) err = std::max(err, std::abs(t1[i] - p1[i]));
    return err;
  }
  const auto [t2, p2] = axis(c.factor2, delta[1]);
  double err = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j) err = std::max(err, std::abs(t1[i] * t2[j] - p1[i] * p2[j]));
  return err;
}

CertificateBuild build_certificate_on_grid(const UniformSampleGrid& grid, const Point& p0, int p_jackson,
                                           double scale, int quadrature_points, int mesh_points) {
  if (grid.dim != 1 && grid.dim != 2) throw std::invalid_argument("build_certificate_on_grid: dim must be 1 or 2");
  if (p0.dim != grid.dim) throw std::invalid_argument("build_certificate_on_grid: dimension mismatch");
  if (!(grid.spacing > 0.0) || grid.count < 1 || !(grid.t > 0.0))
    throw std::invalid_argument("build_certificate_on_grid: invalid sample grid");
  if (!std::isfinite(scale)) throw std::invalid_argument("build_certificate_on_grid: scale must be finite");
  std::array<int, 2> k{0, 0};
  Point delta = p0;
  int room = std::numeric_limits<int>::max();
  for (int i = 0; i < grid.dim; ++i) {
    const double u = (p0[i] - grid.origin) / grid.spacing;
    const int ki = static_cast<int>(std::lround(u));
    k[static_cast<std::size_t>(i)] = ki;
    delta[i] = u - ki;
    room = std::min({room, ki, grid.count - 1 - ki});
  }
  const int p = p_jackson > 0 ? p_jackson : room / 2;
  if (p < 1 || 2 * p > room)
    throw std::invalid_argument("build_certificate_on_grid: sample grid lacks the translates p0 + n h, |n| <= 2p");
  const JacksonCoefficients c = jackson_coefficients(delta, p, quadrature_points);
  const MeasurementOperator op(tensor_sample_set(grid.dim, grid.origin, grid.spacing, grid.count, {grid.t}),
                               KernelParams{grid.dim});
  const double lambda = 0.5 * grid.t;
  const double g0 = green_kernel(Point::zero(grid.dim), grid.t, op.kernel());
  const int nmax = c.max_index();

  VectorXd w = VectorXd::Zero(op.rows());
  double imag = 0.0;
  const int lo2 = grid.dim == 2 ? -nmax : 0;
  const int hi2 = grid.dim == 2 ? nmax : 0;
  for (int n1 = -nmax; n1 <= nmax; ++n1) {
    for (int n2 = lo2; n2 <= hi2; ++n2) {
      const cplx cn = c.at(n1, n2);
      const int i1 = k[0] + n1;
      const Index row = grid.dim == 2 ? static_cast<Index>(i1) * grid.count + (k[1] + n2) : i1;
      w[row] += scale * cn.real() / g0;
      imag += std::abs(scale * cn.imag());
    }
  }
  CertificateBuild out{DualCertificate(op, w), c, p0, scale, k, delta, 0.0, imag, c.l2_norm()};
  out.sup_error = deviation(out.certificate, p0, scale, lambda, mesh_points).box_sup;
  return out;
}

CertificateBuild build_certificate_g(const CertConfig& cfg, const Point& p0, double scale) {
  validate(cfg);
  if (p0.dim != cfg.dim) throw std::invalid_argument("build_certificate_g: dimension mismatch");
  for (int i = 0; i < cfg.dim; ++i)
    if (!(std::abs(p0[i]) <= 0.5)) throw std::invalid_argument("build_certificate_g: p0 must lie in [-1/2, 1/2]^dim");
  const UniformSampleGrid grid{cfg.dim, -1.0, 1.0 / cfg.m, 2 * cfg.m + 1, 2.0 * cfg.lambda};
  return build_certificate_on_grid(grid, p0, cfg.p_jackson, scale, cfg.quadrature_points, cfg.mesh_points);
}

CertificateReport verify_soft_conditions(const DualCertificate& g, const SparseMeasure& mu0, std::size_t i0,
                                         double lambda, int mesh_points, const NoiseModel& noise) {
  if (i0 >= mu0.size()) throw std::invalid_argument("verify_soft_conditions: i0 out of range");
  if (!(lambda > 0.0)) throw std::invalid_argument("verify_soft_conditions: lambda must be positive");
  if (mu0.dim() != g.op().dim()) throw std::invalid_argument("verify_soft_conditions: dimension mismatch");
  CertificateReport r;
  r.bound_noiseless = std::numeric_limits<double>::infinity();
  r.bound_noisy = std::numeric_limits<double>::infinity();
  double anchor = 0.0;
  for (const Atom& a : mu0.atoms()) anchor += a.amplitude * g(a.position);
  r.anchor = anchor;
  const Point p0 = mu0.atoms()[i0].position;
  const double g_p0 = g(p0);
  const Deviation dev = deviation(g, p0, g_p0, lambda, mesh_points);
  r.box_lo = dev.lo;
  r.box_hi = dev.hi;
  r.sup_error = std::max(dev.box_sup, dev.tail);
  if (!(anchor > 0.0)) return r;

  r.sigma = std::abs(g_p0) / anchor;
  r.box_sup = dev.box_sup / anchor;
  r.tail_bound = dev.tail / anchor;
  r.mesh_margin = dev.margin / anchor;
  r.tau = 1.0 - (std::max(r.box_sup, r.tail_bound) + r.mesh_margin);
  r.lambda_norm = g.weights().norm() / anchor;
  r.feasible = r.tau > 0.0 && r.tau <= 1.0 && r.sigma >= 0.0;
  if (!r.feasible) return r;
  r.bound_noiseless = r.tau >= r.sigma ? 0.0 : recovery_radius(r.tau, r.sigma, lambda);
  const double level = noisy_recovery_level(std::min(r.tau, r.sigma), r.sigma, r.lambda_norm, noise.eps, noise.rho);
  if (level > 0.0) r.bound_noisy = level >= 1.0 ? 0.0 : radius_from_level(level, lambda);
  return r;
}

CertificateReport certify_atom(const CertConfig& cfg, const SparseMeasure& mu0, std::size_t i0,
                               const NoiseModel& noise) {
  if (i0 >= mu0.size()) throw std::invalid_argument("certify_atom: i0 out of range");
  const CertificateBuild build = build_certificate_g(cfg, mu0.atoms()[i0].position, 1.0);
  CertificateReport r = verify_soft_conditions(build.certificate, mu0, i0, cfg.lambda, cfg.mesh_points, noise);
  r.coeff_norm = build.coeff_norm;
  return r;
}

double recovery_radius(double tau, double sigma, double lambda) {
  if (!(tau > 0.0)) throw std::invalid_argument("recovery_radius: tau must be positive");
  if (tau > sigma) throw std::invalid_argument("recovery_radius: tau > sigma gives a vacuous bound");
  if (!(lambda > 0.0)) throw std::invalid_argument("recovery_radius: lambda must be positive");
  return radius_from_level(tau / sigma, lambda);
}

double noisy_recovery_level(double tau, double sigma, double lambda_norm, double eps, double rho) {
  if (!(sigma > 0.0)) throw std::invalid_argument("noisy_recovery_level: sigma must be positive");
  if (!(rho >= 1.0)) throw std::invalid_argument("noisy_recovery_level: rho must be >= 1");
  if (!(eps >= 0.0)) throw std::invalid_argument("noisy_recovery_level: eps must be >= 0");
  return tau / sigma - (2.0 * lambda_norm * eps + (rho - 1.0)) / (rho * sigma);
}

double noisy_recovery_radius(double tau, double sigma, double lambda, double lambda_norm, double eps, double rho) {
  if (!(tau > 0.0) || tau > sigma) throw std::invalid_argument("noisy_recovery_radius: need 0 < tau <= sigma");
  if (!(lambda > 0.0)) throw std::invalid_argument("noisy_recovery_radius: lambda must be positive");
  const double level = noisy_recovery_level(tau, sigma, lambda_norm, eps, rho);
  if (!(level > 0.0)) throw std::domain_error("noisy_recovery_radius: bound is vacuous");
  return radius_from_level(level, lambda);
}

ConstrainedLsOutcome solve_l1_ball_ls(const MatrixXd& A, const VectorXd& b, double rho, int max_iters, double tol) {
  if (A.rows() != b.size()) throw std::invalid_argument("solve_l1_ball_ls: shape mismatch");
  if (!(rho >= 0.0)) throw std::invalid_argument("solve_l1_ball_ls: rho must be >= 0");
  ConstrainedLsOutcome out;
  out.solution = VectorXd::Zero(A.cols());
  const Eigen::JacobiSVD<MatrixXd> svd(A);
  const double L = svd.singularValues().size() > 0 ? svd.singularValues()[0] : 0.0;
  if (L == 0.0 || rho == 0.0) {
    out.converged = true;
    return out;
  }
  const double step = 1.0 / (L * L);
  VectorXd x = out.solution;
  VectorXd y = x;
  double theta = 1.0;
  for (int k = 1; k <= max_iters; ++k) {
    const VectorXd xn = project_l1_ball(y - step * (A.transpose() * (A * y - b)), rho);
    const double theta_n = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    const double change = (xn - x).norm();
    y = xn + ((theta - 1.0) / theta_n) * (xn - x);
    // Restart momentum when the objective would rise.
    if ((A * xn - b).squaredNorm() > (A * x - b).squaredNorm()) {
      y = xn;
      theta = 1.0;
    } else {
      theta = theta_n;
    }
    x = xn;
    out.iterations = k;
    if (change <= tol * std::max(1.0, x.norm())) {
      out.converged = true;
      break;
    }
  }
  out.solution = x;
  return out;
}

StableCheck verify_soft_stable_inequality(const DictionaryMatrix& A, const VectorXd& b, const Point& x0,
                                          const CertificateReport& report, double lambda, double rho, double eps) {
  StableCheck out;
  if (!report.feasible || !(report.sigma > 0.0)) return out;
  out.required = (rho * report.tau - 2.0 * report.lambda_norm * eps + 1.0 - rho) / (rho * report.sigma);
  if (out.required <= 0.0) {
    out.vacuous = true;
    out.verdict = StableVerdict::holds;
    return out;
  }
  const ConstrainedLsOutcome sol = solve_l1_ball_ls(A.entries, b, rho);
  if (!sol.converged) return out;
  const double vmax = sol.solution.cwiseAbs().maxCoeff();
  if (!(vmax > 0.0)) return out;
  for (Index j = 0; j < sol.solution.size(); ++j) {
    if (std::abs(sol.solution[j]) <= 1e-3 * vmax) continue;
    ++out.support_size;
    out.achieved = std::max(out.achieved, autocorrelation(A.grid[static_cast<std::size_t>(j)] - x0, lambda));
  }
  out.verdict = out.achieved >= out.required ? StableVerdict::holds : StableVerdict::fails;
  return out;
}

}  // namespace heatsrc
