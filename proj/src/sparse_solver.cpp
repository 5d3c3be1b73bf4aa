#include "heatsrc/sparse_solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace heatsrc {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Eigen-directions of A A^T below this fraction of the largest eigenvalue are
// treated as numerically absent from the range of A.
constexpr double kWhiteningFloor = 1e-15;

void validate(const SolverConfig& cfg) {
  if (cfg.max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be >= 1");
  if (!(cfg.tol_primal > 0.0) || !(cfg.tol_dual > 0.0))
    throw std::invalid_argument("SolverConfig: tolerances must be positive");
  if (!(cfg.step_ratio > 0.0)) throw std::invalid_argument("SolverConfig: step_ratio must be positive");
  if (cfg.check_every < 1) throw std::invalid_argument("SolverConfig: check_every must be >= 1");
  if (cfg.operator_norm_power_iters < 1)
    throw std::invalid_argument("SolverConfig: operator_norm_power_iters must be >= 1");
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

VectorXd soft_threshold(const VectorXd& v, double t) {
  return v.unaryExpr([t](double a) { return a > t ? a - t : (a < -t ? a + t : 0.0); });
}

// Symmetric whitening W = (A A^T)^(-1/2) restricted to the numerical range of A.
struct Whitening {
  MatrixXd basis;       // d x k eigenvectors
  VectorXd eigenvalues; // k
  MatrixXd W;           // d x d
};

Whitening whiten(const MatrixXd& A) {
  const MatrixXd H = A * A.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(H);
  const VectorXd& w = es.eigenvalues();
  const double wmax = w.maxCoeff();
  std::vector<Index> keep;
  for (Index i = 0; i < w.size(); ++i)
    if (w[i] > kWhiteningFloor * wmax) keep.push_back(i);
  Whitening out;
  out.basis.resize(A.rows(), static_cast<Index>(keep.size()));
  out.eigenvalues.resize(static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.basis.col(static_cast<Index>(k)) = es.eigenvectors().col(keep[k]);
    out.eigenvalues[static_cast<Index>(k)] = w[keep[k]];
  }
  out.W = out.basis * out.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() * out.basis.transpose();
  return out;
}

bool l1_accepts(const KktResiduals& k, const SolverConfig& cfg) {
  return k.feasibility <= cfg.tol_primal && k.certificate_bound <= cfg.tol_dual &&
         k.support_alignment <= cfg.tol_dual && k.duality_gap <= std::max(cfg.tol_primal, cfg.tol_dual);
}

bool lasso_accepts(const KktResiduals& k, const SolverConfig& cfg) {
  return k.feasibility <= cfg.tol_primal && k.certificate_bound <= cfg.tol_dual &&
         k.support_alignment <= cfg.tol_dual && k.duality_gap <= std::max(cfg.tol_primal, cfg.tol_dual);
}

std::vector<Index> support_of(const VectorXd& x, double rel) {
  std::vector<Index> s;
  const double xmax = x.cwiseAbs().maxCoeff();
  if (xmax == 0.0) return s;
  for (Index j = 0; j < x.size(); ++j)
    if (std::abs(x[j]) > rel * xmax) s.push_back(j);
  return s;
}

MatrixXd columns(const MatrixXd& A, const std::vector<Index>& idx) {
  MatrixXd out(A.rows(), static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Index>(k)) = A.col(idx[k]);
  return out;
}

// Exact primal and dual on a candidate support S: A_S z = b and the smallest
// correction of p with A_S^T p = sign(z). Accepted only if the pair passes
// the KKT test on the full dictionary.
bool polish_on_support(const MatrixXd& A, const VectorXd& b, const VectorXd& p, const std::vector<Index>& S,
                       const SolverConfig& cfg, SolveOutcome& out) {
  const MatrixXd AS = columns(A, S);
  const VectorXd z = AS.colPivHouseholderQr().solve(b);
  if (!z.allFinite()) return false;
  std::vector<Index> T;
  for (Index i = 0; i < z.size(); ++i)
    if (z[i] != 0.0) T.push_back(S[static_cast<std::size_t>(i)]);
  if (T.empty()) return false;
  const MatrixXd AT = columns(A, T);
  VectorXd zt(static_cast<Index>(T.size()));
  VectorXd s(static_cast<Index>(T.size()));
  for (std::size_t k = 0, i = 0; k < S.size(); ++k) {
    if (z[static_cast<Index>(k)] == 0.0) continue;
    zt[static_cast<Index>(i)] = z[static_cast<Index>(k)];
    s[static_cast<Index>(i)] = sign(z[static_cast<Index>(k)]);
    ++i;
  }
  const VectorXd r = AT.transpose() * p - s;
  const VectorXd ph = p - AT.transpose().completeOrthogonalDecomposition().solve(r);
  VectorXd mu = VectorXd::Zero(A.cols());
  for (std::size_t k = 0; k < T.size(); ++k) mu[T[k]] = zt[static_cast<Index>(k)];
  const KktResiduals kkt = l1_residuals(A, b, mu, ph);
  if (!l1_accepts(kkt, cfg)) return false;
  out.primal = mu;
  out.dual = ph;
  out.kkt = kkt;
  out.polished = true;
  return true;
}

// Candidate supports come from the primal iterate (entries above a relative
// level) and from the dual iterate (points where |A^T p| is within delta of 1).
bool polish_l1(const MatrixXd& A, const VectorXd& b, const VectorXd& x, const VectorXd& p, const SolverConfig& cfg,
               SolveOutcome& out) {
  std::vector<std::vector<Index>> tried;
  auto attempt = [&](const std::vector<Index>& S) {
    if (S.empty() || static_cast<Index>(S.size()) > A.rows()) return false;
    for (const auto& t : tried)
      if (t == S) return false;
    tried.push_back(S);
    return polish_on_support(A, b, p, S, cfg, out);
  };
  for (double rel : {1e-3, 1e-6, 1e-9, 1e-12})
    if (attempt(support_of(x, rel))) return true;
  const VectorXd g = (A.transpose() * p).cwiseAbs();
  for (double delta : {1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10}) {
    std::vector<Index> S;
    for (Index j = 0; j < g.size(); ++j)
      if (g[j] >= 1.0 - delta) S.push_back(j);
    if (attempt(S)) return true;
  }
  return false;
}

double lasso_objective(const MatrixXd& AS, const VectorXd& b, double lam, const VectorXd& z) {
  return 0.5 * (AS * z - b).squaredNorm() + lam * z.lpNorm<1>();
}

// argmin_z 0.5 ||A_S z - b||^2 + lam theta^T z. With A_S P = Q R this is
// z = P R^{-1} (Q^T b - lam R^{-T} P^T theta), which avoids forming A_S^T A_S.
VectorXd active_minimizer(const MatrixXd& AS, const VectorXd& b, double lam, const VectorXd& theta) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(AS);
  const Index n = AS.cols();
  if (qr.rank() == n) {
    const auto R = qr.matrixR().topLeftCorner(n, n).template triangularView<Eigen::Upper>();
    const VectorXd pt = qr.colsPermutation().transpose() * theta;
    const VectorXd u = R.transpose().solve(pt);
    const VectorXd qtb = (qr.householderQ().transpose() * b).head(n);
    const VectorXd w = R.solve(qtb - lam * u);
    return qr.colsPermutation() * w;
  }
  const MatrixXd G = AS.transpose() * AS;
  return G.completeOrthogonalDecomposition().solve(AS.transpose() * b - lam * theta);
}

// Active-set (feature-sign) iteration for the LASSO, warm-started from x.
// Returns true once the exact optimality conditions hold to relative tol.
bool feature_sign(const MatrixXd& A, const VectorXd& b, double lam, VectorXd& x, int max_steps, double tol) {
  std::vector<Index> active = support_of(x, 1e-12);
  VectorXd full = VectorXd::Zero(A.cols());
  for (Index j : active) full[j] = x[j];
  std::vector<char> in_active(static_cast<std::size_t>(A.cols()), 0);
  for (Index j : active) in_active[static_cast<std::size_t>(j)] = 1;

  // Set when the last step landed on the unconstrained minimizer of the active
  // subproblem, in which case the nonzero conditions hold up to rounding.
  bool solved_active = false;
  for (int step = 0; step < max_steps; ++step) {
    VectorXd r = b;
    for (Index j : active) r -= full[j] * A.col(j);
    const VectorXd c = A.transpose() * r;

    bool nonzero_ok = solved_active;
    if (!nonzero_ok) {
      nonzero_ok = true;
      for (Index j : active)
        if (std::abs(c[j] - lam * sign(full[j])) > tol * lam) nonzero_ok = false;
    }
    VectorXd theta = VectorXd::Zero(static_cast<Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) theta[static_cast<Index>(k)] = sign(full[active[k]]);

    if (nonzero_ok) {
      Index jstar = -1;
      double best = 0.0;
      for (Index j = 0; j < A.cols(); ++j) {
        if (in_active[static_cast<std::size_t>(j)]) continue;
        if (std::abs(c[j]) > best) {
          best = std::abs(c[j]);
          jstar = j;
        }
      }
      if (jstar < 0 || best <= lam * (1.0 + tol)) {
        x = full;
        return true;
      }
      active.push_back(jstar);
      in_active[static_cast<std::size_t>(jstar)] = 1;
      theta.conservativeResize(theta.size() + 1);
      theta[theta.size() - 1] = sign(c[jstar]);
    }

    const MatrixXd AS = columns(A, active);
    VectorXd xs(static_cast<Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) xs[static_cast<Index>(k)] = full[active[k]];
    const VectorXd xnew = active_minimizer(AS, b, lam, theta);

    VectorXd best = xnew;
    double fbest = lasso_objective(AS, b, lam, xnew);
    solved_active = true;
    for (Index i = 0; i < xs.size(); ++i) {
      if (xs[i] == 0.0 || sign(xnew[i]) == sign(xs[i])) continue;
      const double t = xs[i] / (xs[i] - xnew[i]);
      VectorXd z = xs + t * (xnew - xs);
      z[i] = 0.0;
      const double f = lasso_objective(AS, b, lam, z);
      if (f < fbest) {
        fbest = f;
        best = z;
        solved_active = false;
      }
    }

    std::vector<Index> next;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const Index j = active[k];
      full[j] = best[static_cast<Index>(k)];
      if (full[j] != 0.0) {
        next.push_back(j);
      } else {
        in_active[static_cast<std::size_t>(j)] = 0;
      }
    }
    active = std::move(next);
  }
  x = full;
  return false;
}

// The l1 vertex as the vanishing-lambda limit of the LASSO: the exact LASSO
// support at small lambda, warm-started from x, is tried as the l1 support.
bool homotopy_polish_l1(const MatrixXd& A, const VectorXd& b, const VectorXd& x, const VectorXd& p,
                        const SolverConfig& cfg, SolveOutcome& out) {
  const double lam_max = (A.transpose() * b).cwiseAbs().maxCoeff();
  const int steps = 4 * static_cast<int>(A.rows()) + 20;
  VectorXd xl = x;
  for (double rel : {1e-6, 1e-8, 1e-10, 1e-12}) {
    const double lam = rel * lam_max;
    if (!feature_sign(A, b, lam, xl, steps, 1e-10)) continue;
    const std::vector<Index> S = support_of(xl, 0.0);
    if (S.empty() || static_cast<Index>(S.size()) > A.rows()) continue;
    if (polish_on_support(A, b, p, S, cfg, out)) return true;
    const VectorXd p_lam = (b - A * xl) / lam;
    if (polish_on_support(A, b, p_lam, S, cfg, out)) return true;
  }
  return false;
}

SolveOutcome zero_outcome(const MatrixXd& A, const VectorXd& b) {
  SolveOutcome out;
  out.primal = VectorXd::Zero(A.cols());
  out.dual = VectorXd::Zero(b.size());
  out.converged = true;
  return out;
}

void check_shapes(const MatrixXd& A, const VectorXd& b) {
  if (A.rows() != b.size()) throw std::invalid_argument("solver: A and b have incompatible sizes");
  if (A.cols() == 0) throw std::invalid_argument("solver: empty dictionary");
  if (!A.allFinite() || !b.allFinite()) throw std::invalid_argument("solver: non-finite input");
}

void fill_l1_objectives(SolveOutcome& out, const VectorXd& b) {
  out.primal_objective = out.primal.lpNorm<1>();
  out.dual_objective = b.dot(out.dual);
}

void fill_lasso_objectives(SolveOutcome& out, const MatrixXd& A, const VectorXd& b, double lam) {
  const VectorXd r = b - A * out.primal;
  out.primal_objective = 0.5 * r.squaredNorm() + lam * out.primal.lpNorm<1>();
  out.dual_objective = lam * b.dot(out.dual) - 0.5 * lam * lam * out.dual.squaredNorm();
}

}  // namespace

double operator_norm_estimate(const MatrixXd& A, int power_iters) {
  if (A.size() == 0) throw std::invalid_argument("operator_norm_estimate: empty matrix");
  VectorXd v(A.cols());
  for (Index j = 0; j < v.size(); ++j) v[j] = 1.0 + 0.5 * std::sin(1.0 + 0.7 * static_cast<double>(j));
  v.normalize();
  double estimate = 0.0;
  for (int k = 0; k < power_iters; ++k) {
    const VectorXd w = A.transpose() * (A * v);
    const double n = w.norm();
    if (n == 0.0) return estimate;
    estimate = std::sqrt(v.dot(w));
    v = w / n;
  }
  return std::max(estimate, (A * v).norm());
}

KktResiduals l1_residuals(const MatrixXd& A, const VectorXd& b, const VectorXd& mu, const VectorXd& p) {
  KktResiduals k;
  const double bn = b.norm();
  k.feasibility = (A * mu - b).norm() / (bn > 0.0 ? bn : 1.0);
  const VectorXd g = A.transpose() * p;
  k.certificate_bound = std::max(0.0, g.cwiseAbs().maxCoeff() - 1.0);
  for (Index j = 0; j < mu.size(); ++j)
    if (mu[j] != 0.0) k.support_alignment = std::max(k.support_alignment, std::abs(sign(mu[j]) - g[j]));
  const double primal = mu.lpNorm<1>();
  const double gap = std::abs(primal - b.dot(p));
  k.duality_gap = primal > 0.0 ? gap / primal : gap;
  return k;
}

KktResiduals lasso_residuals(const MatrixXd& A, const VectorXd& b, double lam, const VectorXd& mu) {
  KktResiduals k;
  const VectorXd r = b - A * mu;
  const VectorXd p = r / lam;
  const double bn = b.norm();
  k.feasibility = (r - lam * p).norm() / (bn > 0.0 ? bn : 1.0);
  const VectorXd g = A.transpose() * p;
  const double gmax = g.cwiseAbs().maxCoeff();
  k.certificate_bound = std::max(0.0, gmax - 1.0);
  for (Index j = 0; j < mu.size(); ++j)
    if (mu[j] != 0.0) k.support_alignment = std::max(k.support_alignment, std::abs(g[j] - sign(mu[j])));
  const double primal = 0.5 * r.squaredNorm() + lam * mu.lpNorm<1>();
  const VectorXd pf = p / std::max(1.0, gmax);
  const double dual = lam * b.dot(pf) - 0.5 * lam * lam * pf.squaredNorm();
  const double gap = std::abs(primal - dual);
  k.duality_gap = primal > 0.0 ? gap / primal : gap;
  return k;
}

SolveOutcome solve_l1_equality(const MatrixXd& A, const VectorXd& b_in, const SolverConfig& cfg) {
  validate(cfg);
  check_shapes(A, b_in);
  if (b_in.squaredNorm() == 0.0) return zero_outcome(A, b_in);
  // The iteration runs on b / ||b||, so the primal scales with b and the dual is scale-free.
  const double scale = b_in.norm();
  const VectorXd b = b_in / scale;

  const Whitening wh = whiten(A);
  const MatrixXd At = wh.W * A;
  const VectorXd bt = wh.W * b;
  const double L = operator_norm_estimate(At, cfg.operator_norm_power_iters);
  const double tau = 0.98 / (L * std::sqrt(cfg.step_ratio));
  const double sigma = 0.98 * std::sqrt(cfg.step_ratio) / L;

  VectorXd x = VectorXd::Zero(A.cols());
  VectorXd xbar = x;
  VectorXd q = VectorXd::Zero(A.rows());
  SolveOutcome out;
  for (int k = 1; k <= cfg.max_iters; ++k) {
    q -= sigma * (At * xbar - bt);
    const VectorXd xn = soft_threshold(x + tau * (At.transpose() * q), tau);
    xbar = 2.0 * xn - x;
    x = xn;
    if (k % cfg.check_every != 0 && k != cfg.max_iters) continue;

    const VectorXd p = wh.W * q;
    out.iterations = k;
    out.primal = x;
    out.dual = p;
    out.kkt = l1_residuals(A, b, x, p);
    if (l1_accepts(out.kkt, cfg) || polish_l1(A, b, x, p, cfg, out)) {
      out.converged = true;
      break;
    }
    const int check = k / cfg.check_every;
    const bool scheduled = check >= 8 && ((check & (check - 1)) == 0 || check % 64 == 0);
    if ((scheduled || k == cfg.max_iters) && homotopy_polish_l1(A, b, x, p, cfg, out)) {
      out.converged = true;
      break;
    }
  }
  out.primal *= scale;
  fill_l1_objectives(out, b_in);
  return out;
}

SolveOutcome solve_l1_equality(const DictionaryMatrix& A, const VectorXd& b, const SolverConfig& cfg) {
  return solve_l1_equality(A.entries, b, cfg);
}

SolveOutcome solve_lasso(const MatrixXd& A, const VectorXd& b, double lam, const SolverConfig& cfg) {
  if (!(lam > 0.0) || !std::isfinite(lam)) throw std::invalid_argument("solve_lasso: lambda must be positive");
  validate(cfg);
  check_shapes(A, b);
  if (b.squaredNorm() == 0.0) return zero_outcome(A, b);

  SolveOutcome out;
  auto finish = [&](const VectorXd& mu, int iters, bool polished) {
    out.primal = mu;
    out.dual = (b - A * mu) / lam;
    out.kkt = lasso_residuals(A, b, lam, mu);
    out.iterations = iters;
    out.polished = polished;
    out.converged = lasso_accepts(out.kkt, cfg);
    fill_lasso_objectives(out, A, b, lam);
  };
  if ((A.transpose() * b).cwiseAbs().maxCoeff() <= lam) {
    finish(VectorXd::Zero(A.cols()), 0, false);
    return out;
  }

  const Whitening wh = whiten(A);
  const MatrixXd At = wh.W * A;
  const VectorXd bt = wh.W * b;
  const double L = operator_norm_estimate(At, cfg.operator_norm_power_iters);
  const double tau = 0.98 / (L * std::sqrt(cfg.step_ratio));
  const double sigma = 0.98 * std::sqrt(cfg.step_ratio) / L;
  // prox of sigma F* with F*(y) = <bt, y> + lam/2 y^T (A A^T)^{-1} y, diagonal in the eigenbasis.
  const VectorXd shrink = (1.0 + sigma * lam * wh.eigenvalues.cwiseInverse().array()).inverse().matrix();
  const double tol = std::min(cfg.tol_primal, cfg.tol_dual);
  const int polish_steps = 4 * static_cast<int>(A.rows()) + 20;

  VectorXd x = VectorXd::Zero(A.cols());
  VectorXd xbar = x;
  VectorXd y = VectorXd::Zero(A.rows());
  for (int k = 1; k <= cfg.max_iters; ++k) {
    const VectorXd v = y + sigma * (At * xbar) - sigma * bt;
    y = wh.basis * (shrink.asDiagonal() * (wh.basis.transpose() * v));
    const VectorXd xn = soft_threshold(x - tau * (At.transpose() * y), tau);
    xbar = 2.0 * xn - x;
    x = xn;
    if (k % cfg.check_every != 0 && k != cfg.max_iters) continue;
    finish(x, k, false);
    if (out.converged) return out;
    const int check = k / cfg.check_every;
    if ((check & (check - 1)) != 0 && check % 64 != 0 && k != cfg.max_iters) continue;
    VectorXd xp = x;
    if (feature_sign(A, b, lam, xp, polish_steps, 0.1 * tol)) {
      finish(xp, k, true);
      if (out.converged) return out;
    }
    finish(x, k, false);
  }
  return out;
}

SolveOutcome solve_lasso(const DictionaryMatrix& A, const VectorXd& b, double lam, const SolverConfig& cfg) {
  return solve_lasso(A.entries, b, lam, cfg);
}

}  // namespace heatsrc
