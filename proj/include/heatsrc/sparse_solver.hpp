#pragma once

#include <Eigen/Dense>

#include "heatsrc/forward_op.hpp"

namespace heatsrc {

struct SolverConfig {
  int max_iters = 100000;
  double tol_primal = 1e-9;
  double tol_dual = 1e-9;
  // sigma / tau of the primal-dual iteration; sigma * tau * L^2 < 1 is kept.
  double step_ratio = 1.0;
  int operator_norm_power_iters = 200;
  // Residuals are evaluated (and support polishing attempted) at this cadence.
  int check_every = 50;

  static SolverConfig noiseless() { return {}; }
  static SolverConfig noisy() {
    SolverConfig c;
    c.tol_primal = 1e-7;
    c.tol_dual = 1e-7;
    return c;
  }
};

// feasibility is relative to ||b|| and duality_gap to the primal objective
// (absolute when either is zero).
struct KktResiduals {
  double feasibility = 0.0;
  double certificate_bound = 0.0;
  double support_alignment = 0.0;
  double duality_gap = 0.0;

  bool operator==(const KktResiduals&) const = default;
};

struct SolveOutcome {
  Eigen::VectorXd primal;
  Eigen::VectorXd dual;
  KktResiduals kkt;
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  // ||mu||_1 for the l1 problem; 0.5 ||A mu - b||^2 + lam ||mu||_1 for the LASSO.
  double primal_objective = 0.0;
  // <b, p> for the l1 problem; lam <b, p> - lam^2 ||p||^2 / 2 for the LASSO.
  double dual_objective = 0.0;
};

// min ||mu||_1 s.t. A mu = b, and its dual max <b, p> s.t. ||A^T p||_inf <= 1.
SolveOutcome solve_l1_equality(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const SolverConfig& cfg);
SolveOutcome solve_l1_equality(const DictionaryMatrix& A, const Eigen::VectorXd& b, const SolverConfig& cfg);

// min 0.5 ||A mu - b||^2 + lam ||mu||_1 with dual p = (b - A mu) / lam.
SolveOutcome solve_lasso(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double lam, const SolverConfig& cfg);
SolveOutcome solve_lasso(const DictionaryMatrix& A, const Eigen::VectorXd& b, double lam, const SolverConfig& cfg);

// Power iteration on A^T A from a fixed start vector.
double operator_norm_estimate(const Eigen::MatrixXd& A, int power_iters = 200);

KktResiduals l1_residuals(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& mu,
                          const Eigen::VectorXd& p);
KktResiduals lasso_residuals(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double lam,
                             const Eigen::VectorXd& mu);

}  // namespace heatsrc
