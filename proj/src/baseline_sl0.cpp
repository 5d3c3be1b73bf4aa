#include "heatsrc/baseline_sl0.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace heatsrc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void validate(const Sl0Config& cfg) {
  if (!(cfg.sigma_decrease > 0.0 && cfg.sigma_decrease < 1.0))
    throw std::invalid_argument("Sl0Config: sigma_decrease must lie in (0, 1)");
  if (cfg.inner_iters < 1) throw std::invalid_argument("Sl0Config: inner_iters must be >= 1");
  if (!(cfg.step_mu > 0.0)) throw std::invalid_argument("Sl0Config: step_mu must be positive");
  if (!std::isfinite(cfg.sigma_min)) throw std::invalid_argument("Sl0Config: sigma_min must be finite");
}

double sl0_surrogate(const VectorXd& mu, double sigma) {
  double s = 0.0;
  for (Index j = 0; j < mu.size(); ++j) s += 1.0 - std::exp(-mu[j] * mu[j] / (2.0 * sigma * sigma));
  return s;
}

Sl0Result sl0_solve_traced(const MatrixXd& A, const VectorXd& b, const Sl0Config& cfg) {
  validate(cfg);
  if (A.rows() != b.size()) throw std::invalid_argument("sl0_solve: shape mismatch");
  if (A.rows() == 0 || A.cols() == 0) throw std::invalid_argument("sl0_solve: empty matrix");
  const Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  // Numerical rank at machine precision relative to s_max; heat-kernel matrices
  // are mathematically full rank, so only exact degeneracy is rejected.
  const double cut = s[0] * std::numeric_limits<double>::epsilon();
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s[i] > cut) ++rank;
  if (rank < A.rows()) throw std::invalid_argument("sl0_solve: A is not of full row rank");
  const MatrixXd pinv =
      svd.matrixV() * s.head(rank).cwiseInverse().asDiagonal() * svd.matrixU().leftCols(rank).transpose();

  Sl0Result out;
  const double bn = b.norm();
  VectorXd mu = pinv * b;
  out.solution = mu;
  if (bn == 0.0) return out;
  const double sigma0 = 2.0 * mu.cwiseAbs().maxCoeff();
  const double sigma_min = cfg.sigma_min > 0.0 ? cfg.sigma_min : 1e-4 * sigma0;
  for (double sigma = sigma0; sigma > sigma_min; sigma *= cfg.sigma_decrease) {
    Sl0Stage stage;
    stage.sigma = sigma;
    stage.surrogate_before = sl0_surrogate(mu, sigma);
    for (int it = 0; it < cfg.inner_iters; ++it) {
      // Ascent on sum exp(-mu^2 / (2 sigma^2)) with step step_mu sigma^2.
      const VectorXd delta = mu.array() * (-mu.array().square() / (2.0 * sigma * sigma)).exp();
      mu -= cfg.step_mu * delta;
      mu -= pinv * (A * mu - b);
      stage.max_residual = std::max(stage.max_residual, (A * mu - b).norm() / bn);
    }
    stage.surrogate_after = sl0_surrogate(mu, sigma);
    out.stages.push_back(stage);
  }
  out.solution = mu;
  return out;
}

VectorXd sl0_solve(const MatrixXd& A, const VectorXd& b, const Sl0Config& cfg) {
  return sl0_solve_traced(A, b, cfg).solution;
}

VectorXd sl0_solve(const DictionaryMatrix& A, const VectorXd& b, const Sl0Config& cfg) {
  return sl0_solve(A.entries, b, cfg);
}

bool validate_rho(double rho, const RhoBounds& bounds) { return bounds.rho_min < rho && rho < bounds.rho_max; }

}  // namespace heatsrc
