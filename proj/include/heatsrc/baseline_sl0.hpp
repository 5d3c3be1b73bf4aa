#pragma once

#include <vector>

#include <Eigen/Dense>

#include "heatsrc/forward_op.hpp"

namespace heatsrc {

struct Sl0Config {
  double sigma_decrease = 0.7;
  // Absolute floor; non-positive selects 1e-4 sigma_0.
  double sigma_min = 0.0;
  int inner_iters = 3;
  double step_mu = 2.0;
};

void validate(const Sl0Config& cfg);

// Per sigma stage: surrogate value sum_j (1 - exp(-mu_j^2 / (2 sigma^2))) before
// and after the stage, and the worst relative residual ||A mu - b|| / ||b|| of its projections.
struct Sl0Stage {
  double sigma = 0.0;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  double max_residual = 0.0;
};

struct Sl0Result {
  Eigen::VectorXd solution;
  std::vector<Sl0Stage> stages;
};

Sl0Result sl0_solve_traced(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Sl0Config& cfg);
Eigen::VectorXd sl0_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Sl0Config& cfg);
Eigen::VectorXd sl0_solve(const DictionaryMatrix& A, const Eigen::VectorXd& b, const Sl0Config& cfg);

double sl0_surrogate(const Eigen::VectorXd& mu, double sigma);

// rho_min < rho < rho_max.
bool validate_rho(double rho, const RhoBounds& bounds);

}  // namespace heatsrc
