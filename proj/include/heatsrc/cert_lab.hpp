#pragma once

#include <array>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "heatsrc/forward_op.hpp"

namespace heatsrc {

// Samples on the grid n / m, n in {-m..m}^dim, all at t = 2 lambda, so every
// kernel has the width of the autocorrelation a(x) = exp(-|x|^2 / (4 lambda)).
struct CertConfig {
  int dim = 2;
  double lambda = 0.01;
  int m = 16;
  // Jackson order; coefficients reach |n|_inf <= 2p, so 2p + |round(m p0)| <= m is required.
  int p_jackson = 4;
  int quadrature_points = 4096;
  // Verification mesh points per dimension.
  int mesh_points = 2048;

  // p_jackson = max(1, m / 4), the largest order that fits every p0 in [-1/2, 1/2]^dim.
  static CertConfig for_grid(int dim, double lambda, int m);
};

void validate(const CertConfig& cfg);

SampleSet lab_sample_set(const CertConfig& cfg);

// lambda_p (sin(px/2) / sin(x/2))^4 normalised to unit mass on [-pi, pi].
double jackson_kernel(int p, double x);
double jackson_normalization(int p);

// c_n = a1(n1) a2(n2) j(n1) j(n2) for |n|_inf <= 2p; separable, so stored as one factor per axis.
struct JacksonCoefficients {
  int dim = 1;
  int p = 1;
  std::vector<std::complex<double>> factor1;
  std::vector<std::complex<double>> factor2;

  int max_index() const { return 2 * p; }
  std::complex<double> at(int n1, int n2 = 0) const;
  double l2_norm() const;
  // e^{i n . omega} expansion evaluated at omega.
  std::complex<double> evaluate(const Point& omega) const;
};

JacksonCoefficients jackson_coefficients(const Point& delta, int p, int quadrature_points = 4096);

// sup over an n^dim mesh of [-pi/2, pi/2]^dim of |exp(i delta . omega) - sum c_n exp(i n . omega)|.
double plane_wave_sup_error(const JacksonCoefficients& c, const Point& delta, int mesh_points = 257);

struct CertificateBuild {
  DualCertificate certificate;
  JacksonCoefficients coefficients;
  Point p0;
  double scale = 1.0;
  // Nearest grid index k and the residual shift in units of the spacing.
  std::array<int, 2> anchor{0, 0};
  Point delta;
  // sup |g - scale a(. - p0)| on the verification mesh; imag_residue bounds the
  // imaginary part dropped from the weights, sum |Im(scale c_n)|.
  double sup_error = 0.0;
  double imag_residue = 0.0;
  double coeff_norm = 0.0;
};

CertificateBuild build_certificate_g(const CertConfig& cfg, const Point& p0, double scale = 1.0);

// Tensor grid origin + spacing * i, i = 0..count-1 per axis, sampled at one time t.
struct UniformSampleGrid {
  int dim = 1;
  double origin = 0.0;
  double spacing = 1.0;
  int count = 1;
  double t = 1.0;
};

// Same construction on an arbitrary uniform grid with lambda = t / 2. p_jackson <= 0
// selects the largest order whose translates fit around p0.
CertificateBuild build_certificate_on_grid(const UniformSampleGrid& grid, const Point& p0, int p_jackson,
                                           double scale = 1.0, int quadrature_points = 4096, int mesh_points = 2048);

struct NoiseModel {
  double eps = 0.0;
  double rho = 1.0;
};

struct CertificateReport {
  double sigma = 0.0;
  double tau = 0.0;
  bool feasible = false;
  // sup |g - a(. - p_i0) g(p_i0)| before normalisation, box part plus tail bound.
  double sup_error = 0.0;
  double coeff_norm = 0.0;
  // +inf when the bound is vacuous or the certificate is infeasible.
  double bound_noiseless = 0.0;
  double bound_noisy = 0.0;

  double anchor = 0.0;
  // Euclidean norm of the certificate weights after normalisation to anchor 1.
  double lambda_norm = 0.0;
  // Normalised off-support deviation: mesh maximum, tail beyond the box and curvature margin.
  double box_sup = 0.0;
  double tail_bound = 0.0;
  double mesh_margin = 0.0;
  Point box_lo;
  Point box_hi;
};

// Verifies the three soft-recovery conditions for atom i0 of mu0 after scaling g
// so that sum_i c_i g(p_i) = 1. tau absorbs the mesh margin and the tail bound.
CertificateReport verify_soft_conditions(const DualCertificate& g, const SparseMeasure& mu0, std::size_t i0,
                                         double lambda, int mesh_points = 2048, const NoiseModel& noise = {});

// Builds the certificate for atom i0 and verifies it; coeff_norm is that of the Jackson coefficients.
CertificateReport certify_atom(const CertConfig& cfg, const SparseMeasure& mu0, std::size_t i0,
                               const NoiseModel& noise = {});

// sqrt(4 lambda log(sigma / tau)).
double recovery_radius(double tau, double sigma, double lambda);

// sqrt(4 lambda log(1 / level)), level = tau / sigma - (2 lambda_norm eps + rho - 1) / (rho sigma).
double noisy_recovery_level(double tau, double sigma, double lambda_norm, double eps, double rho);
double noisy_recovery_radius(double tau, double sigma, double lambda, double lambda_norm, double eps, double rho);

// min ||A v - b|| s.t. ||v||_1 <= rho, by accelerated projected gradient.
struct ConstrainedLsOutcome {
  Eigen::VectorXd solution;
  int iterations = 0;
  bool converged = false;
};
ConstrainedLsOutcome solve_l1_ball_ls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double rho,
                                      int max_iters = 200000, double tol = 1e-12);

enum class StableVerdict { holds, fails, indeterminate };

struct StableCheck {
  StableVerdict verdict = StableVerdict::indeterminate;
  bool vacuous = false;
  // Required lower bound on sup |<phi_x, phi_x0>| over the support and the achieved value.
  double required = 0.0;
  double achieved = 0.0;
  std::size_t support_size = 0;
};

// Solves the ball-constrained problem on the grid dictionary and checks the
// atomic-decomposition inequality at x0 with the certificate's (sigma, tau, lambda_norm).
StableCheck verify_soft_stable_inequality(const DictionaryMatrix& A, const Eigen::VectorXd& b, const Point& x0,
                                          const CertificateReport& report, double lambda, double rho, double eps);

}  // namespace heatsrc
