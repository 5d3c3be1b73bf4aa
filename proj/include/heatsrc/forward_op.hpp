#pragma once

#include <vector>

#include <Eigen/Dense>

#include "heatsrc/field_core.hpp"

namespace heatsrc {

struct Sample {
  Point x;
  double t = 0.0;

  bool operator==(const Sample&) const = default;
};

class SampleSet {
 public:
  // Throws std::invalid_argument unless every t > 0, every point has dimension
  // dim and the set is non-empty.
  SampleSet(int dim, std::vector<Sample> samples);

  int dim() const { return dim_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(samples_.size()); }
  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](Eigen::Index i) const { return samples_[static_cast<std::size_t>(i)]; }

  bool operator==(const SampleSet&) const = default;

 private:
  int dim_;
  std::vector<Sample> samples_;
};

// Tensor sensor grid origin + n*spacing, n = 0..count-1 per dimension, sampled at
// each listed time. Rows are time-major; in 2D the second coordinate runs fastest.
SampleSet tensor_sample_set(int dim, double origin, double spacing, int count,
                            const std::vector<double>& times);

class MeasurementOperator {
 public:
  MeasurementOperator(SampleSet samples, KernelParams kernel);

  const SampleSet& samples() const { return samples_; }
  const KernelParams& kernel() const { return kernel_; }
  int dim() const { return kernel_.dim; }
  Eigen::Index rows() const { return samples_.size(); }

  // measure(delta_q).
  Eigen::VectorXd column(const Point& q) const;

 private:
  SampleSet samples_;
  KernelParams kernel_;
};

Eigen::VectorXd measure(const MeasurementOperator& op, const SparseMeasure& mu);

// g(x) = sum_s lambda_s G(x - x_s, t_s).
double certificate_eval(const MeasurementOperator& op, const Eigen::VectorXd& lambda, const Point& x);

struct ValueGradient {
  double value = 0.0;
  Point gradient;
};

ValueGradient certificate_eval_gradient(const MeasurementOperator& op, const Eigen::VectorXd& lambda,
                                        const Point& x);

// The function nu = M* p induced by a dual vector.
class DualCertificate {
 public:
  DualCertificate(MeasurementOperator op, Eigen::VectorXd weights);

  const MeasurementOperator& op() const { return op_; }
  const Eigen::VectorXd& weights() const { return weights_; }

  double operator()(const Point& x) const { return certificate_eval(op_, weights_, x); }
  ValueGradient value_gradient(const Point& x) const { return certificate_eval_gradient(op_, weights_, x); }

 private:
  MeasurementOperator op_;
  Eigen::VectorXd weights_;
};

struct DictionaryMatrix {
  Eigen::MatrixXd entries;
  std::vector<Point> grid;
};

DictionaryMatrix build_dictionary(const MeasurementOperator& op, const std::vector<Point>& grid);

// Discrete sensing matrix with entries (4 pi l tau)^(-1/2) exp(-(n d2 - m d1)^2 / (4 l tau)),
// sensors n = 0..n_s-1, grid m = 0..p-1, l = 1..n_t stacked time-major.
DictionaryMatrix baseline_matrix(int n_s, int n_t, int p, double tau, double delta1, double delta2);

struct RhoBounds {
  double rho_min = 0.0;
  double rho_max = 0.0;

  bool valid() const { return rho_min < rho_max; }
  double midpoint() const { return 0.5 * (rho_min + rho_max); }
};

RhoBounds rho_bounds(int n_s, int n_t);

}  // namespace heatsrc
