#include "heatsrc/forward_op.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace heatsrc {

SampleSet::SampleSet(int dim, std::vector<Sample> samples) : dim_(dim), samples_(std::move(samples)) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("SampleSet: dim must be 1 or 2");
  if (samples_.empty()) throw std::invalid_argument("SampleSet: at least one sample required");
  for (const auto& s : samples_) {
    if (s.x.dim != dim) throw std::invalid_argument("SampleSet: sample dimension mismatch");
    if (!(s.t > 0.0) || !std::isfinite(s.t)) throw std::invalid_argument("SampleSet: sample times must be positive");
    if (!is_finite(s.x)) throw std::invalid_argument("SampleSet: non-finite sample position");
  }
}

SampleSet tensor_sample_set(int dim, double origin, double spacing, int count,
                            const std::vector<double>& times) {
  if (count < 1) throw std::invalid_argument("tensor_sample_set: count must be positive");
  std::vector<Sample> samples;
  for (double t : times) {
    if (dim == 1) {
      for (int i = 0; i < count; ++i) samples.push_back({Point(origin + i * spacing), t});
    } else {
      for (int i = 0; i < count; ++i)
        for (int j = 0; j < count; ++j) samples.push_back({Point(origin + i * spacing, origin + j * spacing), t});
    }
  }
  return SampleSet(dim, std::move(samples));
}

MeasurementOperator::MeasurementOperator(SampleSet samples, KernelParams kernel)
    : samples_(std::move(samples)), kernel_(kernel) {
  if (samples_.dim() != kernel_.dim) throw std::invalid_argument("MeasurementOperator: dimension mismatch");
}

Eigen::VectorXd MeasurementOperator::column(const Point& q) const {
  Eigen::VectorXd col(rows());
  for (Eigen::Index s = 0; s < rows(); ++s) col[s] = green_kernel(samples_[s].x - q, samples_[s].t, kernel_);
  return col;
}

Eigen::VectorXd measure(const MeasurementOperator& op, const SparseMeasure& mu) {
  if (mu.dim() != op.dim()) throw std::invalid_argument("measure: dimension mismatch");
  Eigen::VectorXd b = Eigen::VectorXd::Zero(op.rows());
  for (Eigen::Index s = 0; s < op.rows(); ++s) b[s] = evaluate_field(mu, op.samples()[s].x, op.samples()[s].t);
  return b;
}

double certificate_eval(const MeasurementOperator& op, const Eigen::VectorXd& lambda, const Point& x) {
  if (lambda.size() != op.rows()) throw std::invalid_argument("certificate_eval: weight length mismatch");
  if (x.dim != op.dim()) throw std::invalid_argument("certificate_eval: dimension mismatch");
  double g = 0.0;
  for (Eigen::Index s = 0; s < op.rows(); ++s)
    g += lambda[s] * green_kernel(x - op.samples()[s].x, op.samples()[s].t, op.kernel());
  return g;
}

ValueGradient certificate_eval_gradient(const MeasurementOperator& op, const Eigen::VectorXd& lambda,
                                        const Point& x) {
  if (lambda.size() != op.rows()) throw std::invalid_argument("certificate_eval: weight length mismatch");
  if (x.dim != op.dim()) throw std::invalid_argument("certificate_eval: dimension mismatch");
  ValueGradient out;
  out.gradient = Point();
  out.gradient.dim = x.dim;
  for (Eigen::Index s = 0; s < op.rows(); ++s) {
    const auto& sample = op.samples()[s];
    const double w = lambda[s] * green_kernel(x - sample.x, sample.t, op.kernel());
    out.value += w;
    for (int i = 0; i < x.dim; ++i) out.gradient[i] += w * (sample.x[i] - x[i]) / sample.t;
  }
  return out;
}

DualCertificate::DualCertificate(MeasurementOperator op, Eigen::VectorXd weights)
    : op_(std::move(op)), weights_(std::move(weights)) {
  if (weights_.size() != op_.rows()) throw std::invalid_argument("DualCertificate: weight length mismatch");
}

DictionaryMatrix build_dictionary(const MeasurementOperator& op, const std::vector<Point>& grid) {
  if (grid.empty()) throw std::invalid_argument("build_dictionary: empty grid");
  DictionaryMatrix out;
  out.grid = grid;
  out.entries.resize(op.rows(), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t j = 0; j < grid.size(); ++j) out.entries.col(static_cast<Eigen::Index>(j)) = op.column(grid[j]);
  return out;
}

DictionaryMatrix baseline_matrix(int n_s, int n_t, int p, double tau, double delta1, double delta2) {
  if (n_s < 1 || n_t < 1 || p < 1) throw std::invalid_argument("baseline_matrix: counts must be positive");
  if (!(tau > 0.0) || !(delta1 > 0.0) || !(delta2 > 0.0))
    throw std::invalid_argument("baseline_matrix: tau and spacings must be positive");
  DictionaryMatrix out;
  out.entries.resize(static_cast<Eigen::Index>(n_s) * n_t, p);
  for (int m = 0; m < p; ++m) out.grid.emplace_back(m * delta1);
  for (int l = 1; l <= n_t; ++l) {
    const double lt = l * tau;
    const double prefactor = 1.0 / std::sqrt(4.0 * std::numbers::pi * lt);
    for (int n = 0; n < n_s; ++n) {
      for (int m = 0; m < p; ++m) {
        const double r = n * delta2 - m * delta1;
        out.entries((l - 1) * n_s + n, m) = prefactor * std::exp(-r * r / (4.0 * lt));
      }
    }
  }
  return out;
}

RhoBounds rho_bounds(int n_s, int n_t) {
  if (n_s < 2) throw std::invalid_argument("rho_bounds: at least two sensors required");
  if (n_t < 1) throw std::invalid_argument("rho_bounds: at least one time sample required");
  const double ns1 = n_s - 1.0;
  return {1.0 / (2.0 * n_t), ns1 * ns1 / (72.0 * n_t)};
}

}  // namespace heatsrc
