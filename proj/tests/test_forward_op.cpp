#include <cmath>
#include <numbers>
#include <stdexcept>

#include <gtest/gtest.h>

#include "heatsrc/forward_op.hpp"

namespace heatsrc {
namespace {

constexpr double kPi = std::numbers::pi;

MeasurementOperator paper_1d_operator() {
  const double d2 = 2.0 * kPi / 16.0;
  const double t = rho_bounds(16, 1).midpoint() * d2 * d2;
  return MeasurementOperator(tensor_sample_set(1, 0.0, d2, 16, {t}), {1});
}

MeasurementOperator random_operator(CounterRng& rng, int dim, int samples) {
  std::vector<Sample> s;
  for (int i = 0; i < samples; ++i) {
    const Point x = dim == 1 ? Point(2.0 * rng.next_uniform()) : Point(2.0 * rng.next_uniform(), 2.0 * rng.next_uniform());
    s.push_back({x, 0.02 + 0.5 * rng.next_uniform()});
  }
  return MeasurementOperator(SampleSet(dim, s), {dim});
}

TEST(SampleSet, RejectsInvalidSamples) {
  EXPECT_THROW(SampleSet(1, {}), std::invalid_argument);
  EXPECT_THROW(SampleSet(1, {{Point(0.0), 0.0}}), std::invalid_argument);
  EXPECT_THROW(SampleSet(1, {{Point(0.0, 1.0), 1.0}}), std::invalid_argument);
}

TEST(TensorSampleSet, TimeMajorSecondCoordinateFastest) {
  const SampleSet s = tensor_sample_set(2, 0.5, 0.25, 3, {0.1, 0.2});
  ASSERT_EQ(s.size(), 18);
  EXPECT_EQ(s[0].x, Point(0.5, 0.5));
  EXPECT_EQ(s[1].x, Point(0.5, 0.75));
  EXPECT_EQ(s[3].x, Point(0.75, 0.5));
  EXPECT_EQ(s[8].t, 0.1);
  EXPECT_EQ(s[9].t, 0.2);
  EXPECT_EQ(s[9].x, Point(0.5, 0.5));
}

TEST(Measure, SingleAtomAndZero) {
  const MeasurementOperator op(tensor_sample_set(1, 0.0, 0.5, 4, {0.3}), {1});
  SparseMeasure mu(1);
  mu.add(Point(1.0), 1.0);
  const Eigen::VectorXd b = measure(op, mu);
  EXPECT_EQ(b[2], green_kernel(Point(0.0), 0.3, {1}));
  EXPECT_EQ(measure(op, SparseMeasure(1)), Eigen::VectorXd::Zero(4));
}

TEST(Measure, MatchesDictionaryProductOnGrid) {
  const MeasurementOperator op = paper_1d_operator();
  std::vector<Point> grid;
  for (int j = 0; j < 128; ++j) grid.emplace_back(j * 2.0 * kPi / 128.0);
  const DictionaryMatrix A = build_dictionary(op, grid);
  Eigen::VectorXd mu_vec = Eigen::VectorXd::Zero(128);
  SparseMeasure mu(1);
  for (int j : {16, 64, 112}) {
    mu_vec[j] = 1.0;
    mu.add(grid[static_cast<std::size_t>(j)], 1.0);
  }
  EXPECT_LT((measure(op, mu) - A.entries * mu_vec).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CertificateEval, UnitWeightIsOneKernel) {
  const MeasurementOperator op = paper_1d_operator();
  for (Eigen::Index k : {0, 5, 15}) {
    const Eigen::VectorXd e = Eigen::VectorXd::Unit(op.rows(), k);
    const Point x(1.234);
    EXPECT_EQ(certificate_eval(op, e, x), green_kernel(x - op.samples()[k].x, op.samples()[k].t, {1}));
  }
  EXPECT_THROW(certificate_eval(op, Eigen::VectorXd::Zero(3), Point(0.0)), std::invalid_argument);
}

// Double sum sum_s sum_i lambda_s c_i G(x_s - p_i, t_s) evaluated directly.
TEST(CertificateEval, AdjointIdentityAgainstDoubleSum) {
  CounterRng rng(21);
  for (int k = 0; k < 200; ++k) {
    const int dim = 1 + k % 2;
    const MeasurementOperator op = random_operator(rng, dim, 12);
    SparseMeasure mu(dim);
    const int atoms = 1 + static_cast<int>(rng.next_bits() % 5);
    for (int i = 0; i < atoms; ++i)
      mu.add(dim == 1 ? Point(2.0 * rng.next_uniform()) : Point(2.0 * rng.next_uniform(), 2.0 * rng.next_uniform()),
             2.0 * rng.next_uniform() - 1.0);
    Eigen::VectorXd lam(op.rows());
    for (Eigen::Index s = 0; s < lam.size(); ++s) lam[s] = 2.0 * rng.next_uniform() - 1.0;
    double direct = 0.0;
    for (Eigen::Index s = 0; s < op.rows(); ++s)
      for (const Atom& a : mu.atoms())
        direct += lam[s] * a.amplitude * green_kernel(op.samples()[s].x - a.position, op.samples()[s].t, {dim});
    double via_g = 0.0;
    for (const Atom& a : mu.atoms()) via_g += a.amplitude * certificate_eval(op, lam, a.position);
    const double scale = lam.norm() * tv_norm(mu);
    EXPECT_LE(std::abs(measure(op, mu).dot(lam) - via_g), 1e-12 * scale);
    EXPECT_LE(std::abs(direct - via_g), 1e-12 * scale);
  }
}

TEST(CertificateEval, GradientMatchesCentralDifferences) {
  CounterRng rng(4);
  const MeasurementOperator op1 = random_operator(rng, 1, 10), op2 = random_operator(rng, 2, 10);
  Eigen::VectorXd lam(10);
  for (Eigen::Index s = 0; s < 10; ++s) lam[s] = 2.0 * rng.next_uniform() - 1.0;
  const double h = 1e-6;
  for (int k = 0; k < 20; ++k) {
    for (const MeasurementOperator* op : {&op1, &op2}) {
      const int dim = op->dim();
      const Point x = dim == 1 ? Point(2.0 * rng.next_uniform()) : Point(2.0 * rng.next_uniform(), 2.0 * rng.next_uniform());
      const ValueGradient vg = certificate_eval_gradient(*op, lam, x);
      EXPECT_NEAR(vg.value, certificate_eval(*op, lam, x), 1e-14);
      for (int i = 0; i < dim; ++i) {
        Point xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (certificate_eval(*op, lam, xp) - certificate_eval(*op, lam, xm)) / (2.0 * h);
        EXPECT_LE(std::abs(fd - vg.gradient[i]), 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(BuildDictionary, ShapesAndColumns) {
  const MeasurementOperator op = paper_1d_operator();
  const DictionaryMatrix one = build_dictionary(op, {Point(0.3)});
  EXPECT_EQ(one.entries.cols(), 1);
  EXPECT_EQ(Eigen::VectorXd(one.entries.col(0)), op.column(Point(0.3)));
  std::vector<Point> grid;
  for (int j = 0; j < 128; ++j) grid.emplace_back(j * 2.0 * kPi / 128.0);
  const DictionaryMatrix A = build_dictionary(op, grid);
  EXPECT_EQ(A.entries.rows(), 16);
  EXPECT_EQ(A.entries.cols(), 128);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    SparseMeasure d(1);
    d.add(grid[j], 1.0);
    EXPECT_EQ(Eigen::VectorXd(A.entries.col(static_cast<Eigen::Index>(j))), measure(op, d));
  }
  EXPECT_GT(A.entries.minCoeff(), 0.0);
  EXPECT_THROW(build_dictionary(op, {}), std::invalid_argument);
}

TEST(BuildDictionary, ColumnNormBound) {
  CounterRng rng(8);
  for (int dim : {1, 2}) {
    const MeasurementOperator op = random_operator(rng, dim, 20);
    double tmin = 1e300;
    for (const Sample& s : op.samples().samples()) tmin = std::min(tmin, s.t);
    std::vector<Point> grid;
    for (int j = 0; j < 30; ++j)
      grid.push_back(dim == 1 ? Point(2.0 * rng.next_uniform()) : Point(2.0 * rng.next_uniform(), 2.0 * rng.next_uniform()));
    const DictionaryMatrix A = build_dictionary(op, grid);
    const double bound = 20.0 * std::pow(4.0 * kPi * tmin, -0.5 * dim);
    for (Eigen::Index j = 0; j < A.entries.cols(); ++j) EXPECT_LE(A.entries.col(j).norm(), bound);
  }
}

// Grid n/m with all t = 2 Lambda: adjacent normalised columns grow more coherent as the spacing shrinks.
TEST(BuildDictionary, CoherenceGrowsAsSpacingShrinks) {
  const double lambda = 0.01;
  const int m = 16;
  const MeasurementOperator op(tensor_sample_set(1, -1.0, 1.0 / m, 2 * m + 1, {2.0 * lambda}), {1});
  double prev = 0.0;
  for (double h : {0.1, 0.05, 0.025, 0.0125}) {
    const Eigen::VectorXd a = op.column(Point(0.1)), b = op.column(Point(0.1 + h));
    const double coh = a.dot(b) / (a.norm() * b.norm());
    EXPECT_GT(coh, prev);
    EXPECT_LT(coh, 1.0);
    prev = coh;
  }
  EXPECT_GT(prev, 0.99);
}

TEST(BaselineMatrix, EntriesAndShape) {
  const double tau = 0.7, d1 = 0.25, d2 = 0.5;
  const DictionaryMatrix M = baseline_matrix(8, 3, 20, tau, d1, d2);
  EXPECT_EQ(M.entries.rows(), 24);
  EXPECT_EQ(M.entries.cols(), 20);
  // n d2 = m d1 for n = 1, m = 2.
  EXPECT_NEAR(M.entries(1, 2), 1.0 / std::sqrt(4.0 * kPi * tau), 1e-15);
  EXPECT_NEAR(M.entries(16 + 1, 2), 1.0 / std::sqrt(4.0 * kPi * 3.0 * tau), 1e-15);
  const double r = 3 * d2 - 5 * d1;
  EXPECT_NEAR(M.entries(8 + 3, 5), std::exp(-r * r / (8.0 * tau)) / std::sqrt(8.0 * kPi * tau), 1e-15);
}

TEST(BaselineMatrix, EvenInDisplacement) {
  const DictionaryMatrix M = baseline_matrix(16, 1, 128, 0.3, 2.0 * kPi / 128.0, 2.0 * kPi / 16.0);
  // Sensor n = 2 sits at grid node 16; nodes 14 and 18 are displaced by -2 d1 and +2 d1.
  EXPECT_EQ(M.entries(2, 14), M.entries(2, 18));
}

TEST(BaselineMatrix, SymmetricToeplitzForEqualSpacing) {
  const DictionaryMatrix M = baseline_matrix(12, 1, 12, 0.4, 0.3, 0.3);
  for (int n = 0; n < 12; ++n) {
    for (int m = 0; m < 12; ++m) {
      EXPECT_EQ(M.entries(n, m), M.entries(m, n));
      // Offsets n h - m h round differently along a diagonal.
      if (n > 0 && m > 0) EXPECT_NEAR(M.entries(n, m), M.entries(n - 1, m - 1), 1e-14 * M.entries(n, m));
    }
  }
}

TEST(RhoBounds, Values) {
  const RhoBounds b = rho_bounds(16, 1);
  EXPECT_EQ(b.rho_min, 0.5);
  EXPECT_EQ(b.rho_max, 3.125);
  EXPECT_EQ(b.midpoint(), 1.8125);
  EXPECT_TRUE(b.valid());
  const RhoBounds deg = rho_bounds(2, 1);
  EXPECT_EQ(deg.rho_min, 0.5);
  EXPECT_DOUBLE_EQ(deg.rho_max, 1.0 / 72.0);
  EXPECT_FALSE(deg.valid());
  EXPECT_THROW(rho_bounds(1, 1), std::invalid_argument);
}

}  // namespace
}  // namespace heatsrc
