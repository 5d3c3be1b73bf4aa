#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace heatsrc {

// Spatial point in one or two dimensions. Unused trailing coordinates are zero,
// so the defaulted comparison is a total order within a fixed dimension.
struct Point {
  int dim = 1;
  std::array<double, 2> coords{0.0, 0.0};

  Point() = default;
  explicit Point(double x) : dim(1), coords{x, 0.0} {}
  Point(double x, double y) : dim(2), coords{x, y} {}
  static Point zero(int dim) { return dim == 2 ? Point(0.0, 0.0) : Point(0.0); }

  double operator[](int i) const { return coords[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return coords[static_cast<std::size_t>(i)]; }

  auto operator<=>(const Point&) const = default;
  bool operator==(const Point&) const = default;
};

Point operator+(const Point& a, const Point& b);
Point operator-(const Point& a, const Point& b);
Point operator*(double s, const Point& a);
double squared_norm(const Point& p);
double distance(const Point& a, const Point& b);
bool is_finite(const Point& p);

struct Atom {
  Point position;
  double amplitude = 0.0;

  bool operator==(const Atom&) const = default;
};

// Finite signed atomic measure sum_i c_i delta_{p_i}.
class SparseMeasure {
 public:
  explicit SparseMeasure(int dim = 1) : dim_(dim) {}
  SparseMeasure(int dim, std::vector<Atom> atoms);

  int dim() const { return dim_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }

  // Throws std::invalid_argument on a dimension mismatch, a non-finite value or
  // a position already present.
  void add(const Point& position, double amplitude);

  std::vector<Point> positions() const;
  Eigen::VectorXd amplitudes() const;

  bool operator==(const SparseMeasure&) const = default;

 private:
  int dim_;
  std::vector<Atom> atoms_;
};

// Exponent denominator 2t, prefactor (4 pi t)^(-dim/2).
struct KernelParams {
  int dim = 1;
};

double green_kernel(const Point& displacement, double t, const KernelParams& params);

double evaluate_field(const SparseMeasure& mu, const Point& x, double t);

double tv_norm(const SparseMeasure& mu);

// a(x) = exp(-|x|^2 / (4 lambda)).
double autocorrelation(const Point& x, double lambda);

// Per-entry noise variance ||b||^2 10^(-snr/10) / d.
double noise_variance(const Eigen::VectorXd& b, double snr_db);

// b + e with e_i ~ N(0, noise_variance(b, snr_db)); an infinite snr_db returns b.
Eigen::VectorXd add_noise(const Eigen::VectorXd& b, double snr_db, std::uint64_t seed);

// Counter-based generator: the k-th draw depends only on (seed, k).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t bits(std::uint64_t counter) const;
  // Uniform on (0, 1].
  double uniform(std::uint64_t counter) const;
  // Standard normal via Box-Muller on the counter pair (2k, 2k+1).
  double normal(std::uint64_t index) const;

  std::uint64_t next_bits() { return bits(counter_++); }
  double next_uniform() { return uniform(counter_++); }
  double next_normal();

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace heatsrc
