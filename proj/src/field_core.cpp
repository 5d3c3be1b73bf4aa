#include "heatsrc/field_core.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace heatsrc {

Point operator+(const Point& a, const Point& b) {
  Point r = a;
  for (int i = 0; i < a.dim; ++i) r[i] += b[i];
  return r;
}

Point operator-(const Point& a, const Point& b) {
  Point r = a;
  for (int i = 0; i < a.dim; ++i) r[i] -= b[i];
  return r;
}

Point operator*(double s, const Point& a) {
  Point r = a;
  for (int i = 0; i < a.dim; ++i) r[i] *= s;
  return r;
}

double squared_norm(const Point& p) {
  double s = 0.0;
  for (int i = 0; i < p.dim; ++i) s += p[i] * p[i];
  return s;
}

double distance(const Point& a, const Point& b) { return std::sqrt(squared_norm(a - b)); }

bool is_finite(const Point& p) {
  for (int i = 0; i < p.dim; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

SparseMeasure::SparseMeasure(int dim, std::vector<Atom> atoms) : dim_(dim) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("SparseMeasure: dim must be 1 or 2");
  atoms_.reserve(atoms.size());
  for (const auto& a : atoms) add(a.position, a.amplitude);
}

void SparseMeasure::add(const Point& position, double amplitude) {
  if (position.dim != dim_) throw std::invalid_argument("SparseMeasure: atom dimension mismatch");
  if (!is_finite(position) || !std::isfinite(amplitude))
    throw std::invalid_argument("SparseMeasure: non-finite atom");
  for (const auto& a : atoms_)
    if (a.position == position) throw std::invalid_argument("SparseMeasure: duplicate position");
  atoms_.push_back({position, amplitude});
}

std::vector<Point> SparseMeasure::positions() const {
  std::vector<Point> out;
  out.reserve(atoms_.size());
  for (const auto& a : atoms_) out.push_back(a.position);
  return out;
}

Eigen::VectorXd SparseMeasure::amplitudes() const {
  Eigen::VectorXd c(static_cast<Eigen::Index>(atoms_.size()));
  for (std::size_t i = 0; i < atoms_.size(); ++i) c[static_cast<Eigen::Index>(i)] = atoms_[i].amplitude;
  return c;
}

double green_kernel(const Point& displacement, double t, const KernelParams& params) {
  if (!(t > 0.0)) throw std::domain_error("green_kernel: t must be positive");
  if (displacement.dim != params.dim) throw std::invalid_argument("green_kernel: dimension mismatch");
  const double prefactor = std::pow(4.0 * std::numbers::pi * t, -0.5 * params.dim);
  return prefactor * std::exp(-squared_norm(displacement) / (2.0 * t));
}

double evaluate_field(const SparseMeasure& mu, const Point& x, double t) {
  if (!(t > 0.0)) throw std::domain_error("evaluate_field: t must be positive");
  const KernelParams params{mu.dim()};
  double u = 0.0;
  for (const auto& a : mu.atoms()) u += a.amplitude * green_kernel(x - a.position, t, params);
  return u;
}

double tv_norm(const SparseMeasure& mu) {
  double s = 0.0;
  for (const auto& a : mu.atoms()) s += std::abs(a.amplitude);
  return s;
}

double autocorrelation(const Point& x, double lambda) {
  if (!(lambda > 0.0)) throw std::domain_error("autocorrelation: lambda must be positive");
  return std::exp(-squared_norm(x) / (4.0 * lambda));
}

double noise_variance(const Eigen::VectorXd& b, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  if (b.size() == 0) throw std::invalid_argument("noise_variance: empty signal");
  const double energy = b.squaredNorm();
  if (energy == 0.0) throw std::invalid_argument("noise_variance: SNR undefined for a zero signal");
  return energy * std::pow(10.0, -snr_db / 10.0) / static_cast<double>(b.size());
}

Eigen::VectorXd add_noise(const Eigen::VectorXd& b, double snr_db, std::uint64_t seed) {
  if (std::isnan(snr_db)) throw std::invalid_argument("add_noise: snr_db is NaN");
  if (std::isinf(snr_db) && snr_db > 0) return b;
  const double sd = std::sqrt(noise_variance(b, snr_db));
  const CounterRng rng(seed);
  Eigen::VectorXd out = b;
  for (Eigen::Index i = 0; i < b.size(); ++i) out[i] += sd * rng.normal(static_cast<std::uint64_t>(i));
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t CounterRng::bits(std::uint64_t counter) const {
  return splitmix64(splitmix64(seed_) ^ (counter * 0xD1B54A32D192ED03ULL));
}

double CounterRng::uniform(std::uint64_t counter) const {
  return static_cast<double>((bits(counter) >> 11) + 1) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t index) const {
  const double u1 = uniform(2 * index);
  const double u2 = uniform(2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double CounterRng::next_normal() {
  const double u1 = uniform(counter_++);
  const double u2 = uniform(counter_++);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace heatsrc
