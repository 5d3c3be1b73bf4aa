#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "heatsrc/forward_op.hpp"
#include "heatsrc/sparse_solver.hpp"

namespace heatsrc {

// Axis-aligned box [lo, hi].
struct Domain {
  Point lo;
  Point hi;

  int dim() const { return lo.dim; }
  Point clip(const Point& p) const;
  bool contains(const Point& p) const;
  double diameter() const { return distance(lo, hi); }

  bool operator==(const Domain&) const = default;
};

class CandidateGrid {
 public:
  explicit CandidateGrid(Domain domain);

  // n points per dimension at lo + j (hi - lo) / n, j = 0..n-1, each with spacing (hi - lo) / n.
  static CandidateGrid uniform(const Domain& domain, int points_per_dim);

  const Domain& domain() const { return domain_; }
  const std::vector<Point>& points() const { return points_; }
  const std::vector<double>& spacing() const { return spacing_; }
  std::size_t size() const { return points_.size(); }
  double min_spacing() const;

  // Points closer than 1e-6 of the finer spacing are identified. Returns the
  // index of the (possibly pre-existing) point; its spacing becomes the minimum.
  std::size_t insert(const Point& p, double spacing);
  std::optional<std::size_t> find(const Point& p) const;
  void set_spacing(std::size_t i, double spacing);

 private:
  Domain domain_;
  std::vector<Point> points_;
  std::vector<double> spacing_;
};

// threshold(k) = 1 - offset / base^k.
struct ThresholdSchedule {
  double offset = 0.5;
  double base = 4.0;

  double operator()(int k) const;
};

struct RefinementConfig {
  Domain domain{Point(0.0), Point(1.0)};
  int initial_points_per_dim = 16;
  ThresholdSchedule peak_threshold_schedule;
  double stop_tol = 1e-4;
  int max_rounds = 12;
  // Only used in noisy mode; the numeric value after any rule has been applied.
  double lasso_lambda = 0.0;
  double final_threshold = 0.99;
  // Non-positive selects a local gap: 3x the coarser spacing of two adjacent
  // points in 1D, 3x the finest spacing of the last candidate grid in 2D.
  double cluster_gap = 0.0;
  // 2D number of sources; 0 counts super-threshold clusters instead.
  int k_sources = 0;
  int grad_max_iters = 500;
  double grad_tol = 1e-10;
  std::uint64_t kmeans_seed = 1;
  double rcond = 1e-12;
  SolverConfig solver;

  static RefinementConfig noiseless(const Domain& domain);
  static RefinementConfig noisy(const Domain& domain);
};

struct RoundDiagnostics {
  int round = 0;
  double objective = 0.0;
  double threshold = 0.0;
  std::size_t grid_size = 0;
  std::size_t selected = 0;
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  KktResiduals kkt;

  bool operator==(const RoundDiagnostics&) const = default;
};

struct PeakDiagnostics {
  std::size_t candidates = 0;
  int requested_k = 0;
  int used_k = 0;
  bool k_reduced = false;
  std::size_t deduplicated = 0;
};

struct RecoveryResult {
  SparseMeasure estimate;
  // Extracted support X*; estimate positions are exactly these points.
  std::vector<Point> final_grid;
  // Candidate grid of the last solved round and the primal solution on it.
  std::vector<Point> refined_grid;
  std::vector<double> refined_spacing;
  Eigen::VectorXd grid_primal;
  DualCertificate certificate;
  int rounds = 0;
  std::vector<RoundDiagnostics> per_round;
  PeakDiagnostics peaks;
  // True iff every round's solve converged.
  bool converged = true;
};

RecoveryResult run_refinement(const MeasurementOperator& op, const Eigen::VectorXd& b, const RefinementConfig& cfg,
                              bool noisy);

std::vector<Point> select_peaks_1d(const std::vector<std::pair<Point, double>>& cert_values, double threshold,
                                   double cluster_gap);
// Adjacent super-threshold grid points stay in one run while their distance is
// at most 3x the coarser of their spacings.
std::vector<Point> select_peaks_1d(const CandidateGrid& grid, const Eigen::VectorXd& values, double threshold);

std::vector<Point> select_peaks_2d(const DualCertificate& cert, const CandidateGrid& grid, double threshold, int k,
                                   const RefinementConfig& cfg, PeakDiagnostics* diag = nullptr);

// Adds the half-spacing stencil around each selected point and halves its spacing.
CandidateGrid refine_grid(const CandidateGrid& grid, const std::vector<Point>& selected);

SparseMeasure recover_amplitudes(const MeasurementOperator& op, const std::vector<Point>& x_star,
                                 const Eigen::VectorXd& b, double rcond = 1e-12);

// Moore-Penrose pseudo-inverse applied to b; singular values <= rcond * s_max are dropped.
Eigen::VectorXd pinv_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double rcond);

}  // namespace heatsrc
