#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpboot/common.hpp"
#include "dpboot/models.hpp"
#include "dpboot/seedbank.hpp"

namespace dpboot::boot {

// Two-sided interval built from bootstrap order statistics. lo_index and
// hi_index are the 1-based ranks actually used, so callers can audit the
// arithmetic; lo <= hi always holds.
struct IntervalResult {
  double lo = 0.0;
  double hi = 0.0;
  double point = 0.0;
  double alpha = 0.0;
  std::string method;
  int B = 0;
  int lo_index = 0;
  int hi_index = 0;
  // efron_bc only: the bias fraction hit 0 or 1 and was clamped away from
  // the boundary before the normal quantile.
  bool bc_clamped = false;
};

struct TestResult {
  double statistic = 0.0;   // studentized distance to the null set, >= 0
  double p_value = 0.0;     // in [1/(B+1), 1], granularity 1/(B+1)
  bool reject = false;      // p_value <= alpha
  double alpha = 0.0;
  int B = 0;
};

// Null hypothesis about a scalar functional tau(theta). Point and interval
// nulls are evaluated exactly; a region null minimizes |tau_hat - tau(theta)|
// over a theta box with the shared box optimizer.
struct NullSpec {
  enum class Kind { Point, Interval, Region };
  Kind kind = Kind::Point;
  double value = 0.0;       // Point
  double lo = 0.0, hi = 0.0;  // Interval, lo <= hi
  Box region;               // Region

  static NullSpec point(double c);
  static NullSpec interval(double lo, double hi);
  static NullSpec make_region(const Box& box);
};

// Full-parameter fit of a statistic vector; throws on failure.
using Estimator = std::function<VectorXd(const VectorXd& s)>;

// Scalar functional of theta under test.
using TauFn = std::function<double(const VectorXd& theta)>;

// Plug-in estimate of tau and its scale from one statistic vector. `warm`
// is the full-data fit when available, so refits can start near the answer;
// implementations are free to ignore it. sigma_hat must be positive.
struct TauSigma {
  double tau_hat = 0.0;
  double sigma_hat = 1.0;
};
using PivotEstimator = std::function<TauSigma(const VectorXd& s, const VectorXd* warm)>;

// 1-based order-statistic ranks used by the percentile interval:
// floor((B+1)*alpha/2) and B+1 minus that. Requires (B+1)*alpha/2 >= 1.
std::pair<int, int> pb_ci_indices(int B, double alpha);

// Percentile-of-pivots confidence interval. Fits theta_hat = estimator(s),
// simulates B statistic vectors from the model at theta_hat on substreams
// derived from (scope, b), studentizes each as
//   xi_b = (tau_hat(s_b) - tau(theta_hat)) / sigma_hat(s_b),
// and returns [tau_hat(s) + xi_(jlo) sigma_hat(s), tau_hat(s) + xi_(jhi)
// sigma_hat(s)] at the pb_ci_indices ranks. Substream labels are "boot/data"
// and "boot/dp" with index scope ++ {b}, b = 0..B-1, so draws never depend
// on scheduling. xi_out, when given, receives the sorted pivots.
IntervalResult pb_ci(const VectorXd& s, const models::Model& model, const Estimator& estimator,
                     const TauFn& tau, const PivotEstimator& pivot, int B, double alpha,
                     const SeedBank& bank, std::span<const std::uint64_t> scope = {},
                     std::vector<double>* xi_out = nullptr);

// Studentized bootstrap test of H0: tau(theta) in the null set. The observed
// statistic is T = inf over the null set of |tau_hat(s) - tau(theta*)| /
// sigma_hat(s); the reference draws use T_b = |tau_hat(s_b) - tau(theta_hat)|
// / sigma_hat(s_b) with theta_hat fit on the full parameter box, and
// p = (1 + #{T_b >= T}) / (B + 1). Requires (B+1)*alpha >= 1. Substreams as
// in pb_ci. tb_out, when given, receives the sorted reference statistics.
TestResult pb_ht(const VectorXd& s, const models::Model& model, const Estimator& estimator,
                 const TauFn& tau, const PivotEstimator& pivot, const NullSpec& null_spec,
                 int B, double alpha, const SeedBank& bank,
                 std::span<const std::uint64_t> scope = {},
                 std::vector<double>* tb_out = nullptr);

enum class BaselineKind { NaivePercentile, SimplifiedT, Ferrando, EfronBC };

const char* baseline_name(BaselineKind kind);

// Nonprivate-style bootstrap intervals around the model's naive estimator,
// for one coordinate of theta. All four kinds share the draw convention with
// pb_ci, so running several kinds at the same scope reuses identical
// bootstrap worlds:
//   naive_percentile  order statistics of theta_hat(s_b)[t]
//   simplified_t      order statistics of 2 theta_hat(s)[t] - theta_hat(s_b)[t]
//   ferrando          draws shifted by the estimated bias
//                     mean_b theta_hat(s_b)[t] - theta_hat(s)[t]
//   efron_bc          bias-corrected percentile, acceleration zero
// Ranks follow the pb_ci convention; efron_bc maps its adjusted levels p to
// ranks floor((B+1)p) (lower) and B+1-floor((B+1)(1-p)) (upper). All ranks
// are clamped to [1, B]. Requires B >= 1/alpha.
IntervalResult baseline_ci(const VectorXd& s, const models::Model& model, BaselineKind kind,
                           int B, double alpha, const SeedBank& bank,
                           std::span<const std::uint64_t> scope, int component_index);

}  // namespace dpboot::boot
