#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpboot/common.hpp"
#include "dpboot/models.hpp"
#include "dpboot/optim.hpp"
#include "dpboot/seedbank.hpp"

namespace dpboot::est {

// A fixed battery of R synthetic replicas. Each replica owns frozen data and
// privacy-noise streams derived once from the seed bank, so evaluate() is a
// pure function of theta: the same theta always reproduces the same
// statistics, which is what makes the simulated objective optimizable.
class SynthEnsemble {
 public:
  SynthEnsemble(const models::Model& model, const SeedBank& bank,
                std::span<const std::uint64_t> scope, int R);

  int R() const { return static_cast<int>(keys_.size()); }
  int stat_dim() const { return model_->stat_dim(); }
  const models::Model& model() const { return *model_; }

  // R x p matrix of synthetic statistics at theta, one replica per row.
  MatrixXd evaluate(const VectorXd& theta) const;

  // Fresh stream pair (data, dp) positioned at the start of replica r's
  // draws; lets callers regenerate a replica's statistic independently.
  std::pair<Stream, Stream> replica_streams(int r) const;

 private:
  const models::Model* model_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> keys_;
};

struct Moments {
  VectorXd mean;
  MatrixXd cov;  // sample covariance, R-1 denominator
};

// Column mean and sample covariance of a replica matrix; needs >= 2 rows.
Moments row_moments(const MatrixXd& rows);

// Moments of the ensemble's statistics at theta.
Moments ensemble_moments(const SynthEnsemble& E, const VectorXd& theta);

// (s - m(theta))' Omega (s - m(theta)); Omega must be positive definite
// (verified by Cholesky).
double ind_objective(const VectorXd& s, const SynthEnsemble& E, const VectorXd& theta,
                     const MatrixXd& Omega);

// (s - m(theta))' (S(theta) + ridge I)^-1 (s - m(theta)), solved via
// factorization. ridge < 0 selects the default 1e-10 trace(S)/p, which keeps
// the weight matrix invertible when heavy clamping degenerates S.
double adi_objective(const VectorXd& s, const SynthEnsemble& E, const VectorXd& theta,
                     double ridge = -1.0);

enum class WeightMode { IND, ADI };

struct EstimateOptions {
  WeightMode mode = WeightMode::ADI;
  // IND weight matrix; empty selects the identity.
  MatrixXd omega;
  double ridge = -1.0;  // ADI; negative selects the adaptive default
  MinimizeOptions optimizer{};
  // With multi_start the optimizer runs from the naive estimate, the box
  // center, and the naive estimate shifted by +/-10% of the box width, and
  // the best converged run wins. Otherwise only `start` is used (the naive
  // estimate when `start` is empty).
  bool multi_start = true;
  VectorXd start;
  // When false, an iteration-capped run returns its best iterate with
  // converged=false instead of throwing; bootstrap refits run under a fixed
  // budget and take the best available point.
  bool require_convergence = true;
};

struct EstimateResult {
  VectorXd theta_hat;
  double objective_value = 0.0;
  bool converged = false;
  int evaluations = 0;
  int starts_tried = 0;
  std::vector<bool> at_boundary;  // per coordinate, against the theta box
  std::string message;
};

// Box-constrained minimization of the chosen simulated objective over the
// model's parameter box. Deterministic: identical inputs give bit-identical
// results. Throws std::runtime_error when no start converges.
EstimateResult estimate(const VectorXd& s, const models::Model& model,
                        const SynthEnsemble& E, const EstimateOptions& opt = {});

struct PivotInfo {
  MatrixXd stat_cov;  // covariance of s^r(theta_hat) across replicas
  MatrixXd jacobian;  // finite-difference derivative of the mean statistic map
  MatrixXd coef_cov;  // (J' stat_cov^-1 J)^-1
};

// Standard-deviation estimate for component target_index of the estimator,
// built from the ensemble's covariance at theta_hat and a forward
// finite-difference Jacobian with step delta under common random numbers.
// The sample-size factors in the covariance scaling and the final
// standardization cancel, so everything is computed on the statistic scale.
// Throws std::runtime_error when a factorization fails.
double approx_pivot_sd(const VectorXd& theta_hat, const SynthEnsemble& E, double delta,
                       int target_index, PivotInfo* info = nullptr);

}  // namespace dpboot::est
