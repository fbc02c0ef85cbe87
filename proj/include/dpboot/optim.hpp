#pragma once

#include <functional>
#include <string>

#include "dpboot/common.hpp"

namespace dpboot {

using Objective = std::function<double(const VectorXd&)>;
using GradientFn = std::function<VectorXd(const VectorXd&)>;
// Returns the value and writes the gradient; lets callers share one pass
// over the data for both.
using ValueGradFn = std::function<double(const VectorXd&, VectorXd& grad_out)>;

struct MinimizeOptions {
  int max_iters = 250;
  // Stop after two consecutive relative objective improvements below this.
  double f_rel_tol = 1e-13;
  // Stop when every accepted step component is below this fraction of the
  // box width in its coordinate.
  double x_rel_tol = 1e-10;
  // Central-difference step as a fraction of the box width per coordinate;
  // switches to a one-sided difference against an active bound.
  double fd_rel_step = 1e-6;
  // Forward differences instead: half the evaluations per gradient, less
  // accurate; useful when one evaluation is a full ensemble pass.
  bool fd_forward = false;
  int max_halvings = 45;
  // A stalled line search counts as convergence when every projected
  // gradient component is below this tolerance times max(1,|f|)/width(i).
  double stall_grad_tol = 1e-7;
  // When positive, stop as soon as every projected gradient component is
  // below this tolerance times max(1,|f|)/width(i), without waiting for a
  // line search to stall. Saves the stall round when the start point is
  // already near-optimal, e.g. after a Newton warm start.
  double grad_tol = 0.0;
  bool allow_nelder_mead = true;
  int nm_max_iters = 500;
};

struct MinimizeResult {
  VectorXd x;
  double f = 0.0;
  bool converged = false;
  int evaluations = 0;
  int iterations = 0;
  double grad_inf_norm = 0.0;  // projected gradient at the final iterate
  bool used_fallback = false;
  std::string message;
};

// Projected quasi-Newton minimization over an axis-aligned box, with
// finite-difference gradients by default and a deterministic Nelder-Mead
// fallback when line searches stall. Fully deterministic for fixed inputs.
// Throws std::runtime_error if the objective is not finite at the start.
MinimizeResult minimize_box(const Objective& f, const Box& box, const VectorXd& x0,
                            const MinimizeOptions& opt = {},
                            const GradientFn* analytic_grad = nullptr);

// Variant taking a fused value+gradient callback for the gradient phase;
// line searches still use the plain objective.
MinimizeResult minimize_box_fused(const Objective& f, const ValueGradFn& fg, const Box& box,
                                  const VectorXd& x0, const MinimizeOptions& opt = {});

}  // namespace dpboot
