#pragma once

#include <span>
#include <vector>

#include "dpboot/common.hpp"
#include "dpboot/optim.hpp"
#include "dpboot/seedbank.hpp"

namespace dpboot::dp {

// Hard clamp of x into [lower, upper]; requires lower < upper.
double clamp(double x, double lower, double upper);

enum class SmoothClampKind { Sigmoid, Smoothstep };

// Differentiable surrogate for the hard clamp. The sigmoid variant maps onto
// the open interval (a, b) and has unit slope at the midpoint; the smoothstep
// variant attains a and b exactly outside [a, b].
double smooth_clamp(double x, double a, double b, SmoothClampKind kind);

// Adds iid Laplace noise of scale sens_l1 / eps to every coordinate;
// eps-differentially private for an l1-sensitivity-bounded input.
std::vector<double> add_laplace(std::span<const double> g, double sens_l1, double eps,
                                Stream& stream);

// Adds iid Gaussian noise of standard deviation sens_l2 / mu per coordinate;
// mu-Gaussian-differentially private for an l2-sensitivity-bounded input.
std::vector<double> add_gaussian(std::span<const double> g, double sens_l2, double mu,
                                 Stream& stream);

struct PrivacyBudget {
  enum class Kind { PureDP, GDP };
  Kind kind = Kind::PureDP;
  double value = 0.0;
};

// Sequential composition: pure-DP budgets add, Gaussian-DP budgets add in
// root-sum-square. Mixing kinds or composing an empty list is an error.
PrivacyBudget compose(std::span<const PrivacyBudget> budgets);

// Draws V in R^m with density proportional to exp(-c * linf_norm(V)):
// V = r * (U_1, ..., U_m), U_j ~ Uniform(-1, 1), r ~ Gamma(m + 1, rate c).
// Consumes the m uniforms first, then the radius.
std::vector<double> sample_linf(double c, int m, Stream& stream);

// Membership in the convex hull of the sensitivity set of the canonical
// statistic pair (sum of values in [0,1], sum of their squares), expressed in
// units where the per-coordinate sensitivity is 1. Closed set; false for
// |u1| > 1.
bool hull_contains(double u1, double u2);

// Gauge (Minkowski functional) of that hull: the smallest t >= 0 with
// (u1, u2) in t * Hull. Evaluated by bisection; used for diagnostics/tests.
double hull_gauge(double u1, double u2);

// K-norm mechanism for a 2-vector statistic with the hull above as K:
// releases T + r * U with r ~ Gamma(3, rate eps / delta_K) and U sampled
// uniformly from the hull by rejection from the box [-delta_inf, delta_inf]^2.
// Throws std::runtime_error if no proposal lands in the hull within
// max_attempts draws.
Eigen::Vector2d knorm_mechanism(const Eigen::Vector2d& T, double eps, double delta_inf,
                                double delta_K, Stream& stream,
                                long max_attempts = 1000000);

// Smooth convex loss handle: average loss over a dataset and its gradient.
// value_grad is optional; when set it must agree with value and grad and
// lets the minimizer share one data pass per iteration.
struct SmoothLoss {
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> grad;
  ValueGradFn value_grad;
};

// Ridge weight of the extended objective-perturbation mechanism.
double objective_perturb_gamma(double eps, double q, double lambda);

// Deterministic core of objective perturbation once the linf-noise vector V
// is fixed: minimizes loss(theta) + gamma/(2n) |theta|^2 + (V . theta)/n over
// the box. Exposed so synthetic-data channels can freeze V per replica.
VectorXd objective_perturb_with_noise(const SmoothLoss& loss, int n, const Box& theta_box,
                                      double gamma, const VectorXd& V,
                                      const VectorXd& start,
                                      const MinimizeOptions& opt = {});

// eps-DP objective perturbation under linf gradient-sensitivity delta_inf and
// smoothness bound lambda; q splits the budget between output and noise terms.
VectorXd objective_perturb(const SmoothLoss& loss, int n, const Box& theta_box,
                           double eps, double q, double lambda, double delta_inf,
                           Stream& stream, const MinimizeOptions& opt = {});

}  // namespace dpboot::dp
