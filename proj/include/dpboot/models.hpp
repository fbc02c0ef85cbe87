#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dpboot/common.hpp"
#include "dpboot/dp.hpp"
#include "dpboot/seedbank.hpp"

namespace dpboot::models {

// How data are projected into the sensitivity-bounding range before a
// statistic is formed. Hard is the plain min/max clamp; the other two are
// the differentiable substitutes from the dp module.
enum class ClampKind { Hard, Sigmoid, Smoothstep };

double apply_clamp(double x, double lo, double hi, ClampKind kind);

// Normal location-scale model. Each of the two released statistics is an
// eps-GDP Gaussian channel, so the pair composes to sqrt(2)*eps-GDP.
struct LocScaleConfig {
  int n = 100;
  double eps = 1.0;  // per-statistic GDP parameter
  double L = 0.0;
  double U = 3.0;
  ClampKind clamp = ClampKind::Hard;
  Box theta_box = make_box({-2.0, 1e-6}, {10.0, 10.0});  // (mu, sigma)
};

// Gaussian-design simple linear regression releasing five clamped moments,
// each a (mu/sqrt(5))-GDP Gaussian channel.
struct LinRegConfig {
  int n = 200;
  double mu = 1.0;  // total GDP budget across the five statistics
  double Delta = 2.0;
  ClampKind clamp = ClampKind::Hard;
  // (beta1, beta0, mu_x, sigma_x, sigma_e)
  Box theta_box = make_box({-10.0, -10.0, -10.0, 1e-6, 1e-6}, {10.0, 10.0, 10.0, 10.0, 10.0});
};

// Logistic regression with a Beta-distributed predictor. The release pairs
// objective-perturbed coefficients with a K-norm-noised moment vector of the
// predictor; budgets are pure DP and sum to eps.
struct LogisticConfig {
  int n = 100;
  double eps = 1.0;      // total pure-DP budget
  double obj_frac = 0.9; // share of eps spent on the coefficient channel
  double q = 0.85;
  double lambda = 0.5;
  double delta_inf = 2.0;  // sup-norm sensitivity of the loss gradient sum
  Box coeff_box = make_box({-10.0, -10.0}, {10.0, 10.0});  // (beta0, beta1)
  // (beta0, beta1, a, b)
  Box theta_box = make_box({-10.0, -10.0, 0.05, 0.05}, {10.0, 10.0, 20.0, 20.0});
  // Replace the Bernoulli indicator by its success probability in generated
  // data. Off by default; see logistic_generate.
  bool smooth_y = false;
};

struct XYData {
  std::vector<double> x;
  std::vector<double> y;
};

// Predictor kept on its (0,1) scale; the regression uses x = 2z - 1.
// y holds 0/1 labels, or probabilities when generated with smooth_y.
struct ZYData {
  std::vector<double> z;
  std::vector<double> y;
};

// x_i = mu + sigma * normals[i]. Requires sigma > 0.
std::vector<double> locscale_generate(double mu, double sigma, std::span<const double> normals);

// Clamped mean and clamped sample variance (n-1 denominator) with Gaussian
// noise (U-L)/(n eps) * z1 and (U-L)^2/(n eps) * z2 respectively.
Eigen::Vector2d locscale_release(std::span<const double> data, double z1, double z2,
                                 const LocScaleConfig& cfg);

// theta = (beta1, beta0, mu_x, sigma_x, sigma_e); normals holds 2n draws,
// the first n driving x and the rest the regression errors.
XYData linreg_generate(const Eigen::VectorXd& theta, std::span<const double> normals);

// Releases s = (x~, y~, x2~, y2~, xy~): per-point clamped first and second
// moments with Gaussian noise. u_dp holds 5 standard normals consumed in the
// order x, x^2, y, xy, y^2.
Eigen::VectorXd linreg_release(const XYData& data, std::span<const double> u_dp,
                               const LinRegConfig& cfg);

struct FStat {
  double F = 0.0;
  bool valid = false;
};

// Slope F-statistic reconstructed from the five released moments. valid is
// false when the noisy moments imply a negative variance or negative
// residual sum of squares.
FStat linreg_F(const Eigen::VectorXd& s, int n);

// theta = (beta0, beta1, a, b); u holds 2n uniforms, the first n mapped
// through the Beta(a,b) quantile function for the predictor and the rest
// thresholded against expit(beta0 + beta1 x) for the labels. With smooth_y
// the labels are the success probabilities themselves, which makes the
// generator differentiable in beta at the cost of a O(1/n) change to the
// statistic's law.
ZYData logistic_generate(const Eigen::VectorXd& theta, std::span<const double> u,
                         bool smooth_y = false);

// Average logistic negative log-likelihood of (x = 2z - 1, y) over
// coefficients (b0, b1), with the gradient callback populated. Accepts
// fractional labels.
dp::SmoothLoss logistic_loss(const ZYData& data);

// Released statistic (beta0~, beta1~, T1~, T2~): objective perturbation on
// the coefficients at obj_frac * eps, then the K-norm mechanism on
// (sum z_i, sum z_i^2) at the remaining budget.
Eigen::Vector4d logistic_release(const ZYData& data, const LogisticConfig& cfg,
                                 Stream& dp_stream);

// A parametric model with a privatized release. simulate is a pure function
// of (theta, stream states): given streams at identical (key, position) it
// returns bit-identical statistics on every call.
class Model {
 public:
  virtual ~Model() = default;
  virtual const std::string& name() const = 0;
  virtual int param_dim() const = 0;
  virtual int stat_dim() const = 0;
  virtual const Box& theta_box() const = 0;
  // One budget entry per released channel; compose() of these is the
  // advertised total.
  virtual std::vector<dp::PrivacyBudget> channel_budgets() const = 0;
  dp::PrivacyBudget total_budget() const;
  virtual Eigen::VectorXd simulate(const Eigen::VectorXd& theta, Stream& data_stream,
                                   Stream& dp_stream) const = 0;
  // Plug-in estimate from the released statistic alone, clipped into the
  // parameter box. Biased under clamping; serves as a baseline and as an
  // optimizer start.
  virtual Eigen::VectorXd naive_estimate(const Eigen::VectorXd& s) const = 0;
};

std::unique_ptr<Model> make_locscale_model(const LocScaleConfig& cfg = {});
std::unique_ptr<Model> make_linreg_model(const LinRegConfig& cfg = {});
std::unique_ptr<Model> make_logistic_model(const LogisticConfig& cfg = {});

}  // namespace dpboot::models
