#include "dpboot/dp.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dpboot::dp {

double clamp(double x, double lower, double upper) {
  if (!(lower < upper)) throw std::invalid_argument("clamp: requires lower < upper");
  return std::min(std::max(x, lower), upper);
}

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double smoothstep01(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

double smooth_clamp(double x, double a, double b, SmoothClampKind kind) {
  if (!(a < b)) throw std::invalid_argument("smooth_clamp: requires a < b");
  switch (kind) {
    case SmoothClampKind::Sigmoid:
      return a + (b - a) * sigmoid(4.0 / (b - a) * (x - 0.5 * (a + b)));
    case SmoothClampKind::Smoothstep:
      return a + (b - a) * smoothstep01((x - a) / (b - a));
  }
  throw std::logic_error("smooth_clamp: unknown kind");
}

std::vector<double> add_laplace(std::span<const double> g, double sens_l1, double eps,
                                Stream& stream) {
  if (!(eps > 0.0)) throw std::invalid_argument("add_laplace: requires eps > 0");
  if (sens_l1 < 0.0) throw std::invalid_argument("add_laplace: negative sensitivity");
  const double b = sens_l1 / eps;
  std::vector<double> out(g.begin(), g.end());
  for (double& v : out) v += stream.laplace(b);
  return out;
}

std::vector<double> add_gaussian(std::span<const double> g, double sens_l2, double mu,
                                 Stream& stream) {
  if (!(mu > 0.0)) throw std::invalid_argument("add_gaussian: requires mu > 0");
  if (sens_l2 < 0.0) throw std::invalid_argument("add_gaussian: negative sensitivity");
  const double sigma = sens_l2 / mu;
  std::vector<double> out(g.begin(), g.end());
  for (double& v : out) v += sigma * stream.normal01();
  return out;
}

PrivacyBudget compose(std::span<const PrivacyBudget> budgets) {
  if (budgets.empty()) throw std::invalid_argument("compose: empty budget list");
  const auto kind = budgets.front().kind;
  double acc = 0.0;
  for (const auto& b : budgets) {
    if (b.kind != kind) throw std::invalid_argument("compose: mixed budget kinds");
    if (!(b.value > 0.0)) throw std::invalid_argument("compose: nonpositive budget");
    acc += (kind == PrivacyBudget::Kind::PureDP) ? b.value : b.value * b.value;
  }
  if (kind == PrivacyBudget::Kind::GDP) acc = std::sqrt(acc);
  return PrivacyBudget{kind, acc};
}

std::vector<double> sample_linf(double c, int m, Stream& stream) {
  if (!(c > 0.0)) throw std::invalid_argument("sample_linf: requires c > 0");
  if (m < 1) throw std::invalid_argument("sample_linf: requires m >= 1");
  std::vector<double> v(static_cast<std::size_t>(m));
  for (double& u : v) u = stream.uniform_sym();
  const double r = stream.gamma(static_cast<double>(m) + 1.0, c);
  for (double& u : v) u *= r;
  return v;
}

bool hull_contains(double u1, double u2) {
  if (u1 < -1.0 || u1 > 1.0) return false;
  if (u1 <= -0.5) {
    const double t = u1 + 1.0;
    return t * t - 1.0 <= u2 && u2 <= -u1 * u1;
  }
  if (u1 < 0.5) return u1 - 0.25 <= u2 && u2 <= u1 + 0.25;
  const double t = u1 - 1.0;
  return u1 * u1 <= u2 && u2 <= 1.0 - t * t;
}

double hull_gauge(double u1, double u2) {
  if (u1 == 0.0 && u2 == 0.0) return 0.0;
  const double linf = std::max(std::abs(u1), std::abs(u2));
  // The hull sits inside the unit sup-norm box and contains the box of
  // half-width 1/8, so the gauge lies in [linf, 8*linf].
  double lo = 0.0;
  double hi = 8.0 * linf;
  for (int it = 0; it < 90; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hull_contains(u1 / mid, u2 / mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

Eigen::Vector2d knorm_mechanism(const Eigen::Vector2d& T, double eps, double delta_inf,
                                double delta_K, Stream& stream, long max_attempts) {
  if (!(eps > 0.0)) throw std::invalid_argument("knorm_mechanism: requires eps > 0");
  if (!(delta_inf > 0.0) || !(delta_K > 0.0)) {
    throw std::invalid_argument("knorm_mechanism: requires positive sensitivities");
  }
  const double r = stream.gamma(3.0, eps / delta_K);
  for (long attempt = 0; attempt < max_attempts; ++attempt) {
    const double u1 = delta_inf * stream.uniform_sym();
    const double u2 = delta_inf * stream.uniform_sym();
    if (hull_contains(u1, u2)) return T + r * Eigen::Vector2d(u1, u2);
  }
  throw std::runtime_error("knorm_mechanism: rejection sampler exhausted max attempts");
}

double objective_perturb_gamma(double eps, double q, double lambda) {
  if (!(eps > 0.0) || !(q > 0.0 && q < 1.0) || !(lambda > 0.0)) {
    throw std::invalid_argument("objective_perturb_gamma: bad parameters");
  }
  return lambda / std::expm1(eps * (1.0 - q));
}

VectorXd objective_perturb_with_noise(const SmoothLoss& loss, int n, const Box& theta_box,
                                      double gamma, const VectorXd& V,
                                      const VectorXd& start, const MinimizeOptions& opt) {
  if (n < 1) throw std::invalid_argument("objective_perturb: requires n >= 1");
  const double inv_n = 1.0 / static_cast<double>(n);
  auto f = [&](const VectorXd& th) {
    return loss.value(th) + 0.5 * gamma * inv_n * th.squaredNorm() + inv_n * V.dot(th);
  };
  MinimizeResult res;
  if (loss.value_grad) {
    ValueGradFn fg = [&, gamma, inv_n](const VectorXd& th, VectorXd& g) {
      const double v = loss.value_grad(th, g);
      g += gamma * inv_n * th + inv_n * V;
      return v + 0.5 * gamma * inv_n * th.squaredNorm() + inv_n * V.dot(th);
    };
    res = minimize_box_fused(f, fg, theta_box, theta_box.clip(start), opt);
  } else {
    GradientFn grad;
    if (loss.grad) {
      grad = [&, gamma, inv_n](const VectorXd& th) -> VectorXd {
        return loss.grad(th) + gamma * inv_n * th + inv_n * V;
      };
    }
    res = minimize_box(f, theta_box, theta_box.clip(start), opt,
                       loss.grad ? &grad : nullptr);
  }
  if (!res.converged) {
    std::ostringstream msg;
    msg << "objective_perturb: minimizer did not converge (grad sup norm "
        << res.grad_inf_norm << ", " << res.message << ")";
    throw std::runtime_error(msg.str());
  }
  return res.x;
}

VectorXd objective_perturb(const SmoothLoss& loss, int n, const Box& theta_box, double eps,
                           double q, double lambda, double delta_inf, Stream& stream,
                           const MinimizeOptions& opt) {
  if (!(delta_inf > 0.0)) throw std::invalid_argument("objective_perturb: requires delta_inf > 0");
  const double gamma = objective_perturb_gamma(eps, q, lambda);
  const auto m = theta_box.dim();
  const std::vector<double> v = sample_linf(eps * q / delta_inf, static_cast<int>(m), stream);
  VectorXd V = Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(m));
  return objective_perturb_with_noise(loss, n, theta_box, gamma, V, theta_box.center(), opt);
}

}  // namespace dpboot::dp
