#include "dpboot/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dpboot/optim.hpp"
#include "dpboot/special.hpp"

namespace dpboot::boot {

namespace {

// floor with a small forgiveness so quantities like 400 * 0.05 that are
// integers in exact arithmetic do not round down from fp error.
int floor_index(double x) { return static_cast<int>(std::floor(x + 1e-9)); }

void check_alpha(double alpha) {
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw std::invalid_argument("bootstrap: alpha must lie in (0,1)");
}

std::pair<Stream, Stream> boot_streams(const SeedBank& bank,
                                       std::span<const std::uint64_t> scope, int b) {
  std::vector<std::uint64_t> idx(scope.begin(), scope.end());
  idx.push_back(static_cast<std::uint64_t>(b));
  return {bank.derive("boot/data", idx), bank.derive("boot/dp", idx)};
}

double checked_sigma(const TauSigma& ts) {
  if (!std::isfinite(ts.sigma_hat) || !(ts.sigma_hat > 0.0))
    throw std::runtime_error("bootstrap: sigma_hat must be positive and finite");
  return ts.sigma_hat;
}

VectorXd fit_full(const Estimator& estimator, const VectorXd& s, const models::Model& model) {
  VectorXd theta_hat = estimator(s);
  if (theta_hat.size() != model.param_dim())
    throw std::runtime_error("bootstrap: estimator returned wrong parameter dimension");
  return theta_hat;
}

void check_stat(const VectorXd& s, const models::Model& model) {
  if (s.size() != model.stat_dim())
    throw std::invalid_argument("bootstrap: statistic dimension mismatch");
}

// Smallest |target - tau(theta)| over a box, from the box optimizer plus a
// corner sweep; any evaluated point bounds the infimum from above, and for
// monotone tau a corner attains it exactly.
double region_distance(const TauFn& tau, double target, const Box& region) {
  auto dist = [&](const VectorXd& th) { return std::fabs(target - tau(th)); };
  VectorXd center = 0.5 * (region.lo + region.hi);
  double best = dist(center);

  const int dim = region.dim();
  if (dim <= 12) {
    VectorXd corner(dim);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << dim); ++mask) {
      for (int i = 0; i < dim; ++i)
        corner[i] = (mask >> i) & 1 ? region.hi[i] : region.lo[i];
      best = std::min(best, dist(corner));
    }
  }

  MinimizeResult run = minimize_box([&](const VectorXd& th) { return dist(th); }, region,
                                    center);
  return std::min(best, run.f);
}

double null_distance(const NullSpec& null_spec, double tau_s, const models::Model& model) {
  switch (null_spec.kind) {
    case NullSpec::Kind::Point:
      return std::fabs(tau_s - null_spec.value);
    case NullSpec::Kind::Interval:
      if (tau_s < null_spec.lo) return null_spec.lo - tau_s;
      if (tau_s > null_spec.hi) return tau_s - null_spec.hi;
      return 0.0;
    case NullSpec::Kind::Region:
      if (null_spec.region.dim() != model.param_dim())
        throw std::invalid_argument("bootstrap: region null dimension mismatch");
      return 0.0;  // handled by caller with tau available
  }
  throw std::logic_error("bootstrap: unknown null kind");
}

}  // namespace

NullSpec NullSpec::point(double c) {
  NullSpec n;
  n.kind = Kind::Point;
  n.value = c;
  return n;
}

NullSpec NullSpec::interval(double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("NullSpec::interval: requires lo <= hi");
  NullSpec n;
  n.kind = Kind::Interval;
  n.lo = lo;
  n.hi = hi;
  return n;
}

NullSpec NullSpec::make_region(const Box& box) {
  NullSpec n;
  n.kind = Kind::Region;
  n.region = box;
  return n;
}

std::pair<int, int> pb_ci_indices(int B, double alpha) {
  check_alpha(alpha);
  if (B < 1) throw std::invalid_argument("pb_ci: requires B >= 1");
  const int jlo = floor_index((B + 1) * alpha / 2.0);
  if (jlo < 1)
    throw std::invalid_argument("pb_ci: requires (B+1)*alpha/2 >= 1; increase B or alpha");
  return {jlo, 1 + B - jlo};
}

IntervalResult pb_ci(const VectorXd& s, const models::Model& model, const Estimator& estimator,
                     const TauFn& tau, const PivotEstimator& pivot, int B, double alpha,
                     const SeedBank& bank, std::span<const std::uint64_t> scope,
                     std::vector<double>* xi_out) {
  check_stat(s, model);
  const auto [jlo, jhi] = pb_ci_indices(B, alpha);

  const VectorXd theta_hat = fit_full(estimator, s, model);
  const double tau0 = tau(theta_hat);
  const TauSigma at_s = pivot(s, &theta_hat);
  const double sigma_s = checked_sigma(at_s);

  std::vector<double> xi(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    auto [data, dp] = boot_streams(bank, scope, b);
    const VectorXd s_b = model.simulate(theta_hat, data, dp);
    const TauSigma at_b = pivot(s_b, &theta_hat);
    xi[static_cast<std::size_t>(b)] = (at_b.tau_hat - tau0) / checked_sigma(at_b);
  }
  std::sort(xi.begin(), xi.end());

  IntervalResult res;
  res.point = at_s.tau_hat;
  res.lo = at_s.tau_hat + xi[static_cast<std::size_t>(jlo - 1)] * sigma_s;
  res.hi = at_s.tau_hat + xi[static_cast<std::size_t>(jhi - 1)] * sigma_s;
  res.alpha = alpha;
  res.method = "pb";
  res.B = B;
  res.lo_index = jlo;
  res.hi_index = jhi;
  if (xi_out) *xi_out = std::move(xi);
  return res;
}

TestResult pb_ht(const VectorXd& s, const models::Model& model, const Estimator& estimator,
                 const TauFn& tau, const PivotEstimator& pivot, const NullSpec& null_spec,
                 int B, double alpha, const SeedBank& bank,
                 std::span<const std::uint64_t> scope, std::vector<double>* tb_out) {
  check_stat(s, model);
  check_alpha(alpha);
  if (B < 1) throw std::invalid_argument("pb_ht: requires B >= 1");
  if ((B + 1) * alpha + 1e-9 < 1.0)
    throw std::invalid_argument("pb_ht: requires (B+1)*alpha >= 1; increase B or alpha");

  const VectorXd theta_hat = fit_full(estimator, s, model);
  const double tau0 = tau(theta_hat);
  const TauSigma at_s = pivot(s, &theta_hat);
  const double sigma_s = checked_sigma(at_s);

  double dist;
  if (null_spec.kind == NullSpec::Kind::Region) {
    if (null_spec.region.dim() != model.param_dim())
      throw std::invalid_argument("bootstrap: region null dimension mismatch");
    dist = region_distance(tau, at_s.tau_hat, null_spec.region);
  } else {
    dist = null_distance(null_spec, at_s.tau_hat, model);
  }
  const double T = dist / sigma_s;

  std::vector<double> tb(static_cast<std::size_t>(B));
  int count_ge = 0;
  for (int b = 0; b < B; ++b) {
    auto [data, dp] = boot_streams(bank, scope, b);
    const VectorXd s_b = model.simulate(theta_hat, data, dp);
    const TauSigma at_b = pivot(s_b, &theta_hat);
    const double t_b = std::fabs(at_b.tau_hat - tau0) / checked_sigma(at_b);
    tb[static_cast<std::size_t>(b)] = t_b;
    if (t_b >= T) ++count_ge;
  }

  TestResult res;
  res.statistic = T;
  res.p_value = (1.0 + count_ge) / (B + 1.0);
  res.alpha = alpha;
  res.B = B;
  res.reject = res.p_value <= alpha;
  if (tb_out) {
    std::sort(tb.begin(), tb.end());
    *tb_out = std::move(tb);
  }
  return res;
}

const char* baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::NaivePercentile:
      return "naive_percentile";
    case BaselineKind::SimplifiedT:
      return "simplified_t";
    case BaselineKind::Ferrando:
      return "ferrando";
    case BaselineKind::EfronBC:
      return "efron_bc";
  }
  throw std::logic_error("baseline_name: unknown kind");
}

IntervalResult baseline_ci(const VectorXd& s, const models::Model& model, BaselineKind kind,
                           int B, double alpha, const SeedBank& bank,
                           std::span<const std::uint64_t> scope, int component_index) {
  check_stat(s, model);
  check_alpha(alpha);
  if (B < 1) throw std::invalid_argument("baseline_ci: requires B >= 1");
  if (static_cast<double>(B) + 1e-9 < 1.0 / alpha)
    throw std::invalid_argument("baseline_ci: requires B >= 1/alpha");
  if (component_index < 0 || component_index >= model.param_dim())
    throw std::invalid_argument("baseline_ci: component index out of range");

  const VectorXd theta_hat = model.naive_estimate(s);
  const double point = theta_hat[component_index];

  std::vector<double> draws(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    auto [data, dp] = boot_streams(bank, scope, b);
    const VectorXd s_b = model.simulate(theta_hat, data, dp);
    draws[static_cast<std::size_t>(b)] = model.naive_estimate(s_b)[component_index];
  }

  IntervalResult res;
  res.point = point;
  res.alpha = alpha;
  res.method = baseline_name(kind);
  res.B = B;

  const int jlo = std::max(1, floor_index((B + 1) * alpha / 2.0));
  const int jhi = 1 + B - jlo;

  switch (kind) {
    case BaselineKind::NaivePercentile: {
      std::sort(draws.begin(), draws.end());
      res.lo = draws[static_cast<std::size_t>(jlo - 1)];
      res.hi = draws[static_cast<std::size_t>(jhi - 1)];
      res.lo_index = jlo;
      res.hi_index = jhi;
      break;
    }
    case BaselineKind::SimplifiedT: {
      std::vector<double> v(draws.size());
      for (std::size_t b = 0; b < draws.size(); ++b) v[b] = 2.0 * point - draws[b];
      std::sort(v.begin(), v.end());
      res.lo = v[static_cast<std::size_t>(jlo - 1)];
      res.hi = v[static_cast<std::size_t>(jhi - 1)];
      res.lo_index = jlo;
      res.hi_index = jhi;
      break;
    }
    case BaselineKind::Ferrando: {
      double mean = 0.0;
      for (double x : draws) mean += x;
      mean /= static_cast<double>(draws.size());
      const double bias = mean - point;
      std::vector<double> v(draws.size());
      for (std::size_t b = 0; b < draws.size(); ++b) v[b] = draws[b] - bias;
      std::sort(v.begin(), v.end());
      res.lo = v[static_cast<std::size_t>(jlo - 1)];
      res.hi = v[static_cast<std::size_t>(jhi - 1)];
      res.lo_index = jlo;
      res.hi_index = jhi;
      break;
    }
    case BaselineKind::EfronBC: {
      int below = 0;
      for (double x : draws)
        if (x < point) ++below;
      double frac = static_cast<double>(below) / B;
      if (frac <= 0.0 || frac >= 1.0) {
        frac = std::clamp(frac, 1.0 / (2.0 * B), 1.0 - 1.0 / (2.0 * B));
        res.bc_clamped = true;
      }
      const double z0 = norm_ppf(frac);
      const double p_lo = norm_cdf(2.0 * z0 + norm_ppf(alpha / 2.0));
      const double p_hi = norm_cdf(2.0 * z0 + norm_ppf(1.0 - alpha / 2.0));
      const int klo = std::clamp(floor_index((B + 1) * p_lo), 1, B);
      const int khi = std::clamp(B + 1 - floor_index((B + 1) * (1.0 - p_hi)), 1, B);
      std::sort(draws.begin(), draws.end());
      res.lo = draws[static_cast<std::size_t>(klo - 1)];
      res.hi = draws[static_cast<std::size_t>(khi - 1)];
      res.lo_index = klo;
      res.hi_index = khi;
      break;
    }
  }
  return res;
}

}  // namespace dpboot::boot
