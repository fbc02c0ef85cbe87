#include "dpboot/estimation.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "dpboot/models.hpp"
#include "dpboot/seedbank.hpp"

using dpboot::Box;
using dpboot::MatrixXd;
using dpboot::SeedBank;
using dpboot::Stream;
using dpboot::VectorXd;
using namespace dpboot::est;

namespace {

VectorXd vec2(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

// Statistic map s = A theta + c + noise_sd * N(0, I) with frozen noise.
// Exposes exactly the structure the estimator and pivot formulas assume, so
// their outputs can be checked against closed forms.
class LinearMapModel : public dpboot::models::Model {
 public:
  LinearMapModel(MatrixXd A, VectorXd c, double noise_sd, Box box)
      : A_(std::move(A)), c_(std::move(c)), noise_sd_(noise_sd), box_(std::move(box)) {}

  const std::string& name() const override {
    static const std::string n = "linear_map";
    return n;
  }
  int param_dim() const override { return static_cast<int>(A_.cols()); }
  int stat_dim() const override { return static_cast<int>(A_.rows()); }
  const Box& theta_box() const override { return box_; }
  std::vector<dpboot::dp::PrivacyBudget> channel_budgets() const override {
    return {{dpboot::dp::PrivacyBudget::Kind::GDP, 1.0}};
  }
  VectorXd simulate(const VectorXd& theta, Stream& data, Stream& dp) const override {
    (void)dp;
    VectorXd g(stat_dim());
    for (int i = 0; i < stat_dim(); ++i) g[i] = data.normal01();
    return A_ * theta + c_ + noise_sd_ * g;
  }
  VectorXd naive_estimate(const VectorXd& s) const override {
    VectorXd x = A_.colPivHouseholderQr().solve(s - c_);
    for (int i = 0; i < param_dim(); ++i) x[i] = std::clamp(x[i], box_.lo[i], box_.hi[i]);
    return x;
  }

 private:
  MatrixXd A_;
  VectorXd c_;
  double noise_sd_;
  Box box_;
};

}  // namespace

TEST_SUITE("estimation") {

TEST_CASE("ensemble evaluation is frozen and replicas are reproducible") {
  auto model = dpboot::models::make_locscale_model({});
  SeedBank bank(31);
  std::vector<std::uint64_t> scope{4};
  SynthEnsemble E(*model, bank, scope, 6);
  CHECK(E.R() == 6);
  CHECK(E.stat_dim() == 2);

  VectorXd th = vec2(1.0, 1.0);
  MatrixXd a = E.evaluate(th);
  MatrixXd b = E.evaluate(th);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.row(0) - a.row(1)).cwiseAbs().maxCoeff() > 0.0);

  for (int r : {0, 3, 5}) {
    auto [data, dp] = E.replica_streams(r);
    VectorXd direct = model->simulate(th, data, dp);
    CHECK((direct.transpose() - a.row(r)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK_THROWS(E.replica_streams(6));
  CHECK_THROWS(SynthEnsemble(*model, bank, scope, 0));
}

TEST_CASE("row moments match a hand-worked two-row example") {
  MatrixXd rows(2, 2);
  rows << 0.0, 0.0, 2.0, 0.0;
  Moments mo = row_moments(rows);
  CHECK(mo.mean[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mo.mean[1] == 0.0);
  CHECK(mo.cov(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(mo.cov(0, 1) == 0.0);
  CHECK(mo.cov(1, 0) == 0.0);
  CHECK(mo.cov(1, 1) == 0.0);

  MatrixXd one(1, 2);
  one << 1.0, 2.0;
  CHECK_THROWS(row_moments(one));
}

TEST_CASE("frozen-ensemble mean map has the analytic derivatives") {
  // A wide clamp range keeps every point interior, so the released mean is
  // exactly mu + sigma * ubar + frozen noise and the released variance is
  // sigma^2 * vbar + frozen noise, both affine/quadratic with coefficients
  // recoverable from the ensemble itself.
  dpboot::models::LocScaleConfig cfg;
  cfg.L = -100.0;
  cfg.U = 103.0;
  auto model = dpboot::models::make_locscale_model(cfg);
  SeedBank bank(77);
  std::vector<std::uint64_t> scope{1};
  SynthEnsemble E(*model, bank, scope, 40);

  auto mean_at = [&](double mu, double sigma) {
    return ensemble_moments(E, vec2(mu, sigma)).mean;
  };
  VectorXd m01 = mean_at(0.0, 1.0);
  VectorXd m02 = mean_at(0.0, 2.0);
  double ubar = m02[0] - m01[0];
  double vbar = (m02[1] - m01[1]) / 3.0;

  const double d = 1e-5;
  VectorXd up = mean_at(0.0, 1.0 + d);
  VectorXd dn = mean_at(0.0, 1.0 - d);
  CHECK((up[0] - dn[0]) / (2 * d) == doctest::Approx(ubar).epsilon(1e-6));
  CHECK((up[1] - dn[1]) / (2 * d) == doctest::Approx(2.0 * vbar).epsilon(1e-6));

  VectorXd mup = mean_at(d, 1.0);
  VectorXd mdn = mean_at(-d, 1.0);
  CHECK((mup[0] - mdn[0]) / (2 * d) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK((mup[1] - mdn[1]) / (2 * d) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("quadratic-form objectives agree and validate their weights") {
  auto model = dpboot::models::make_locscale_model({});
  SeedBank bank(5);
  std::vector<std::uint64_t> scope{2};
  SynthEnsemble E(*model, bank, scope, 60);
  VectorXd s = vec2(1.2, 0.9);
  VectorXd th = vec2(0.8, 1.1);

  Moments mo = ensemble_moments(E, th);
  VectorXd d = s - mo.mean;
  double direct = d.dot(MatrixXd::Identity(2, 2) * d);
  CHECK(ind_objective(s, E, th, MatrixXd::Identity(2, 2)) ==
        doctest::Approx(direct).epsilon(1e-14));

  double ridge = 1e-10 * mo.cov.trace() / 2.0;
  MatrixXd W = mo.cov;
  W.diagonal().array() += ridge;
  MatrixXd Omega = W.inverse();
  double via_ind = d.dot(Omega * d);
  CHECK(adi_objective(s, E, th) == doctest::Approx(via_ind).epsilon(1e-9));
  CHECK(adi_objective(s, E, th, ridge) == doctest::Approx(via_ind).epsilon(1e-9));

  MatrixXd notpd(2, 2);
  notpd << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS(ind_objective(s, E, th, notpd));
  CHECK_THROWS(ind_objective(s, E, th, MatrixXd::Identity(3, 3)));
}

TEST_CASE("matching seeds are recovered almost exactly") {
  auto model = dpboot::models::make_locscale_model({});
  SeedBank bank(99);
  std::vector<std::uint64_t> scope{7};
  SynthEnsemble E(*model, bank, scope, 1);

  VectorXd theta0 = vec2(1.0, 1.0);
  auto [data, dp] = E.replica_streams(0);
  VectorXd s = model->simulate(theta0, data, dp);

  EstimateOptions opt;
  opt.mode = WeightMode::IND;
  EstimateResult res = estimate(s, *model, E, opt);
  CHECK(res.converged);
  CHECK(res.objective_value < 1e-10);
  CHECK((res.theta_hat - theta0).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(res.starts_tried >= 2);
}

TEST_CASE("adaptive fit tracks the statistic for an identity map") {
  Box box = dpboot::make_box({-5.0, -5.0}, {5.0, 5.0});
  LinearMapModel model(MatrixXd::Identity(2, 2), VectorXd::Zero(2), 0.01, box);
  SeedBank bank(12);
  std::vector<std::uint64_t> scope{0};
  SynthEnsemble E(model, bank, scope, 500);

  Stream obs = bank.derive("obs", {1});
  VectorXd s = vec2(0.3 + 0.01 * obs.normal01(), -0.4 + 0.01 * obs.normal01());
  EstimateResult res = estimate(s, model, E, {});
  CHECK(res.converged);
  // With an identity map the fit equals s minus the frozen noise average,
  // which at R=500 and sd 0.01 is well below 1e-3 per coordinate.
  CHECK((res.theta_hat - s).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("argmin is invariant to rescaling a fixed weight matrix") {
  auto model = dpboot::models::make_locscale_model({});
  SeedBank bank(21);
  std::vector<std::uint64_t> scope{3};
  SynthEnsemble E(*model, bank, scope, 50);

  Stream data = bank.derive("obs/data", {0});
  Stream dp = bank.derive("obs/dp", {0});
  VectorXd s = model->simulate(vec2(1.5, 0.8), data, dp);

  EstimateOptions a;
  a.mode = WeightMode::IND;
  a.omega = MatrixXd::Identity(2, 2);
  EstimateOptions b = a;
  b.omega = 5.0 * MatrixXd::Identity(2, 2);
  VectorXd t1 = estimate(s, *model, E, a).theta_hat;
  VectorXd t2 = estimate(s, *model, E, b).theta_hat;
  CHECK((t1 - t2).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("estimates are bit-reproducible and flag boundary solutions") {
  Box box = dpboot::make_box({-1.0, -1.0}, {1.0, 1.0});
  LinearMapModel model(MatrixXd::Identity(2, 2), VectorXd::Zero(2), 0.05, box);
  SeedBank bank(8);
  std::vector<std::uint64_t> scope{9};
  SynthEnsemble E(model, bank, scope, 80);

  VectorXd s = vec2(5.0, 0.1);
  EstimateResult r1 = estimate(s, model, E, {});
  EstimateResult r2 = estimate(s, model, E, {});
  CHECK(r1.theta_hat[0] == r2.theta_hat[0]);
  CHECK(r1.theta_hat[1] == r2.theta_hat[1]);
  CHECK(r1.objective_value == r2.objective_value);
  CHECK(r1.evaluations == r2.evaluations);
  CHECK(r1.at_boundary[0]);
  CHECK_FALSE(r1.at_boundary[1]);

  EstimateOptions single;
  single.multi_start = false;
  single.start = vec2(0.0, 0.0);
  EstimateResult r3 = estimate(s, model, E, single);
  CHECK(r3.starts_tried == 1);
  CHECK(r3.theta_hat[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("estimate validates inputs") {
  auto model = dpboot::models::make_locscale_model({});
  SeedBank bank(3);
  std::vector<std::uint64_t> scope{0};
  SynthEnsemble E1(*model, bank, scope, 1);
  CHECK_THROWS(estimate(vec2(1.0, 1.0), *model, E1, {}));  // ADI needs R >= 2

  SynthEnsemble E(*model, bank, scope, 4);
  VectorXd bad(3);
  bad << 1.0, 2.0, 3.0;
  CHECK_THROWS(estimate(bad, *model, E, {}));

  auto other = dpboot::models::make_locscale_model({});
  SynthEnsemble Eo(*other, bank, scope, 4);
  CHECK_THROWS(estimate(vec2(1.0, 1.0), *model, Eo, {}));
}

TEST_CASE("pivot Jacobian and scale recover a linear map's truth") {
  MatrixXd A(2, 2);
  A << 1.2, 0.3, -0.4, 0.9;
  Box box = dpboot::make_box({-5.0, -5.0}, {5.0, 5.0});
  const double sd = 0.37;
  LinearMapModel model(A, vec2(0.2, -0.1), sd, box);
  SeedBank bank(45);
  std::vector<std::uint64_t> scope{0};
  SynthEnsemble E(model, bank, scope, 2000);

  PivotInfo info;
  double shat = approx_pivot_sd(vec2(0.5, -0.2), E, 1e-6, 0, &info);

  // Common random numbers cancel the frozen noise in the forward difference,
  // so the Jacobian equals A to rounding.
  CHECK((info.jacobian - A).cwiseAbs().maxCoeff() < 1e-3);
  // The statistic covariance is sd^2 I up to sampling error, and mapping it
  // through the Jacobian gives sd * sqrt((A' A)^-1)_tt for each target.
  MatrixXd truth = sd * sd * (A.transpose() * A).inverse();
  CHECK(shat == doctest::Approx(std::sqrt(truth(0, 0))).epsilon(0.05));
  double shat1 = approx_pivot_sd(vec2(0.5, -0.2), E, 1e-6, 1);
  CHECK(shat1 == doctest::Approx(std::sqrt(truth(1, 1))).epsilon(0.05));
  CHECK((info.stat_cov / (sd * sd) - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.12);

  SynthEnsemble tiny(model, bank, scope, 2);
  CHECK_THROWS(approx_pivot_sd(vec2(0.0, 0.0), tiny, 1e-6, 0));
  CHECK_THROWS(approx_pivot_sd(vec2(0.0, 0.0), E, 1e-6, 2));
  CHECK_THROWS(approx_pivot_sd(vec2(0.0, 0.0), E, 0.0, 0));
}

TEST_CASE("location-scale error shrinks as n grows") {
  const VectorXd theta0 = vec2(1.0, 1.0);
  auto mean_err = [&](int n) {
    dpboot::models::LocScaleConfig cfg;
    cfg.n = n;
    auto model = dpboot::models::make_locscale_model(cfg);
    SeedBank bank(2026);
    double total = 0.0;
    const int reps = 12;
    for (int k = 0; k < reps; ++k) {
      std::vector<std::uint64_t> scope{static_cast<std::uint64_t>(n),
                                       static_cast<std::uint64_t>(k)};
      Stream data = bank.derive("obs/data", scope);
      Stream dp = bank.derive("obs/dp", scope);
      VectorXd s = model->simulate(theta0, data, dp);
      SynthEnsemble E(*model, bank, scope, 40);
      EstimateOptions opt;
      opt.multi_start = false;
      EstimateResult res = estimate(s, *model, E, opt);
      total += (res.theta_hat - theta0).norm();
    }
    return total / reps;
  };
  double e100 = mean_err(100);
  double e400 = mean_err(400);
  CHECK(e400 < e100);
  CHECK(e100 < 0.5);
}

}  // TEST_SUITE
