#include "dpboot/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dpboot/models.hpp"
#include "dpboot/seedbank.hpp"
#include "dpboot/special.hpp"

using dpboot::Box;
using dpboot::MatrixXd;
using dpboot::SeedBank;
using dpboot::Stream;
using dpboot::VectorXd;
using namespace dpboot::boot;

namespace {

VectorXd vec1(double a) {
  VectorXd v(1);
  v << a;
  return v;
}

// Scalar statistic s = theta + c + noise_sd * z with z ~ N(0,1) from the data
// stream. Closed-form inverses keep every expected value computable by hand.
class ShiftModel : public dpboot::models::Model {
 public:
  ShiftModel(double c, double noise_sd, Box box)
      : c_(c), noise_sd_(noise_sd), box_(std::move(box)) {}

  const std::string& name() const override {
    static const std::string n = "shift";
    return n;
  }
  int param_dim() const override { return 1; }
  int stat_dim() const override { return 1; }
  const Box& theta_box() const override { return box_; }
  std::vector<dpboot::dp::PrivacyBudget> channel_budgets() const override {
    return {{dpboot::dp::PrivacyBudget::Kind::GDP, 1.0}};
  }
  VectorXd simulate(const VectorXd& theta, Stream& data, Stream& dp) const override {
    (void)dp;
    return vec1(theta[0] + c_ + noise_sd_ * data.normal01());
  }
  VectorXd naive_estimate(const VectorXd& s) const override {
    return vec1(std::clamp(s[0] - c_, box_.lo[0], box_.hi[0]));
  }

  double c() const { return c_; }
  double sd() const { return noise_sd_; }

 private:
  double c_;
  double noise_sd_;
  Box box_;
};

Box box1(double lo, double hi) {
  Box b;
  b.lo = vec1(lo);
  b.hi = vec1(hi);
  return b;
}

// Replays the documented substream convention: statistic draws for bootstrap
// index b at generator value theta.
std::vector<double> replay_draws(const ShiftModel& model, double theta, const SeedBank& bank,
                                 std::vector<std::uint64_t> scope, int B) {
  std::vector<double> out(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    std::vector<std::uint64_t> idx = scope;
    idx.push_back(static_cast<std::uint64_t>(b));
    Stream data = bank.derive("boot/data", idx);
    out[static_cast<std::size_t>(b)] = theta + model.c() + model.sd() * data.normal01();
  }
  return out;
}

Estimator exact_estimator(const ShiftModel& model) {
  return [&model](const VectorXd& s) { return model.naive_estimate(s); };
}

TauFn tau0() {
  return [](const VectorXd& th) { return th[0]; };
}

// tau_hat reads the statistic directly, sigma_hat is constant; no optimizer
// anywhere, so tests exercise only the bootstrap logic.
PivotEstimator plain_pivot(const ShiftModel& model, double sigma) {
  return [&model, sigma](const VectorXd& s, const VectorXd*) {
    return TauSigma{s[0] - model.c(), sigma};
  };
}

}  // namespace

TEST_SUITE("bootstrap") {

TEST_CASE("percentile rank arithmetic matches the definition") {
  CHECK(pb_ci_indices(199, 0.05) == std::pair<int, int>(5, 195));
  CHECK(pb_ci_indices(399, 0.10) == std::pair<int, int>(20, 380));
  CHECK(pb_ci_indices(999, 0.02) == std::pair<int, int>(10, 990));
  CHECK(pb_ci_indices(19, 0.10) == std::pair<int, int>(1, 19));
  CHECK_THROWS_AS(pb_ci_indices(39, 0.04), std::invalid_argument);
  CHECK_THROWS_AS(pb_ci_indices(199, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(pb_ci_indices(199, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(pb_ci_indices(0, 0.5), std::invalid_argument);
}

TEST_CASE("pb_ci matches an independent replay of its draws") {
  ShiftModel model(0.3, 0.8, box1(-10.0, 10.0));
  SeedBank bank(2024);
  std::vector<std::uint64_t> scope{7};
  const int B = 199;
  const double alpha = 0.05;
  VectorXd s = vec1(1.7);
  const double sigma = 0.25;

  std::vector<double> xi;
  IntervalResult res = pb_ci(s, model, exact_estimator(model), tau0(), plain_pivot(model, sigma),
                             B, alpha, bank, scope, &xi);

  const double theta_hat = 1.7 - 0.3;
  std::vector<double> draws = replay_draws(model, theta_hat, bank, scope, B);
  std::vector<double> expected(draws.size());
  for (std::size_t b = 0; b < draws.size(); ++b)
    expected[b] = ((draws[b] - 0.3) - theta_hat) / sigma;
  std::sort(expected.begin(), expected.end());

  const int jlo = static_cast<int>(std::floor((B + 1) * alpha / 2.0 + 1e-9));
  const int jhi = 1 + B - jlo;
  CHECK(jlo == 5);
  CHECK(res.lo_index == jlo);
  CHECK(res.hi_index == jhi);
  CHECK(res.B == B);
  CHECK(res.alpha == alpha);
  CHECK(res.method == "pb");
  CHECK(res.point == doctest::Approx(1.4).epsilon(1e-15));
  CHECK(res.lo == doctest::Approx(1.4 + expected[jlo - 1] * sigma).epsilon(1e-13));
  CHECK(res.hi == doctest::Approx(1.4 + expected[jhi - 1] * sigma).epsilon(1e-13));
  CHECK(res.lo <= res.hi);

  REQUIRE(xi.size() == draws.size());
  for (std::size_t b = 0; b < xi.size(); ++b)
    CHECK(xi[b] == doctest::Approx(expected[b]).epsilon(1e-13));
}

TEST_CASE("degenerate bootstrap collapses every interval to its point") {
  ShiftModel model(0.3, 0.0, box1(-10.0, 10.0));
  SeedBank bank(5);
  std::vector<std::uint64_t> scope{1};
  VectorXd s = vec1(2.1);

  IntervalResult ci = pb_ci(s, model, exact_estimator(model), tau0(), plain_pivot(model, 0.1),
                            199, 0.05, bank, scope);
  CHECK(ci.lo == ci.point);
  CHECK(ci.hi == ci.point);
  CHECK(ci.point == doctest::Approx(1.8).epsilon(1e-15));

  for (BaselineKind kind : {BaselineKind::NaivePercentile, BaselineKind::SimplifiedT,
                            BaselineKind::Ferrando, BaselineKind::EfronBC}) {
    IntervalResult b = baseline_ci(s, model, kind, 199, 0.05, bank, scope, 0);
    INFO(baseline_name(kind));
    CHECK(b.lo == doctest::Approx(1.8).epsilon(1e-12));
    CHECK(b.hi == doctest::Approx(1.8).epsilon(1e-12));
    CHECK(b.point == doctest::Approx(1.8).epsilon(1e-15));
    if (kind == BaselineKind::EfronBC) CHECK(b.bc_clamped);
  }
}

TEST_CASE("test statistic bounds pin the p-value") {
  ShiftModel model(0.0, 0.0, box1(-10.0, 10.0));
  SeedBank bank(9);
  std::vector<std::uint64_t> scope{0};
  VectorXd s = vec1(1.0);
  const int B = 199;

  TestResult at_null = pb_ht(s, model, exact_estimator(model), tau0(), plain_pivot(model, 1.0),
                             NullSpec::point(1.0), B, 0.05, bank, scope);
  CHECK(at_null.statistic == 0.0);
  CHECK(at_null.p_value == 1.0);
  CHECK_FALSE(at_null.reject);

  TestResult far = pb_ht(s, model, exact_estimator(model), tau0(), plain_pivot(model, 1.0),
                         NullSpec::point(5.0), B, 0.05, bank, scope);
  CHECK(far.statistic == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(far.p_value == 1.0 / (B + 1));
  CHECK(far.reject);

  TestResult inside = pb_ht(s, model, exact_estimator(model), tau0(), plain_pivot(model, 1.0),
                            NullSpec::interval(0.5, 2.0), B, 0.05, bank, scope);
  CHECK(inside.statistic == 0.0);
  CHECK(inside.p_value == 1.0);
}

TEST_CASE("nested confidence levels give nested intervals on shared draws") {
  ShiftModel model(0.0, 0.8, box1(-10.0, 10.0));
  SeedBank bank(77);
  std::vector<std::uint64_t> scope{3};
  VectorXd s = vec1(0.4);
  const int B = 399;

  IntervalResult prev;
  bool have_prev = false;
  for (double alpha : {0.02, 0.05, 0.1, 0.2}) {
    IntervalResult cur = pb_ci(s, model, exact_estimator(model), tau0(),
                               plain_pivot(model, 0.1), B, alpha, bank, scope);
    CHECK(cur.lo <= cur.hi);
    if (have_prev) {
      CHECK(cur.lo >= prev.lo);
      CHECK(cur.hi <= prev.hi);
    }
    prev = cur;
    have_prev = true;
  }
}

TEST_CASE("rejection is dual to the symmetric interval from shared draws") {
  ShiftModel model(0.0, 0.8, box1(-10.0, 10.0));
  SeedBank bank(123);
  std::vector<std::uint64_t> scope{11};
  VectorXd s = vec1(0.9);
  const int B = 199;
  const double alpha = 0.05;
  const double sigma = 0.3;

  std::vector<double> tb_first;
  std::vector<double> tb;
  bool have_first = false;
  for (double c : {-1.5, -0.5, 0.0, 0.4, 0.8, 0.9, 1.1, 1.9, 3.0}) {
    TestResult res = pb_ht(s, model, exact_estimator(model), tau0(), plain_pivot(model, sigma),
                           NullSpec::point(c), B, alpha, bank, scope, &tb);
    REQUIRE(tb.size() == static_cast<std::size_t>(B));
    if (!have_first) {
      tb_first = tb;
      have_first = true;
    } else {
      CHECK(tb == tb_first);  // same draws regardless of the null
    }
    const double T = std::fabs(0.9 - c) / sigma;
    CHECK(res.statistic == doctest::Approx(T).epsilon(1e-13));
    const int rank = B + 1 - static_cast<int>(std::floor((B + 1) * alpha + 1e-9));
    const double q = tb_first[static_cast<std::size_t>(rank - 1)];
    CHECK(res.reject == (T > q));
    CHECK(res.reject == (res.p_value <= alpha));
  }
}

TEST_CASE("p-values are near uniform under a point null") {
  ShiftModel model(0.0, 1.0, box1(-10.0, 10.0));
  SeedBank bank(31415);
  const double theta_star = 0.5;
  const int M = 300;
  const int B = 99;

  std::vector<double> pvals;
  pvals.reserve(M);
  for (int m = 0; m < M; ++m) {
    std::vector<std::uint64_t> scope{static_cast<std::uint64_t>(m)};
    Stream data = bank.derive("rep/data", scope);
    Stream dp = bank.derive("rep/dp", scope);
    VectorXd s = model.simulate(vec1(theta_star), data, dp);
    TestResult res = pb_ht(s, model, exact_estimator(model), tau0(), plain_pivot(model, 1.0),
                           NullSpec::point(theta_star), B, 0.05, bank, scope);
    pvals.push_back(res.p_value);
  }

  for (double cut : {0.05, 0.1, 0.2}) {
    int hits = 0;
    for (double p : pvals)
      if (p <= cut) ++hits;
    const double frac = static_cast<double>(hits) / M;
    const double se = std::sqrt(cut * (1.0 - cut) / M);
    INFO("cut ", cut, " frac ", frac);
    CHECK(std::fabs(frac - cut) <= 3.0 * se);
  }
}

TEST_CASE("region nulls minimize over the box") {
  // Two-parameter model, tau(theta) = theta0 + theta1; over the unit box the
  // reachable tau values are [0, 2], so the distance is computable by hand.
  Box box;
  box.lo = VectorXd::Constant(2, -5.0);
  box.hi = VectorXd::Constant(2, 5.0);

  class SumModel : public dpboot::models::Model {
   public:
    explicit SumModel(Box b) : box_(std::move(b)) {}
    const std::string& name() const override {
      static const std::string n = "sum";
      return n;
    }
    int param_dim() const override { return 2; }
    int stat_dim() const override { return 1; }
    const Box& theta_box() const override { return box_; }
    std::vector<dpboot::dp::PrivacyBudget> channel_budgets() const override {
      return {{dpboot::dp::PrivacyBudget::Kind::GDP, 1.0}};
    }
    VectorXd simulate(const VectorXd& theta, Stream& data, Stream& dp) const override {
      (void)dp;
      return vec1(theta[0] + theta[1] + 0.1 * data.normal01());
    }
    VectorXd naive_estimate(const VectorXd& s) const override {
      VectorXd th(2);
      th << s[0] / 2.0, s[0] / 2.0;
      return th;
    }

   private:
    Box box_;
  };
  SumModel model(box);

  SeedBank bank(8);
  std::vector<std::uint64_t> scope{2};
  TauFn tau = [](const VectorXd& th) { return th[0] + th[1]; };
  PivotEstimator pivot = [](const VectorXd& s, const VectorXd*) {
    return TauSigma{s[0], 0.5};
  };
  Estimator est = [&model](const VectorXd& s) { return model.naive_estimate(s); };

  Box null_box;
  null_box.lo = VectorXd::Constant(2, 0.0);
  null_box.hi = VectorXd::Constant(2, 1.0);

  VectorXd s_out = vec1(3.0);
  TestResult outside = pb_ht(s_out, model, est, tau, pivot, NullSpec::make_region(null_box),
                             199, 0.05, bank, scope);
  CHECK(outside.statistic == doctest::Approx((3.0 - 2.0) / 0.5).epsilon(1e-6));

  VectorXd s_in = vec1(1.5);
  TestResult within = pb_ht(s_in, model, est, tau, pivot, NullSpec::make_region(null_box),
                            199, 0.05, bank, scope);
  CHECK(within.statistic <= 1e-6);
  CHECK(within.p_value == 1.0);
}

TEST_CASE("baseline intervals match hand-computed order statistics") {
  ShiftModel model(0.4, 0.8, box1(-10.0, 10.0));
  SeedBank bank(555);
  std::vector<std::uint64_t> scope{6};
  VectorXd s = vec1(1.9);
  const int B = 19;
  const double alpha = 0.1;
  const double theta_hat = 1.5;

  std::vector<double> draws = replay_draws(model, theta_hat, bank, scope, B);
  std::vector<double> theta_b(draws.size());
  for (std::size_t b = 0; b < draws.size(); ++b)
    theta_b[b] = std::clamp(draws[b] - 0.4, -10.0, 10.0);

  const int jlo = 1;   // floor(20 * 0.05)
  const int jhi = 19;  // 1 + 19 - 1
  auto sorted = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
  };

  IntervalResult np = baseline_ci(s, model, BaselineKind::NaivePercentile, B, alpha, bank,
                                  scope, 0);
  std::vector<double> sv = sorted(theta_b);
  CHECK(np.lo_index == jlo);
  CHECK(np.hi_index == jhi);
  CHECK(np.lo == doctest::Approx(sv[jlo - 1]).epsilon(1e-13));
  CHECK(np.hi == doctest::Approx(sv[jhi - 1]).epsilon(1e-13));
  CHECK(np.point == doctest::Approx(theta_hat).epsilon(1e-15));
  CHECK(np.method == "naive_percentile");

  IntervalResult st = baseline_ci(s, model, BaselineKind::SimplifiedT, B, alpha, bank,
                                  scope, 0);
  std::vector<double> refl(theta_b.size());
  for (std::size_t b = 0; b < theta_b.size(); ++b) refl[b] = 2.0 * theta_hat - theta_b[b];
  sv = sorted(refl);
  CHECK(st.lo == doctest::Approx(sv[jlo - 1]).epsilon(1e-13));
  CHECK(st.hi == doctest::Approx(sv[jhi - 1]).epsilon(1e-13));

  IntervalResult fe = baseline_ci(s, model, BaselineKind::Ferrando, B, alpha, bank, scope, 0);
  double mean_b = 0.0;
  for (double x : theta_b) mean_b += x;
  mean_b /= static_cast<double>(theta_b.size());
  std::vector<double> shifted(theta_b.size());
  for (std::size_t b = 0; b < theta_b.size(); ++b)
    shifted[b] = theta_b[b] - (mean_b - theta_hat);
  sv = sorted(shifted);
  CHECK(fe.lo == doctest::Approx(sv[jlo - 1]).epsilon(1e-13));
  CHECK(fe.hi == doctest::Approx(sv[jhi - 1]).epsilon(1e-13));

  IntervalResult bc = baseline_ci(s, model, BaselineKind::EfronBC, B, alpha, bank, scope, 0);
  int below = 0;
  for (double x : theta_b)
    if (x < theta_hat) ++below;
  double frac = static_cast<double>(below) / B;
  bool clamped = false;
  if (frac <= 0.0 || frac >= 1.0) {
    frac = std::clamp(frac, 1.0 / (2.0 * B), 1.0 - 1.0 / (2.0 * B));
    clamped = true;
  }
  const double z0 = dpboot::norm_ppf(frac);
  const double p_lo = dpboot::norm_cdf(2.0 * z0 + dpboot::norm_ppf(alpha / 2.0));
  const double p_hi = dpboot::norm_cdf(2.0 * z0 + dpboot::norm_ppf(1.0 - alpha / 2.0));
  const int klo = std::clamp(static_cast<int>(std::floor((B + 1) * p_lo + 1e-9)), 1, B);
  const int khi =
      std::clamp(B + 1 - static_cast<int>(std::floor((B + 1) * (1.0 - p_hi) + 1e-9)), 1, B);
  sv = sorted(theta_b);
  CHECK(bc.bc_clamped == clamped);
  CHECK(bc.lo_index == klo);
  CHECK(bc.hi_index == khi);
  CHECK(bc.lo == doctest::Approx(sv[klo - 1]).epsilon(1e-13));
  CHECK(bc.hi == doctest::Approx(sv[khi - 1]).epsilon(1e-13));
  CHECK(bc.lo <= bc.hi);
}

TEST_CASE("identical inputs reproduce results and scopes separate them") {
  ShiftModel model(0.0, 0.8, box1(-10.0, 10.0));
  SeedBank bank(99);
  VectorXd s = vec1(0.7);
  std::vector<std::uint64_t> scope_a{4};
  std::vector<std::uint64_t> scope_b{5};

  IntervalResult r1 = pb_ci(s, model, exact_estimator(model), tau0(), plain_pivot(model, 0.2),
                            199, 0.05, bank, scope_a);
  IntervalResult r2 = pb_ci(s, model, exact_estimator(model), tau0(), plain_pivot(model, 0.2),
                            199, 0.05, bank, scope_a);
  CHECK(r1.lo == r2.lo);
  CHECK(r1.hi == r2.hi);

  IntervalResult r3 = pb_ci(s, model, exact_estimator(model), tau0(), plain_pivot(model, 0.2),
                            199, 0.05, bank, scope_b);
  CHECK((r1.lo != r3.lo || r1.hi != r3.hi));

  IntervalResult b1 = baseline_ci(s, model, BaselineKind::NaivePercentile, 99, 0.1, bank,
                                  scope_a, 0);
  IntervalResult b2 = baseline_ci(s, model, BaselineKind::NaivePercentile, 99, 0.1, bank,
                                  scope_a, 0);
  CHECK(b1.lo == b2.lo);
  CHECK(b1.hi == b2.hi);
}

TEST_CASE("preconditions and failures throw") {
  ShiftModel model(0.0, 0.5, box1(-10.0, 10.0));
  SeedBank bank(1);
  std::vector<std::uint64_t> scope{0};
  VectorXd s = vec1(0.2);
  auto est = exact_estimator(model);
  auto pivot = plain_pivot(model, 1.0);

  CHECK_THROWS_AS(pb_ci(s, model, est, tau0(), pivot, 39, 0.04, bank, scope),
                  std::invalid_argument);
  CHECK_THROWS_AS(pb_ht(s, model, est, tau0(), pivot, NullSpec::point(0.0), 9, 0.05, bank,
                        scope),
                  std::invalid_argument);
  CHECK_THROWS_AS(baseline_ci(s, model, BaselineKind::NaivePercentile, 9, 0.1, bank, scope, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(baseline_ci(s, model, BaselineKind::NaivePercentile, 99, 0.1, bank, scope, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(NullSpec::interval(2.0, 1.0), std::invalid_argument);

  Estimator failing = [](const VectorXd&) -> VectorXd {
    throw std::runtime_error("estimator failure");
  };
  CHECK_THROWS_AS(pb_ci(s, model, failing, tau0(), pivot, 199, 0.05, bank, scope),
                  std::runtime_error);

  PivotEstimator bad_sigma = [](const VectorXd& sv, const VectorXd*) {
    return TauSigma{sv[0], 0.0};
  };
  CHECK_THROWS_AS(pb_ci(s, model, est, tau0(), bad_sigma, 199, 0.05, bank, scope),
                  std::runtime_error);

  Box wrong_dim;
  wrong_dim.lo = VectorXd::Constant(3, 0.0);
  wrong_dim.hi = VectorXd::Constant(3, 1.0);
  CHECK_THROWS_AS(pb_ht(s, model, est, tau0(), pivot, NullSpec::make_region(wrong_dim), 199,
                        0.05, bank, scope),
                  std::invalid_argument);
}

}  // TEST_SUITE
