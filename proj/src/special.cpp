#include "dpboot/special.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dpboot {

double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

// Wichura's PPND16 rational approximations.
double norm_ppf(double p) {
  if (!(p > 0.0) || !(p < 1.0))
    throw std::invalid_argument("norm_ppf: p must lie in (0, 1)");
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
              6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
            1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
          1.3314166789178437745e+2) * r + 3.3871328727963666080e+0);
    const double den =
        (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
              3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
            5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
          4.2313330701600911252e+1) * r + 1.0);
    return q * num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
            3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
          4.63033784615654529590e+0) * r + 1.42343711074968357734e+0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
          2.05319162663775882187e+0) * r + 1.0);
    val = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
          5.46378491116411436990e+0) * r + 6.65790464350110377720e+0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    val = num / den;
  }
  return (q < 0.0) ? -val : val;
}

double lbeta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) <= kEps) break;
  }
  return h;
}

double ibeta_pre(double a, double b, double lb, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lnpre = a * std::log(x) + b * std::log1p(-x) - lb;
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(lnpre) * betacf(a, b, x) / a;
  return 1.0 - std::exp(lnpre) * betacf(b, a, 1.0 - x) / b;
}

double beta_pdf_pre(double a, double b, double lb, double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lb);
}

// Safeguarded Newton inversion of I_x(a, b) = u on the bracket (lo, hi).
// Terminates on the CDF residual so the result is accurate even where the
// density is nearly singular.
double invert_ibeta(double a, double b, double lb, double u, double x0, double lo,
                    double hi) {
  double x = x0;
  if (!(x >= lo && x < hi)) x = 0.5 * (lo + hi);
  double f = ibeta_pre(a, b, lb, x) - u;
  for (int it = 0; it < 200; ++it) {
    if (std::fabs(f) <= 1e-13) break;
    if (f > 0.0)
      hi = x;
    else
      lo = x;
    if (hi - lo <= 1e-16 * std::max(x, 1e-30)) break;
    const double pdf = beta_pdf_pre(a, b, lb, x);
    double xn;
    if (pdf > 0.0 && std::isfinite(pdf)) {
      xn = x - f / pdf;
      if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    } else {
      xn = 0.5 * (lo + hi);
    }
    if (xn == x) {
      xn = 0.5 * (lo + hi);
      if (xn == x) break;
    }
    x = xn;
    f = ibeta_pre(a, b, lb, x) - u;
  }
  return x;
}

}  // namespace

double ibeta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("ibeta: a, b must be positive");
  if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
  return ibeta_pre(a, b, lbeta(a, b), x);
}

double beta_pdf(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("beta_pdf: a, b must be positive");
  return beta_pdf_pre(a, b, lbeta(a, b), x);
}

double beta_quantile(double a, double b, double u) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("beta_quantile: a, b must be positive");
  if (!(u > 0.0) || !(u < 1.0))
    throw std::invalid_argument("beta_quantile: u must lie in (0, 1)");
  if (a == 1.0 && b == 1.0) return u;
  const double lb = lbeta(a, b);
  // Tail-aware starting point.
  double x0;
  if (u < 0.05) {
    x0 = std::exp((std::log(u * a) + lb) / a);
  } else if (u > 0.95) {
    x0 = 1.0 - std::exp((std::log((1.0 - u) * b) + lb) / b);
  } else {
    x0 = a / (a + b);
  }
  if (!(x0 > 0.0 && x0 < 1.0)) x0 = 0.5;
  return invert_ibeta(a, b, lb, u, x0, 0.0, 1.0);
}

void beta_quantile_sorted(double a, double b, std::span<const double> u_sorted,
                          std::span<double> out) {
  if (out.size() != u_sorted.size())
    throw std::invalid_argument("beta_quantile_sorted: size mismatch");
  if (u_sorted.empty()) return;
  if (a == 1.0 && b == 1.0) {
    for (std::size_t i = 0; i < u_sorted.size(); ++i) out[i] = u_sorted[i];
    return;
  }
  const double lb = lbeta(a, b);
  double x = beta_quantile(a, b, u_sorted[0]);
  out[0] = x;
  for (std::size_t i = 1; i < u_sorted.size(); ++i) {
    const double u = u_sorted[i];
    if (!(u > 0.0) || !(u < 1.0))
      throw std::invalid_argument("beta_quantile_sorted: u must lie in (0, 1)");
    // The previous quantile is a lower bound; gaps are small, so Newton from
    // there settles in a step or two.
    x = invert_ibeta(a, b, lb, u, x, x, 1.0);
    out[i] = x;
  }
}

}  // namespace dpboot
