#pragma once

#include <cstddef>
#include <span>

namespace dpboot {

// Standard normal CDF.
double norm_cdf(double x);

// Standard normal quantile, accurate to ~1e-15 for p in (0, 1).
double norm_ppf(double p);

// log Beta(a, b).
double lbeta(double a, double b);

// Regularized incomplete beta I_x(a, b) for x in [0, 1], a, b > 0.
double ibeta(double a, double b, double x);

// Density of Beta(a, b) at x.
double beta_pdf(double a, double b, double x);

// Quantile of Beta(a, b) at u in (0, 1). Safeguarded Newton, ~1e-12 accurate.
double beta_quantile(double a, double b, double u);

// Quantile of Beta(a, b) evaluated at an ascending vector of u values.
// Exploits the ordering to warm-start each inversion; out.size() == u.size().
void beta_quantile_sorted(double a, double b, std::span<const double> u_sorted,
                          std::span<double> out);

}  // namespace dpboot
