#include "dpboot/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace dpboot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double guarded(double v) { return std::isnan(v) ? kInf : v; }

struct Evaluator {
  const Objective& f;
  int count = 0;
  double operator()(const VectorXd& x) {
    ++count;
    return guarded(f(x));
  }
};

// Differences scaled by box width; one-sided against active bounds. The
// forward variant reuses fx and costs one evaluation per coordinate, which
// matters when each evaluation is a full synthetic ensemble pass.
VectorXd fd_gradient(Evaluator& ev, const Box& box, const VectorXd& x, double fx,
                     double rel_step, bool forward) {
  const Eigen::Index n = x.size();
  VectorXd g(n);
  VectorXd xt = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = rel_step * box.width(i);
    const double xi = x[i];
    if (forward) {
      if (xi + h > box.hi[i]) {
        xt[i] = xi - h;
        g[i] = (fx - ev(xt)) / h;
      } else {
        xt[i] = xi + h;
        g[i] = (ev(xt) - fx) / h;
      }
    } else if (xi + h > box.hi[i]) {
      xt[i] = xi - h;
      g[i] = (fx - ev(xt)) / h;
    } else if (xi - h < box.lo[i]) {
      xt[i] = xi + h;
      g[i] = (ev(xt) - fx) / h;
    } else {
      xt[i] = xi + h;
      const double fp = ev(xt);
      xt[i] = xi - h;
      const double fm = ev(xt);
      g[i] = (fp - fm) / (2.0 * h);
    }
    xt[i] = xi;
  }
  return g;
}

// Zero gradient components that push against an active bound.
VectorXd project_gradient(const Box& box, const VectorXd& x, const VectorXd& g) {
  VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double eps = 1e-12 * box.width(i);
    if ((x[i] <= box.lo[i] + eps && g[i] > 0.0) ||
        (x[i] >= box.hi[i] - eps && g[i] < 0.0))
      pg[i] = 0.0;
  }
  return pg;
}

MinimizeResult nelder_mead(Evaluator& ev, const Box& box, const VectorXd& x0,
                           double f0, const MinimizeOptions& opt) {
  const Eigen::Index n = x0.size();
  const int m = static_cast<int>(n) + 1;
  std::vector<VectorXd> pts(m, x0);
  std::vector<double> fs(m);
  fs[0] = f0;
  for (int i = 1; i < m; ++i) {
    VectorXd p = x0;
    const Eigen::Index k = i - 1;
    double step = 0.05 * box.width(k);
    if (p[k] + step > box.hi[k]) step = -step;
    p[k] = std::clamp(p[k] + step, box.lo[k], box.hi[k]);
    pts[i] = p;
    fs[i] = ev(p);
  }
  auto order = [&] {
    std::vector<int> idx(m);
    for (int i = 0; i < m; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    std::vector<VectorXd> p2(m);
    std::vector<double> f2(m);
    for (int i = 0; i < m; ++i) {
      p2[i] = pts[idx[i]];
      f2[i] = fs[idx[i]];
    }
    pts.swap(p2);
    fs.swap(f2);
  };
  order();
  bool collapsed = false;
  for (int it = 0; it < opt.nm_max_iters; ++it) {
    if (std::fabs(fs[m - 1] - fs[0]) <=
        1e-12 * (std::fabs(fs[0]) + std::fabs(fs[m - 1])) + 1e-300) {
      collapsed = true;
      break;
    }
    VectorXd centroid = VectorXd::Zero(n);
    for (int i = 0; i < m - 1; ++i) centroid += pts[i];
    centroid /= static_cast<double>(m - 1);
    auto propose = [&](double coef) {
      return box.clip(centroid + coef * (centroid - pts[m - 1]));
    };
    VectorXd xr = propose(1.0);
    const double fr = ev(xr);
    if (fr < fs[0]) {
      VectorXd xe = propose(2.0);
      const double fe = ev(xe);
      if (fe < fr) {
        pts[m - 1] = xe;
        fs[m - 1] = fe;
      } else {
        pts[m - 1] = xr;
        fs[m - 1] = fr;
      }
    } else if (fr < fs[m - 2]) {
      pts[m - 1] = xr;
      fs[m - 1] = fr;
    } else {
      const bool outside = fr < fs[m - 1];
      VectorXd xc = outside ? propose(0.5)
                            : box.clip(centroid - 0.5 * (centroid - pts[m - 1]));
      const double fc = ev(xc);
      if (fc < std::min(fr, fs[m - 1])) {
        pts[m - 1] = xc;
        fs[m - 1] = fc;
      } else {
        for (int i = 1; i < m; ++i) {
          pts[i] = box.clip(pts[0] + 0.5 * (pts[i] - pts[0]));
          fs[i] = ev(pts[i]);
        }
      }
    }
    order();
  }
  MinimizeResult res;
  res.x = pts[0];
  res.f = fs[0];
  res.converged = collapsed;
  res.used_fallback = true;
  res.message = "nelder-mead";
  return res;
}

MinimizeResult minimize_impl(const Objective& f, const ValueGradFn* fused, const Box& box,
                             const VectorXd& x0, const MinimizeOptions& opt,
                             const GradientFn* analytic_grad) {
  if (x0.size() != box.dim())
    throw std::invalid_argument("minimize_box: start point dimension mismatch");
  Evaluator ev{f};
  const Eigen::Index n = x0.size();
  VectorXd x = box.clip(x0);
  double fx = ev(x);
  if (!std::isfinite(fx))
    throw std::runtime_error("minimize_box: objective not finite at start point");

  auto grad_at = [&](const VectorXd& p, double fp) -> VectorXd {
    if (fused) {
      VectorXd gg(n);
      ++ev.count;
      (void)(*fused)(p, gg);
      return gg;
    }
    if (analytic_grad) return (*analytic_grad)(p);
    return fd_gradient(ev, box, p, fp, opt.fd_rel_step, opt.fd_forward);
  };

  MatrixXd H = MatrixXd::Identity(n, n);
  VectorXd g = grad_at(x, fx);
  int small_improvements = 0;
  bool converged = false;
  bool stalled = false;
  int it = 0;
  std::string message = "ok";

  auto grad_below = [&](const VectorXd& pg, double tol, double fp) {
    if (tol <= 0.0) return false;
    const double f_mag = std::max(1.0, std::fabs(fp));
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::fabs(pg[i]) > tol * f_mag / box.width(i)) return false;
    return true;
  };

  for (; it < opt.max_iters; ++it) {
    VectorXd pg = project_gradient(box, x, g);
    if (pg.lpNorm<Eigen::Infinity>() == 0.0) {
      converged = true;
      message = "projected gradient vanished";
      break;
    }
    if (grad_below(pg, opt.grad_tol, fx)) {
      converged = true;
      message = "projected gradient below tolerance";
      break;
    }
    VectorXd d = -(H * pg);
    for (Eigen::Index i = 0; i < n; ++i)
      if (pg[i] == 0.0) d[i] = 0.0;
    if (d.dot(pg) >= 0.0) {
      H.setIdentity();
      d = -pg;
    }

    // Backtracking Armijo search along the projected path.
    double t = 1.0;
    VectorXd x_new;
    double f_new = kInf;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h) {
      x_new = box.clip(x + t * d);
      const bool moved = (x_new.array() != x.array()).any();
      if (!moved) break;  // halving further cannot move the point again
      f_new = ev(x_new);
      const double pred = std::min(g.dot(x_new - x), 0.0);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * pred) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!stalled) {
        stalled = true;
        H.setIdentity();
        continue;
      }
      // No direction makes progress at line-search resolution; call it
      // converged when the projected gradient is negligible at the scale of
      // the objective, otherwise report the stall for the fallback.
      if (grad_below(pg, opt.stall_grad_tol, fx)) {
        converged = true;
        message = "stalled with negligible projected gradient";
      } else {
        message = "line search stalled";
      }
      break;
    }
    stalled = false;

    const VectorXd s = x_new - x;
    const double df = fx - f_new;
    const double f_scale = std::max({std::fabs(fx), std::fabs(f_new), 1e-300});
    double max_rel_step = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      max_rel_step = std::max(max_rel_step, std::fabs(s[i]) / box.width(i));

    VectorXd g_new = grad_at(x_new, f_new);
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      // BFGS inverse update.
      const VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
           (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }

    x = x_new;
    fx = f_new;
    g = g_new;

    if (df <= opt.f_rel_tol * f_scale) {
      if (++small_improvements >= 2) {
        converged = true;
        message = "objective change below tolerance";
        break;
      }
    } else {
      small_improvements = 0;
    }
    if (max_rel_step <= opt.x_rel_tol) {
      converged = true;
      message = "step below tolerance";
      break;
    }
  }
  if (it >= opt.max_iters) message = "iteration limit";

  MinimizeResult res;
  res.x = x;
  res.f = fx;
  res.converged = converged;
  res.iterations = it;
  res.grad_inf_norm = project_gradient(box, x, g).lpNorm<Eigen::Infinity>();
  res.message = message;

  if (!converged && opt.allow_nelder_mead) {
    MinimizeResult nm = nelder_mead(ev, box, x, fx, opt);
    if (nm.f < res.f) {
      nm.evaluations = ev.count;
      nm.iterations = it;
      nm.grad_inf_norm = res.grad_inf_norm;
      nm.message = res.message + "; refined by nelder-mead";
      res = nm;
    }
  }
  res.evaluations = ev.count;
  return res;
}

}  // namespace

MinimizeResult minimize_box(const Objective& f, const Box& box, const VectorXd& x0,
                            const MinimizeOptions& opt, const GradientFn* analytic_grad) {
  return minimize_impl(f, nullptr, box, x0, opt, analytic_grad);
}

MinimizeResult minimize_box_fused(const Objective& f, const ValueGradFn& fg, const Box& box,
                                  const VectorXd& x0, const MinimizeOptions& opt) {
  return minimize_impl(f, &fg, box, x0, opt, nullptr);
}

}  // namespace dpboot
