#include "dpboot/estimation.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dpboot::est {

namespace {

constexpr double kRidgeRel = 1e-10;

MatrixXd solve_spd(const Eigen::LLT<MatrixXd>& llt, const MatrixXd& rhs) {
  return llt.solve(rhs);
}

double default_ridge(const MatrixXd& S) {
  return kRidgeRel * S.trace() / static_cast<double>(S.rows());
}

double quad_form_adi(const VectorXd& d, const MatrixXd& S, double ridge) {
  MatrixXd W = S;
  W.diagonal().array() += ridge;
  Eigen::LLT<MatrixXd> llt(W);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  return d.dot(llt.solve(d));
}

}  // namespace

SynthEnsemble::SynthEnsemble(const models::Model& model, const SeedBank& bank,
                             std::span<const std::uint64_t> scope, int R)
    : model_(&model) {
  if (R < 1) throw std::invalid_argument("SynthEnsemble: R must be >= 1");
  keys_.reserve(static_cast<std::size_t>(R));
  std::vector<std::uint64_t> idx(scope.begin(), scope.end());
  idx.push_back(0);
  for (int r = 0; r < R; ++r) {
    idx.back() = static_cast<std::uint64_t>(r);
    Stream data = bank.derive("synth/data", idx);
    Stream dp = bank.derive("synth/dp", idx);
    keys_.emplace_back(data.key(), dp.key());
  }
}

MatrixXd SynthEnsemble::evaluate(const VectorXd& theta) const {
  const int p = stat_dim();
  MatrixXd rows(R(), p);
  for (int r = 0; r < R(); ++r) {
    Stream data(keys_[static_cast<std::size_t>(r)].first);
    Stream dp(keys_[static_cast<std::size_t>(r)].second);
    rows.row(r) = model_->simulate(theta, data, dp).transpose();
  }
  return rows;
}

std::pair<Stream, Stream> SynthEnsemble::replica_streams(int r) const {
  if (r < 0 || r >= R()) throw std::out_of_range("SynthEnsemble: replica index");
  const auto& k = keys_[static_cast<std::size_t>(r)];
  return {Stream(k.first), Stream(k.second)};
}

Moments row_moments(const MatrixXd& rows) {
  if (rows.rows() < 2) throw std::invalid_argument("row_moments: need >= 2 rows");
  Moments out;
  out.mean = rows.colwise().mean().transpose();
  MatrixXd centered = rows.rowwise() - out.mean.transpose();
  out.cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  return out;
}

Moments ensemble_moments(const SynthEnsemble& E, const VectorXd& theta) {
  return row_moments(E.evaluate(theta));
}

double ind_objective(const VectorXd& s, const SynthEnsemble& E, const VectorXd& theta,
                     const MatrixXd& Omega) {
  if (Omega.rows() != E.stat_dim() || Omega.cols() != E.stat_dim())
    throw std::invalid_argument("ind_objective: Omega has wrong shape");
  Eigen::LLT<MatrixXd> llt(Omega);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("ind_objective: Omega is not positive definite");
  VectorXd m = E.evaluate(theta).colwise().mean().transpose();
  VectorXd d = s - m;
  return d.dot(Omega * d);
}

double adi_objective(const VectorXd& s, const SynthEnsemble& E, const VectorXd& theta,
                     double ridge) {
  Moments mo = ensemble_moments(E, theta);
  VectorXd d = s - mo.mean;
  double r = ridge >= 0.0 ? ridge : default_ridge(mo.cov);
  double v = quad_form_adi(d, mo.cov, r);
  if (!std::isfinite(v)) throw std::runtime_error("adi_objective: weight matrix not factorizable");
  return v;
}

EstimateResult estimate(const VectorXd& s, const models::Model& model,
                        const SynthEnsemble& E, const EstimateOptions& opt) {
  if (&E.model() != &model)
    throw std::invalid_argument("estimate: ensemble was built for a different model");
  if (s.size() != model.stat_dim()) throw std::invalid_argument("estimate: s has wrong size");
  if (opt.mode == WeightMode::ADI && E.R() < 2)
    throw std::invalid_argument("estimate: ADI mode needs R >= 2");

  const Box& box = model.theta_box();
  const int q = model.param_dim();

  MatrixXd Omega;
  if (opt.mode == WeightMode::IND) {
    Omega = opt.omega.size() == 0 ? MatrixXd::Identity(E.stat_dim(), E.stat_dim()) : opt.omega;
    if (Omega.rows() != E.stat_dim() || Omega.cols() != E.stat_dim())
      throw std::invalid_argument("estimate: omega has wrong shape");
    Eigen::LLT<MatrixXd> llt(Omega);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("estimate: omega is not positive definite");
  }

  Objective obj = [&](const VectorXd& th) -> double {
    MatrixXd rows = E.evaluate(th);
    VectorXd m = rows.colwise().mean().transpose();
    VectorXd d = s - m;
    if (opt.mode == WeightMode::IND) return d.dot(Omega * d);
    MatrixXd centered = rows.rowwise() - m.transpose();
    MatrixXd S = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
    double ridge = opt.ridge >= 0.0 ? opt.ridge : default_ridge(S);
    return quad_form_adi(d, S, ridge);
  };

  std::vector<VectorXd> starts;
  auto push_start = [&](VectorXd x) {
    for (int i = 0; i < q; ++i) x[i] = std::clamp(x[i], box.lo[i], box.hi[i]);
    for (const VectorXd& prev : starts)
      if ((prev - x).cwiseAbs().maxCoeff() <= 1e-12) return;
    starts.push_back(std::move(x));
  };
  if (opt.multi_start) {
    VectorXd naive = model.naive_estimate(s);
    VectorXd width = box.hi - box.lo;
    push_start(naive);
    push_start(box.center());
    push_start(naive + 0.1 * width);
    push_start(naive - 0.1 * width);
    if (opt.start.size() == q) push_start(opt.start);
  } else {
    push_start(opt.start.size() == q ? opt.start : model.naive_estimate(s));
  }

  EstimateResult best;
  best.objective_value = std::numeric_limits<double>::infinity();
  std::string failures;
  int total_evals = 0;
  for (const VectorXd& x0 : starts) {
    MinimizeResult run = minimize_box(obj, box, x0, opt.optimizer);
    total_evals += run.evaluations;
    if (!run.converged) {
      failures += (failures.empty() ? "" : "; ") + run.message;
    }
    bool adopt;
    if (best.theta_hat.size() == 0) {
      adopt = true;
    } else if (run.converged != best.converged) {
      adopt = run.converged;
    } else {
      adopt = run.f < best.objective_value;
    }
    if (adopt) {
      best.theta_hat = run.x;
      best.objective_value = run.f;
      best.converged = run.converged;
      best.message = run.message;
    }
  }
  best.evaluations = total_evals;
  best.starts_tried = static_cast<int>(starts.size());
  if (!best.converged && opt.require_convergence)
    throw std::runtime_error("estimate: no start converged (" + failures + ")");

  best.at_boundary.assign(static_cast<std::size_t>(q), false);
  for (int i = 0; i < q; ++i) {
    double w = box.hi[i] - box.lo[i];
    double tol = 1e-9 * std::max(1.0, w);
    best.at_boundary[static_cast<std::size_t>(i)] =
        best.theta_hat[i] - box.lo[i] <= tol || box.hi[i] - best.theta_hat[i] <= tol;
  }
  return best;
}

double approx_pivot_sd(const VectorXd& theta_hat, const SynthEnsemble& E, double delta,
                       int target_index, PivotInfo* info) {
  const int p = E.stat_dim();
  const int q = static_cast<int>(theta_hat.size());
  if (E.R() < q + 1) throw std::invalid_argument("approx_pivot_sd: need R >= param_dim + 1");
  if (target_index < 0 || target_index >= q)
    throw std::invalid_argument("approx_pivot_sd: target index out of range");
  if (!(delta > 0.0)) throw std::invalid_argument("approx_pivot_sd: delta must be > 0");

  MatrixXd rows = E.evaluate(theta_hat);
  Moments mo = row_moments(rows);

  MatrixXd J(p, q);
  for (int i = 0; i < q; ++i) {
    VectorXd th = theta_hat;
    th[i] += delta;
    VectorXd m_i = E.evaluate(th).colwise().mean().transpose();
    J.col(i) = (m_i - mo.mean) / delta;
  }

  Eigen::LLT<MatrixXd> cov_llt(mo.cov);
  if (cov_llt.info() != Eigen::Success)
    throw std::runtime_error("approx_pivot_sd: statistic covariance is singular");
  MatrixXd M = J.transpose() * solve_spd(cov_llt, J);
  Eigen::LLT<MatrixXd> m_llt(M);
  if (m_llt.info() != Eigen::Success)
    throw std::runtime_error("approx_pivot_sd: Jacobian information matrix is singular");
  MatrixXd coef_cov = m_llt.solve(MatrixXd::Identity(q, q));

  if (info) {
    info->stat_cov = mo.cov;
    info->jacobian = J;
    info->coef_cov = coef_cov;
  }
  double v = coef_cov(target_index, target_index);
  if (!(v > 0.0) || !std::isfinite(v))
    throw std::runtime_error("approx_pivot_sd: nonpositive variance estimate");
  return std::sqrt(v);
}

}  // namespace dpboot::est
