#include "dpboot/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <utility>

#include "dpboot/bootstrap.hpp"
#include "dpboot/dp.hpp"
#include "dpboot/estimation.hpp"
#include "dpboot/models.hpp"
#include "dpboot/seedbank.hpp"
#include "json.hpp"

namespace dpboot::exp {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::ordered_json;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_short(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' expects an unsigned integer, got '" +
                                v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_double(key, item));
  if (out.empty())
    throw std::invalid_argument("config: key '" + key + "' expects a nonempty list");
  return out;
}

const std::vector<std::string> kCiMethods = {"adi", "naive_percentile", "simplified_t",
                                             "ferrando", "efron_bc"};

void validate_config(const StudyConfig& cfg) {
  if (cfg.replicates < 1) throw std::invalid_argument("config: replicates must be >= 1");
  if (cfg.B < 1) throw std::invalid_argument("config: B must be >= 1");
  if (cfg.R < 1) throw std::invalid_argument("config: R must be >= 1");
  if (cfg.n < 2) throw std::invalid_argument("config: n must be >= 2");
  if (!(cfg.alpha > 0.0) || !(cfg.alpha < 1.0))
    throw std::invalid_argument("config: alpha must lie in (0,1)");
  if (cfg.methods.empty()) throw std::invalid_argument("config: methods must be nonempty");

  const bool ci_study = cfg.study == "locscale_ci" || cfg.study == "logistic_ci" ||
                        cfg.study == "toy_oracle";
  for (const std::string& m : cfg.methods) {
    if (ci_study) {
      if (std::find(kCiMethods.begin(), kCiMethods.end(), m) == kCiMethods.end())
        throw std::invalid_argument("config: unknown method '" + m + "' for " + cfg.study);
    } else if (cfg.study == "linreg_ht") {
      if (m != "adi_pivot")
        throw std::invalid_argument("config: unknown method '" + m + "' for linreg_ht");
    } else {
      throw std::invalid_argument("config: unknown study '" + cfg.study + "'");
    }
  }
  if (cfg.study == "linreg_ht" && cfg.beta1_grid.empty())
    throw std::invalid_argument("config: linreg_ht requires a nonempty beta1_grid");
}

}  // namespace

StudyConfig default_config(const std::string& study) {
  StudyConfig c;
  c.study = study;
  c.master_seed = 1;
  c.workers = 0;
  if (study == "locscale_ci") {
    c.methods = kCiMethods;
    c.replicates = 300;
    c.R = 50;
    c.B = 200;
    c.alpha = 0.05;
    c.n = 100;
    c.eps = 1.0;
    c.clamp_lo = 0.0;
    c.clamp_hi = 3.0;
    c.mu_star = 1.0;
    c.sigma_star = 1.0;
  } else if (study == "linreg_ht") {
    c.methods = {"adi_pivot"};
    c.replicates = 200;
    c.R = 50;
    c.B = 200;
    c.alpha = 0.05;
    c.n = 200;
    c.mu = 1.0;
    c.delta = 2.0;
    c.beta0_star = 0.0;
    c.mux_star = 0.0;
    c.sigx_star = 1.0;
    c.sige_star = 1.0;
    c.beta1_grid = {0.0, 0.25, 0.5, 1.0};
    c.pivot_delta = 1e-3;
  } else if (study == "logistic_ci") {
    c.methods = {"adi", "naive_percentile"};
    c.replicates = 200;
    c.R = 200;
    c.B = 200;
    c.alpha = 0.10;
    c.n = 100;
    c.eps = 10.0;
    c.beta0_star = 0.5;
    c.beta1_star = 2.0;
    c.a_star = 0.5;
    c.b_star = 0.5;
    c.boot_max_iters = 30;
  } else if (study == "toy_oracle") {
    c.methods = {"adi", "naive_percentile"};
    c.replicates = 6;
    c.R = 10;
    c.B = 19;
    c.alpha = 0.10;
    c.n = 50;
    c.eps = 1.0;
    c.clamp_lo = 0.0;
    c.clamp_hi = 3.0;
    c.mu_star = 1.0;
    c.sigma_star = 1.0;
  } else {
    throw std::invalid_argument("config: unknown study '" + study + "'");
  }
  return c;
}

void apply_override(StudyConfig& cfg, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "study") {
    if (v != cfg.study)
      throw std::invalid_argument("config: the study key selects defaults and cannot be "
                                  "overridden afterwards");
  } else if (key == "methods") {
    cfg.methods = split_list(v);
  } else if (key == "replicates") {
    cfg.replicates = parse_int(key, v);
  } else if (key == "R") {
    cfg.R = parse_int(key, v);
  } else if (key == "B") {
    cfg.B = parse_int(key, v);
  } else if (key == "alpha") {
    cfg.alpha = parse_double(key, v);
  } else if (key == "master_seed") {
    cfg.master_seed = parse_u64(key, v);
  } else if (key == "workers") {
    cfg.workers = parse_int(key, v);
  } else if (key == "out_csv") {
    cfg.out_csv = v;
  } else if (key == "out_json") {
    cfg.out_json = v;
  } else if (key == "n") {
    cfg.n = parse_int(key, v);
  } else if (key == "eps") {
    cfg.eps = parse_double(key, v);
  } else if (key == "mu") {
    cfg.mu = parse_double(key, v);
  } else if (key == "clamp_lo") {
    cfg.clamp_lo = parse_double(key, v);
  } else if (key == "clamp_hi") {
    cfg.clamp_hi = parse_double(key, v);
  } else if (key == "delta") {
    cfg.delta = parse_double(key, v);
  } else if (key == "mu_star") {
    cfg.mu_star = parse_double(key, v);
  } else if (key == "sigma_star") {
    cfg.sigma_star = parse_double(key, v);
  } else if (key == "beta0_star") {
    cfg.beta0_star = parse_double(key, v);
  } else if (key == "beta1_star") {
    cfg.beta1_star = parse_double(key, v);
  } else if (key == "mux_star") {
    cfg.mux_star = parse_double(key, v);
  } else if (key == "sigx_star") {
    cfg.sigx_star = parse_double(key, v);
  } else if (key == "sige_star") {
    cfg.sige_star = parse_double(key, v);
  } else if (key == "a_star") {
    cfg.a_star = parse_double(key, v);
  } else if (key == "b_star") {
    cfg.b_star = parse_double(key, v);
  } else if (key == "beta1_grid") {
    cfg.beta1_grid = parse_double_list(key, v);
  } else if (key == "pivot_delta") {
    cfg.pivot_delta = parse_double(key, v);
  } else if (key == "boot_max_iters") {
    cfg.boot_max_iters = parse_int(key, v);
  } else if (key == "toy_fail_replicate") {
    cfg.toy_fail_replicate = parse_int(key, v);
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

StudyConfig parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value'");
    pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  std::string study;
  for (const auto& [k, v] : pairs)
    if (k == "study") study = v;
  if (study.empty()) throw std::invalid_argument("config: missing required key 'study'");

  StudyConfig cfg = default_config(study);
  for (const auto& [k, v] : pairs) apply_override(cfg, k, v);
  return cfg;
}

int resolve_workers(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("DPBOOT_WORKERS")) {
    const std::string v(env);
    if (!v.empty()) {
      const int w = parse_int("DPBOOT_WORKERS", v);
      if (w < 1) throw std::invalid_argument("DPBOOT_WORKERS must be >= 1");
      return w;
    }
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace {

// ---------------------------------------------------------------------------
// Rows and aggregation.
// ---------------------------------------------------------------------------

struct Row {
  std::string method;
  int replicate_id = 0;
  std::vector<double> estimate;
  bool has_ci = false;
  double ci_lo = 0.0, ci_hi = 0.0, width = 0.0;
  int covered = 0;
  bool has_test = false;
  double p_value = 0.0;
  int reject = 0;
  double runtime_ms = 0.0;
  int failed = 0;
  int boundary_hit = 0;
};

std::string csv_header(int param_dim) {
  std::string h = "study,method,replicate_id";
  for (int j = 0; j < param_dim; ++j) h += ",estimate_" + std::to_string(j);
  h += ",ci_lo,ci_hi,covered,width,p_value,reject,runtime_ms,failed,boundary_hit";
  return h;
}

void append_csv_row(std::string& out, const std::string& study, const Row& r, int param_dim) {
  out += study;
  out += ',';
  out += r.method;
  out += ',';
  out += std::to_string(r.replicate_id);
  for (int j = 0; j < param_dim; ++j) {
    out += ',';
    if (j < static_cast<int>(r.estimate.size())) out += fmt17(r.estimate[j]);
  }
  auto num = [&out](bool present, double x) {
    out += ',';
    if (present) out += fmt17(x);
  };
  auto flag = [&out](bool present, int x) {
    out += ',';
    if (present) out += std::to_string(x);
  };
  num(r.has_ci, r.ci_lo);
  num(r.has_ci, r.ci_hi);
  flag(r.has_ci, r.covered);
  num(r.has_ci, r.width);
  num(r.has_test, r.p_value);
  flag(r.has_test, r.reject);
  out += ',';
  out += fmt17(r.runtime_ms);
  out += ',';
  out += std::to_string(r.failed);
  out += ',';
  out += std::to_string(r.boundary_hit);
  out += '\n';
}

// ---------------------------------------------------------------------------
// ADI fit cache: one strict fit of the observed statistic plus warm-started
// refits of bootstrap draws, memoized by the statistic's bit pattern so a
// second interval over the same draws costs nothing.
// ---------------------------------------------------------------------------

std::uint64_t bits_hash(const VectorXd& v) {
  std::uint64_t h = 1469598103934665603ull;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t w;
    static_assert(sizeof w == sizeof(double));
    std::memcpy(&w, &v[i], sizeof w);
    for (int b = 0; b < 8; ++b) {
      h ^= (w >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

class AdiFitCache {
 public:
  AdiFitCache(const models::Model& model, const est::SynthEnsemble& E,
              est::EstimateOptions main_opt, est::EstimateOptions refit_opt)
      : model_(model), E_(E), main_opt_(std::move(main_opt)), refit_opt_(std::move(refit_opt)) {}

  const est::EstimateResult& main_fit(const VectorXd& s) {
    if (!have_main_) {
      main_ = est::estimate(s, model_, E_, main_opt_);
      main_s_ = s;
      have_main_ = true;
    }
    return main_;
  }

  VectorXd refit(const VectorXd& s, const VectorXd* warm) {
    if (have_main_ && s.size() == main_s_.size() && (s.array() == main_s_.array()).all())
      return main_.theta_hat;
    const std::uint64_t h = bits_hash(s);
    auto& bucket = refits_[h];
    for (const auto& [key, value] : bucket)
      if (key.size() == s.size() && (key.array() == s.array()).all()) return value;
    est::EstimateOptions opt = refit_opt_;
    if (warm && warm->size() == model_.param_dim()) {
      opt.start = *warm;
      opt.multi_start = false;
    }
    VectorXd theta = est::estimate(s, model_, E_, opt).theta_hat;
    bucket.emplace_back(s, theta);
    return theta;
  }

 private:
  const models::Model& model_;
  const est::SynthEnsemble& E_;
  est::EstimateOptions main_opt_, refit_opt_;
  bool have_main_ = false;
  VectorXd main_s_;
  est::EstimateResult main_;
  std::unordered_map<std::uint64_t, std::vector<std::pair<VectorXd, VectorXd>>> refits_;
};

// ---------------------------------------------------------------------------
// Study wiring.
// ---------------------------------------------------------------------------

struct Target {
  std::string suffix;  // method tag becomes "<method>:<suffix>"
  int index = 0;       // theta coordinate under test
};

struct StudyContext {
  StudyConfig cfg;
  std::unique_ptr<models::Model> model;
  VectorXd theta_star;
  std::vector<Target> targets;       // CI studies
  std::vector<double> grid;          // linreg_ht truth values for theta[0]
  est::EstimateOptions main_opt;
  est::EstimateOptions refit_opt;
  double sigma_const = 0.0;          // 1/sqrt(n)
};

StudyContext make_context(const StudyConfig& cfg) {
  StudyContext ctx;
  ctx.cfg = cfg;
  ctx.sigma_const = 1.0 / std::sqrt(static_cast<double>(cfg.n));

  ctx.refit_opt.multi_start = false;
  ctx.refit_opt.require_convergence = false;
  ctx.main_opt.require_convergence = false;

  if (cfg.study == "locscale_ci" || cfg.study == "toy_oracle") {
    models::LocScaleConfig mc;
    mc.n = cfg.n;
    mc.eps = cfg.eps;
    mc.L = cfg.clamp_lo;
    mc.U = cfg.clamp_hi;
    ctx.model = models::make_locscale_model(mc);
    ctx.theta_star = VectorXd(2);
    ctx.theta_star << cfg.mu_star, cfg.sigma_star;
    ctx.targets = {{"mu", 0}, {"sigma", 1}};
  } else if (cfg.study == "linreg_ht") {
    models::LinRegConfig mc;
    mc.n = cfg.n;
    mc.mu = cfg.mu;
    mc.Delta = cfg.delta;
    ctx.model = models::make_linreg_model(mc);
    ctx.theta_star = VectorXd(5);
    ctx.theta_star << 0.0, cfg.beta0_star, cfg.mux_star, cfg.sigx_star, cfg.sige_star;
    ctx.grid = cfg.beta1_grid;
  } else if (cfg.study == "logistic_ci") {
    models::LogisticConfig mc;
    mc.n = cfg.n;
    mc.eps = cfg.eps;
    ctx.model = models::make_logistic_model(mc);
    ctx.theta_star = VectorXd(4);
    ctx.theta_star << cfg.beta0_star, cfg.beta1_star, cfg.a_star, cfg.b_star;
    ctx.targets = {{"b1", 1}};
    // The staircase objective of the indicator labels defeats curvature
    // assumptions: accept line-search stalls, skip the simplex fallback, use
    // forward differences with a wide step, and cap bootstrap refits.
    MinimizeOptions& m = ctx.main_opt.optimizer;
    m.fd_rel_step = 5e-5;
    m.fd_forward = true;
    m.allow_nelder_mead = false;
    m.stall_grad_tol = 1e9;
    m.max_halvings = 12;
    ctx.refit_opt.optimizer = m;
    ctx.refit_opt.optimizer.max_iters = cfg.boot_max_iters > 0 ? cfg.boot_max_iters : 30;
    ctx.refit_opt.optimizer.f_rel_tol = 1e-8;
    ctx.refit_opt.optimizer.x_rel_tol = 1e-6;
  } else {
    throw std::invalid_argument("config: unknown study '" + cfg.study + "'");
  }
  if (cfg.boot_max_iters > 0) ctx.refit_opt.optimizer.max_iters = cfg.boot_max_iters;
  return ctx;
}

boot::BaselineKind baseline_kind(const std::string& method) {
  if (method == "naive_percentile") return boot::BaselineKind::NaivePercentile;
  if (method == "simplified_t") return boot::BaselineKind::SimplifiedT;
  if (method == "ferrando") return boot::BaselineKind::Ferrando;
  if (method == "efron_bc") return boot::BaselineKind::EfronBC;
  throw std::invalid_argument("unknown baseline method '" + method + "'");
}

int naive_boundary(const models::Model& model, const VectorXd& theta) {
  const Box& box = model.theta_box();
  for (int i = 0; i < model.param_dim(); ++i)
    if (theta[i] == box.lo[i] || theta[i] == box.hi[i]) return 1;
  return 0;
}

// All rows for one work unit: a replicate, or for linreg_ht one (grid value,
// replicate) cell.
std::vector<Row> run_unit(const StudyContext& ctx, const SeedBank& bank, int unit) {
  const StudyConfig& cfg = ctx.cfg;
  const models::Model& model = *ctx.model;
  const bool grid_study = !ctx.grid.empty();
  const int g = grid_study ? unit / cfg.replicates : 0;
  const int rho = grid_study ? unit % cfg.replicates : unit;

  std::vector<std::uint64_t> scope;
  if (grid_study) scope = {static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(rho)};
  else scope = {static_cast<std::uint64_t>(rho)};

  VectorXd theta_true = ctx.theta_star;
  if (grid_study) theta_true[0] = ctx.grid[static_cast<std::size_t>(g)];

  Stream data = bank.derive("rep/data", scope);
  Stream dp = bank.derive("rep/dp", scope);
  const VectorXd s = model.simulate(theta_true, data, dp);

  bool needs_adi = false;
  for (const std::string& m : cfg.methods)
    if (m == "adi" || m == "adi_pivot") needs_adi = true;

  std::optional<est::SynthEnsemble> E;
  std::optional<AdiFitCache> cache;
  if (needs_adi) {
    E.emplace(model, bank, scope, cfg.R);
    cache.emplace(model, *E, ctx.main_opt, ctx.refit_opt);
  }

  boot::Estimator adi_estimator = [&](const VectorXd& sv) {
    return cache->main_fit(sv).theta_hat;
  };

  std::vector<Row> rows;
  auto emit_failed = [&](const std::string& tag, double ms) {
    Row r;
    r.method = tag;
    r.replicate_id = rho;
    r.runtime_ms = ms;
    r.failed = 1;
    rows.push_back(std::move(r));
  };

  for (const std::string& method : cfg.methods) {
    if (cfg.study == "toy_oracle" && rho == cfg.toy_fail_replicate && method == cfg.methods[0]) {
      for (const Target& t : ctx.targets) emit_failed(method + ":" + t.suffix, 0.0);
      continue;
    }

    if (method == "adi") {
      for (const Target& t : ctx.targets) {
        const std::string tag = method + ":" + t.suffix;
        const auto t0 = Clock::now();
        try {
          boot::TauFn tau = [&t](const VectorXd& th) { return th[t.index]; };
          boot::PivotEstimator pivot = [&](const VectorXd& sv, const VectorXd* warm) {
            const VectorXd th = cache->refit(sv, warm);
            return boot::TauSigma{th[t.index], ctx.sigma_const};
          };
          boot::IntervalResult ci = boot::pb_ci(s, model, adi_estimator, tau, pivot, cfg.B,
                                                cfg.alpha, bank, scope);
          Row r;
          r.method = tag;
          r.replicate_id = rho;
          const est::EstimateResult& fit = cache->main_fit(s);
          r.estimate.assign(fit.theta_hat.data(), fit.theta_hat.data() + fit.theta_hat.size());
          for (bool hit : fit.at_boundary)
            if (hit) r.boundary_hit = 1;
          r.has_ci = true;
          r.ci_lo = ci.lo;
          r.ci_hi = ci.hi;
          r.width = ci.hi - ci.lo;
          const double truth = ctx.theta_star[t.index];
          r.covered = (ci.lo <= truth && truth <= ci.hi) ? 1 : 0;
          r.runtime_ms = ms_since(t0);
          rows.push_back(std::move(r));
        } catch (const std::exception&) {
          emit_failed(tag, ms_since(t0));
        }
      }
    } else if (method == "adi_pivot") {
      const std::string tag =
          method + ":b1=" + fmt_short(ctx.grid[static_cast<std::size_t>(g)]);
      const auto t0 = Clock::now();
      try {
        boot::TauFn tau = [](const VectorXd& th) { return th[0]; };
        boot::PivotEstimator pivot = [&](const VectorXd& sv, const VectorXd* warm) {
          const VectorXd th = cache->refit(sv, warm);
          const double sd = est::approx_pivot_sd(th, *E, cfg.pivot_delta, 0);
          return boot::TauSigma{th[0], sd};
        };
        boot::TestResult ht = boot::pb_ht(s, model, adi_estimator, tau, pivot,
                                          boot::NullSpec::point(0.0), cfg.B, cfg.alpha, bank,
                                          scope);
        Row r;
        r.method = tag;
        r.replicate_id = rho;
        const est::EstimateResult& fit = cache->main_fit(s);
        r.estimate.assign(fit.theta_hat.data(), fit.theta_hat.data() + fit.theta_hat.size());
        for (bool hit : fit.at_boundary)
          if (hit) r.boundary_hit = 1;
        r.has_test = true;
        r.p_value = ht.p_value;
        r.reject = ht.reject ? 1 : 0;
        r.runtime_ms = ms_since(t0);
        rows.push_back(std::move(r));
      } catch (const std::exception&) {
        emit_failed(tag, ms_since(t0));
      }
    } else {
      const boot::BaselineKind kind = baseline_kind(method);
      for (const Target& t : ctx.targets) {
        const std::string tag = method + ":" + t.suffix;
        const auto t0 = Clock::now();
        try {
          boot::IntervalResult ci = boot::baseline_ci(s, model, kind, cfg.B, cfg.alpha, bank,
                                                      scope, t.index);
          Row r;
          r.method = tag;
          r.replicate_id = rho;
          const VectorXd naive = model.naive_estimate(s);
          r.estimate.assign(naive.data(), naive.data() + naive.size());
          r.boundary_hit = naive_boundary(model, naive);
          r.has_ci = true;
          r.ci_lo = ci.lo;
          r.ci_hi = ci.hi;
          r.width = ci.hi - ci.lo;
          const double truth = ctx.theta_star[t.index];
          r.covered = (ci.lo <= truth && truth <= ci.hi) ? 1 : 0;
          r.runtime_ms = ms_since(t0);
          rows.push_back(std::move(r));
        } catch (const std::exception&) {
          emit_failed(tag, ms_since(t0));
        }
      }
    }
  }
  return rows;
}

std::string budget_kind_name(dp::PrivacyBudget::Kind kind) {
  return kind == dp::PrivacyBudget::Kind::PureDP ? "pure_dp" : "gdp";
}

ordered_json config_echo(const StudyConfig& cfg) {
  ordered_json j;
  j["study"] = cfg.study;
  j["methods"] = cfg.methods;
  j["replicates"] = cfg.replicates;
  j["R"] = cfg.R;
  j["B"] = cfg.B;
  j["alpha"] = cfg.alpha;
  j["master_seed"] = cfg.master_seed;
  j["n"] = cfg.n;
  j["eps"] = cfg.eps;
  j["mu"] = cfg.mu;
  j["clamp_lo"] = cfg.clamp_lo;
  j["clamp_hi"] = cfg.clamp_hi;
  j["delta"] = cfg.delta;
  j["mu_star"] = cfg.mu_star;
  j["sigma_star"] = cfg.sigma_star;
  j["beta0_star"] = cfg.beta0_star;
  j["beta1_star"] = cfg.beta1_star;
  j["mux_star"] = cfg.mux_star;
  j["sigx_star"] = cfg.sigx_star;
  j["sige_star"] = cfg.sige_star;
  j["a_star"] = cfg.a_star;
  j["b_star"] = cfg.b_star;
  j["beta1_grid"] = cfg.beta1_grid;
  j["pivot_delta"] = cfg.pivot_delta;
  j["boot_max_iters"] = cfg.boot_max_iters;
  j["toy_fail_replicate"] = cfg.toy_fail_replicate;
  return j;
}

}  // namespace

StudyResult run_study(const StudyConfig& cfg) {
  validate_config(cfg);
  StudyContext ctx = make_context(cfg);
  const models::Model& model = *ctx.model;
  SeedBank bank(cfg.master_seed);

  const bool grid_study = !ctx.grid.empty();
  const int units =
      grid_study ? static_cast<int>(ctx.grid.size()) * cfg.replicates : cfg.replicates;

  int workers = std::min(resolve_workers(cfg.workers), units);
  std::vector<std::vector<Row>> per_unit(static_cast<std::size_t>(units));
  std::atomic<int> next{0};
  auto drain = [&]() {
    for (;;) {
      const int u = next.fetch_add(1);
      if (u >= units) break;
      per_unit[static_cast<std::size_t>(u)] = run_unit(ctx, bank, u);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(drain);
  drain();
  for (std::thread& t : pool) t.join();

  // Canonical method-tag order: config method order, expanded per target or
  // grid value, matching the row emission order inside a unit.
  std::vector<std::string> tags;
  for (const std::string& m : cfg.methods) {
    if (m == "adi_pivot") {
      for (double b1 : ctx.grid) tags.push_back(m + ":b1=" + fmt_short(b1));
    } else {
      for (const Target& t : ctx.targets) tags.push_back(m + ":" + t.suffix);
    }
  }

  std::string csv = csv_header(model.param_dim());
  csv += '\n';
  struct Agg {
    int rows = 0, failures = 0, hits = 0, k = 0;
    double width_sum = 0.0, runtime_sum = 0.0;
    bool is_rejection = false;
  };
  std::unordered_map<std::string, Agg> agg;
  int failed_rows = 0;
  for (const auto& unit_rows : per_unit) {
    for (const Row& r : unit_rows) {
      append_csv_row(csv, cfg.study, r, model.param_dim());
      Agg& a = agg[r.method];
      ++a.rows;
      a.runtime_sum += r.runtime_ms;
      if (r.failed) {
        ++a.failures;
        ++failed_rows;
        continue;
      }
      ++a.k;
      if (r.has_ci) {
        a.hits += r.covered;
        a.width_sum += r.width;
      } else if (r.has_test) {
        a.is_rejection = true;
        a.hits += r.reject;
      }
    }
  }

  StudyResult out;
  out.failed_rows = failed_rows;
  out.csv = std::move(csv);

  ordered_json summary;
  summary["study"] = cfg.study;
  summary["master_seed"] = cfg.master_seed;
  summary["replicates"] = cfg.replicates;
  const dp::PrivacyBudget budget = model.total_budget();
  summary["budget"] = {{"kind", budget_kind_name(budget.kind)}, {"value", budget.value}};
  summary["config"] = config_echo(cfg);
  summary["methods"] = ordered_json::array();
  for (const std::string& tag : tags) {
    const Agg& a = agg[tag];
    MethodSummary m;
    m.method = tag;
    m.is_rejection = a.is_rejection;
    m.rows = a.rows;
    m.failures = a.failures;
    if (a.k > 0) {
      m.rate = static_cast<double>(a.hits) / a.k;
      m.mc_se = std::sqrt(m.rate * (1.0 - m.rate) / a.k);
      m.mean_width = a.is_rejection ? 0.0 : a.width_sum / a.k;
    }
    if (a.rows > 0) m.mean_runtime_ms = a.runtime_sum / a.rows;
    ordered_json jm;
    jm["method"] = m.method;
    jm["kind"] = m.is_rejection ? "test" : "ci";
    jm[m.is_rejection ? "rejection_rate" : "coverage"] = m.rate;
    jm["mc_se"] = m.mc_se;
    jm["mean_width"] = m.mean_width;
    jm["mean_runtime_ms"] = m.mean_runtime_ms;
    jm["failures"] = m.failures;
    jm["rows"] = m.rows;
    summary["methods"].push_back(jm);
    out.methods.push_back(std::move(m));
  }
  summary["failed_rows"] = failed_rows;
  out.summary_json = summary.dump(2) + "\n";

  if (!cfg.out_csv.empty()) {
    std::ofstream f(cfg.out_csv);
    if (!f) throw std::runtime_error("cannot open output file " + cfg.out_csv);
    f << out.csv;
  }
  if (!cfg.out_json.empty()) {
    std::ofstream f(cfg.out_json);
    if (!f) throw std::runtime_error("cannot open output file " + cfg.out_json);
    f << out.summary_json;
  }
  return out;
}

std::string csv_stat_content(const std::string& csv) {
  std::stringstream in(csv);
  std::string line;
  std::string out;
  int drop = -1;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (first) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == "runtime_ms") drop = static_cast<int>(i);
      first = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (static_cast<int>(i) == drop) continue;
      if (!out.empty() && out.back() != '\n') out += ',';
      out += cells[i];
    }
    out += '\n';
  }
  return out;
}

std::string summary_stat_content(const std::string& summary_json) {
  ordered_json j = ordered_json::parse(summary_json);
  if (j.contains("methods"))
    for (auto& m : j["methods"]) m.erase("mean_runtime_ms");
  return j.dump(2) + "\n";
}

SweepResult run_sweep(const StudyConfig& base, const std::string& axis,
                      const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("sweep: values must be nonempty");
  auto as_int = [](double v, const std::string& what) {
    const double r = std::round(v);
    if (std::fabs(v - r) > 1e-9 || r < 1)
      throw std::invalid_argument("sweep: " + what + " values must be positive integers");
    return static_cast<int>(r);
  };

  SweepResult out;
  out.csv = "axis,value,method,rate,mc_se,mean_width,failures\n";
  for (double v : values) {
    StudyConfig cfg = base;
    cfg.out_csv.clear();
    cfg.out_json.clear();
    if (axis == "R") {
      cfg.R = as_int(v, "R");
    } else if (axis == "n") {
      cfg.n = as_int(v, "n");
    } else if (axis == "eps_or_mu") {
      if (cfg.study == "linreg_ht") cfg.mu = v;
      else cfg.eps = v;
    } else if (axis == "clamp_bound") {
      if (cfg.study == "linreg_ht") cfg.delta = v;
      else if (cfg.study == "logistic_ci")
        throw std::invalid_argument("sweep: clamp_bound does not apply to logistic_ci");
      else cfg.clamp_hi = v;
    } else {
      throw std::invalid_argument("sweep: unknown axis '" + axis + "'");
    }
    StudyResult r = run_study(cfg);
    out.failed_rows += r.failed_rows;
    for (const MethodSummary& m : r.methods) {
      out.csv += axis;
      out.csv += ',';
      out.csv += fmt17(v);
      out.csv += ',';
      out.csv += m.method;
      out.csv += ',';
      out.csv += fmt17(m.rate);
      out.csv += ',';
      out.csv += fmt17(m.mc_se);
      out.csv += ',';
      out.csv += fmt17(m.mean_width);
      out.csv += ',';
      out.csv += std::to_string(m.failures);
      out.csv += '\n';
    }
  }
  if (!base.out_csv.empty()) {
    std::ofstream f(base.out_csv);
    if (!f) throw std::runtime_error("cannot open output file " + base.out_csv);
    f << out.csv;
  }
  return out;
}

bool selftest(std::ostream& log) {
  bool ok = true;
  auto check = [&](bool pass, const std::string& name, const std::string& detail) {
    log << (pass ? "[ok]   " : "[FAIL] ") << name;
    if (!detail.empty()) log << " (" << detail << ")";
    log << "\n";
    if (!pass) ok = false;
  };

  {
    const double g = dp::objective_perturb_gamma(1.0, 0.85, 0.5);
    check(std::fabs(g - 3.08962) <= 1e-4, "objective perturbation ridge constant", fmt_short(g));
  }
  {
    std::vector<dp::PrivacyBudget> pure = {{dp::PrivacyBudget::Kind::PureDP, 0.9},
                                           {dp::PrivacyBudget::Kind::PureDP, 0.1}};
    std::vector<dp::PrivacyBudget> gdp = {{dp::PrivacyBudget::Kind::GDP, 3.0},
                                          {dp::PrivacyBudget::Kind::GDP, 4.0}};
    const double p = dp::compose(pure).value;
    const double gv = dp::compose(gdp).value;
    check(std::fabs(p - 1.0) <= 1e-15 && gv == 5.0, "budget composition arithmetic",
          fmt_short(p) + ", " + fmt_short(gv));
  }
  {
    const bool pass = boot::pb_ci_indices(199, 0.05) == std::pair<int, int>(5, 195) &&
                      boot::pb_ci_indices(399, 0.10) == std::pair<int, int>(20, 380) &&
                      boot::pb_ci_indices(999, 0.02) == std::pair<int, int>(10, 990);
    check(pass, "percentile order-statistic indices", "");
  }
  {
    SeedBank bank(404);
    Stream st = bank.derive("selftest/hull", {0});
    const int N = 20000;
    int inside = 0;
    for (int i = 0; i < N; ++i) {
      const double u1 = 2.0 * st.uniform01() - 1.0;
      const double u2 = 2.0 * st.uniform01() - 1.0;
      if (dp::hull_contains(u1, u2)) ++inside;
    }
    const double frac = static_cast<double>(inside) / N;
    check(std::fabs(frac - 5.0 / 24.0) <= 0.015, "sensitivity hull box acceptance",
          fmt_short(frac));
  }
  {
    StudyConfig cfg = default_config("toy_oracle");
    cfg.replicates = 4;
    cfg.workers = 1;
    StudyResult a = run_study(cfg);
    StudyResult b = run_study(cfg);
    cfg.workers = 2;
    StudyResult c = run_study(cfg);
    const bool rerun_same = csv_stat_content(a.csv) == csv_stat_content(b.csv) &&
                            summary_stat_content(a.summary_json) ==
                                summary_stat_content(b.summary_json);
    const bool workers_same = csv_stat_content(a.csv) == csv_stat_content(c.csv) &&
                              summary_stat_content(a.summary_json) ==
                                  summary_stat_content(c.summary_json);
    check(rerun_same, "toy study rerun determinism", "");
    check(workers_same, "toy study worker-count invariance", "");
    check(a.failed_rows == 0, "toy study runs clean", std::to_string(a.failed_rows));
  }
  {
    // p-value endpoints on a maximally separated and a null-centred test.
    StudyConfig cfg = default_config("toy_oracle");
    StudyContext ctx = make_context(cfg);
    SeedBank bank(17);
    std::vector<std::uint64_t> scope{0};
    Stream data = bank.derive("rep/data", scope);
    Stream dp_stream = bank.derive("rep/dp", scope);
    const VectorXd s = ctx.model->simulate(ctx.theta_star, data, dp_stream);
    boot::Estimator naive = [&](const VectorXd& sv) { return ctx.model->naive_estimate(sv); };
    boot::TauFn tau = [](const VectorXd& th) { return th[0]; };
    boot::PivotEstimator pivot = [&](const VectorXd& sv, const VectorXd*) {
      return boot::TauSigma{ctx.model->naive_estimate(sv)[0], ctx.sigma_const};
    };
    const int B = 19;
    boot::TestResult far = boot::pb_ht(s, *ctx.model, naive, tau, pivot,
                                       boot::NullSpec::point(1e9), B, 0.1, bank, scope);
    boot::TauSigma at_s = pivot(s, nullptr);
    boot::TestResult zero = boot::pb_ht(s, *ctx.model, naive, tau, pivot,
                                        boot::NullSpec::point(at_s.tau_hat), B, 0.1, bank,
                                        scope);
    const bool pass = far.p_value == 1.0 / (B + 1) && zero.p_value == 1.0 &&
                      zero.statistic == 0.0;
    check(pass, "p-value bounds on extreme statistics",
          fmt_short(far.p_value) + ", " + fmt_short(zero.p_value));
  }
  return ok;
}

void bench(std::ostream& log) {
  {
    StudyConfig cfg = default_config("toy_oracle");
    StudyContext ctx = make_context(cfg);
    SeedBank bank(1);
    std::vector<std::uint64_t> scope{0};
    est::SynthEnsemble E(*ctx.model, bank, scope, 50);
    VectorXd th = ctx.theta_star;
    auto t0 = Clock::now();
    const int evals = 200;
    for (int i = 0; i < evals; ++i) {
      th[0] = 1.0 + 1e-4 * i;
      (void)est::adi_objective(VectorXd::Constant(2, 1.0), E, th);
    }
    log << "locscale adi objective (R=50): " << fmt_short(ms_since(t0) / evals)
        << " ms/eval\n";
  }
  {
    StudyConfig cfg = default_config("toy_oracle");
    cfg.replicates = 4;
    cfg.workers = 1;
    auto t0 = Clock::now();
    StudyResult r = run_study(cfg);
    log << "toy_oracle replicate: " << fmt_short(ms_since(t0) / cfg.replicates)
        << " ms (failed rows " << r.failed_rows << ")\n";
  }
  {
    models::LogisticConfig mc;
    mc.n = 100;
    mc.eps = 10.0;
    auto model = models::make_logistic_model(mc);
    SeedBank bank(2);
    std::vector<std::uint64_t> scope{0};
    est::SynthEnsemble E(*model, bank, scope, 200);
    VectorXd th(4);
    th << 0.5, 2.0, 0.5, 0.5;
    VectorXd s(4);
    s << 0.4, 1.8, 40.0, 25.0;
    (void)est::adi_objective(s, E, th);  // cold pass builds caches
    auto t0 = Clock::now();
    const int evals = 10;
    for (int i = 0; i < evals; ++i) {
      th[2] = 0.5 + 1e-3 * (i + 1);
      (void)est::adi_objective(s, E, th);
    }
    log << "logistic adi objective, nuisance step (R=200): "
        << fmt_short(ms_since(t0) / evals) << " ms/eval\n";
  }
}

}  // namespace dpboot::exp
