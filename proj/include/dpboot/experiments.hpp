#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dpboot/common.hpp"

namespace dpboot::exp {

// Flat, typed study configuration. A config file is `key = value` lines with
// '#' comments; the study key selects the defaults, every other key
// overrides one field, and unknown keys are errors. The same keys are
// accepted as CLI overrides.
struct StudyConfig {
  std::string study;  // locscale_ci | linreg_ht | logistic_ci | toy_oracle
  std::vector<std::string> methods;
  int replicates = 0;
  int R = 0;
  int B = 0;
  double alpha = 0.05;
  std::uint64_t master_seed = 1;
  // Parallelism and output paths are environmental: they are excluded from
  // the summary's config echo so results compare equal across machines.
  int workers = 0;  // <= 0 resolves DPBOOT_WORKERS, then hardware
  std::string out_csv;
  std::string out_json;

  // Model constants; which ones apply depends on the study.
  int n = 0;
  double eps = 0.0;       // locscale per-channel, logistic total
  double mu = 0.0;        // linreg total GDP
  double clamp_lo = 0.0;  // locscale L
  double clamp_hi = 0.0;  // locscale U
  double delta = 0.0;     // linreg clamp bound

  // True parameters.
  double mu_star = 0.0, sigma_star = 0.0;                  // locscale
  double beta0_star = 0.0, beta1_star = 0.0;               // linreg, logistic
  double mux_star = 0.0, sigx_star = 0.0, sige_star = 0.0; // linreg
  double a_star = 0.0, b_star = 0.0;                       // logistic
  std::vector<double> beta1_grid;                          // linreg_ht sweep of truths

  // Inference tuning.
  double pivot_delta = 1e-3;  // forward-difference step of the pivot scale
  int boot_max_iters = 0;     // refit iteration budget; 0 keeps the default

  // toy_oracle only: force one replicate's method to fail, for tests of the
  // per-row failure contract. -1 disables.
  int toy_fail_replicate = -1;
};

// Defaults for a named study; throws on an unknown study name.
StudyConfig default_config(const std::string& study);

// Parses a config file's text. Requires a study key; later keys override the
// study defaults in file order.
StudyConfig parse_config_text(const std::string& text);

// Applies one `key=value` override; throws std::invalid_argument on unknown
// keys or malformed values.
void apply_override(StudyConfig& cfg, const std::string& key, const std::string& value);

struct MethodSummary {
  std::string method;
  // Coverage for CI methods, rejection rate for tests; over non-failed rows.
  double rate = 0.0;
  double mc_se = 0.0;
  double mean_width = 0.0;  // 0 for test methods
  double mean_runtime_ms = 0.0;
  int failures = 0;
  int rows = 0;
  bool is_rejection = false;
};

struct StudyResult {
  std::string csv;           // header + one row per (replicate, method, target)
  std::string summary_json;  // config echo, budget, per-method aggregates
  std::vector<MethodSummary> methods;
  int failed_rows = 0;
};

// Runs one study: per replicate, draw data under the true parameters,
// release the private statistic, and run every configured method. Rows are
// gathered in replicate order regardless of the worker count, and any
// replicate failure is recorded in its row rather than thrown. Writes
// out_csv/out_json when set. The CSV columns are
//   study, method, replicate_id, estimate_0.., ci_lo, ci_hi, covered,
//   width, p_value, reject, runtime_ms, failed, boundary_hit
// with floats at 17 significant digits and '.' decimal; runtime_ms is wall
// clock and is the one column that varies between runs.
StudyResult run_study(const StudyConfig& cfg);

// Strips the runtime_ms column, the only nondeterministic one, so reruns
// and different worker counts can be compared bitwise.
std::string csv_stat_content(const std::string& csv);

// Same masking for the summary JSON's runtime fields.
std::string summary_stat_content(const std::string& summary_json);

struct SweepResult {
  std::string csv;  // axis, value, method, rate, mc_se, mean_width, failures
  int failed_rows = 0;
};

// Reruns the study once per axis value. Axes: R, eps_or_mu (eps or mu,
// whichever the study's model uses), clamp_bound (locscale U or linreg
// Delta), n. Writes base.out_csv when set.
SweepResult run_sweep(const StudyConfig& base, const std::string& axis,
                      const std::vector<double>& values);

// Fast internal property checks (mechanism constants, index arithmetic,
// p-value bounds, rerun and worker-count determinism on the toy study).
// Logs one line per check; returns overall pass.
bool selftest(std::ostream& log);

// Micro-benchmark of the simulate/fit/bootstrap path at small settings.
void bench(std::ostream& log);

// Worker count resolution: positive flag wins, then DPBOOT_WORKERS, then
// hardware concurrency; always at least 1.
int resolve_workers(int flag_value);

}  // namespace dpboot::exp
