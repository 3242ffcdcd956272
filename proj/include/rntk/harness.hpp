#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rntk/config.hpp"
#include "rntk/spectral.hpp"

namespace rntk {

inline constexpr std::string_view kToolName = "rntk_lab";
inline constexpr std::string_view kToolVersion = "1.0.0";
inline constexpr std::string_view kManifestName = "manifest.json";

struct ManifestRun {
  std::string param;  // e.g. "m=256"
  std::uint64_t seed = 0;
  bool diverged = false;
};

struct ManifestFile {
  std::string path;  // relative to the output directory, '/' separated
  std::string sha256;
  std::uintmax_t bytes = 0;
};

/// Provenance record written as manifest.json next to the results.
struct RunManifest {
  std::string tool = std::string(kToolName);
  std::string tool_version = std::string(kToolVersion);
  std::string experiment;
  std::string config_hash;
  std::string rng_algorithm;
  std::string started;   // UTC, ISO 8601
  std::string finished;
  std::vector<ManifestRun> runs;
  std::int64_t diverged_runs = 0;
  std::vector<ManifestFile> files;

  /// Lists every regular file under dir except the manifest, sorted by path.
  void refresh_inventory(const std::filesystem::path& dir);
  void write(const std::filesystem::path& dir) const;
  /// Throws InvalidState when dir has no manifest.
  static RunManifest read(const std::filesystem::path& dir);
};

std::string utc_timestamp();

/// Runs body(i) for i in [0, count) on `threads` workers. Each index must be
/// independent; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

/// Worker count: explicit value if > 0, else RNTK_LAB_THREADS, else 1.
int resolve_threads(int requested);

struct RunOptions {
  int threads = 1;
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

/// Least-squares slope of log y on log x; nullopt with fewer than two usable
/// points (x and y must be positive and x not all equal).
std::optional<double> loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys);

/// Spearman rank correlation with average ranks for ties; nullopt when either
/// side is constant or fewer than two pairs.
std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// ---------------------------------------------------------------- spectrum

struct SpectrumReport {
  SpectralProfile profile;
  DecayFit mu_fit;      // k in [8, 48], target -3 for d = 3
  DecayFit lambda_fit;  // j in [50, 2000], target -1.5 for d = 3
  std::vector<double> nystrom_max_rel_err;  // per seed, over the top 10
  double nystrom_median_rel_err = 0.0;
};

SpectrumReport run_spectrum(const ExperimentConfig& cfg, const RunOptions& opts = {});

// ------------------------------------------------------------- convergence

struct ConvergenceRun {
  std::int64_t m = 0;
  std::uint64_t seed = 0;
  double init_rnk_dev = 0.0;  // (a) max over probe pairs at step 0
  double sup_rnk_dev = 0.0;   // (b) sup over checkpoints
  double sup_fn_dev = 0.0;    // (c) sup over checkpoints of max over probe inputs
  double final_loss = 0.0;
  std::int64_t steps_run = 0;
  bool diverged = false;
};

struct ConvergenceRow {
  std::int64_t m = 0;
  std::int64_t runs = 0;  // non-divergent runs entering the medians
  double median_init_rnk_dev = 0.0;
  double median_sup_rnk_dev = 0.0;
  double median_sup_fn_dev = 0.0;
};

struct ConvergenceTable {
  std::vector<ConvergenceRun> runs;  // sorted by (m, seed)
  std::vector<ConvergenceRow> summary;
  std::optional<double> slope_init_rnk;
  std::optional<double> slope_sup_rnk;
  std::optional<double> slope_sup_fn;
  std::int64_t diverged_runs = 0;
};

/// Trains one scalar-head network per (m, seed) on a fixed RKHS regression
/// set and compares the empirical kernel and function with their analytic
/// limits at matched flow time t = step * lr.
ConvergenceTable run_convergence(const ExperimentConfig& cfg, const RunOptions& opts = {});

// ------------------------------------------------------------------ rates

enum class RiskMode { early_stop, interpolate, sweep };
std::string_view to_string(RiskMode mode);

struct RiskRow {
  std::int64_t n = 0;
  std::uint64_t seed = 0;
  double t = 0.0;
  double risk = 0.0;
  double std_error = 0.0;
  RiskMode mode = RiskMode::early_stop;
};

struct RatePoint {
  std::int64_t n = 0;
  double t_star = 0.0;
  double median_early = 0.0;
  double median_interp = 0.0;
};

struct RiskCurves {
  std::vector<RiskRow> rows;  // sorted by (n, seed, mode, t)
  std::vector<RatePoint> summary;
  double tstar_c = 0.0;
  bool tuned = false;
  std::vector<std::pair<double, double>> tuning;  // (c, median risk at the smallest n)
  std::optional<double> slope_early;
  std::optional<double> slope_interp;
};

/// Closed-form kernel regression on a fixed unit-norm RKHS target with
/// Gaussian label noise; excess risk by Monte Carlo at t*(n) = c n^{d/(2d-1)}
/// and at t = inf.
RiskCurves run_rates(const ExperimentConfig& cfg, const RunOptions& opts = {});

// ------------------------------------------------------------- corruption

struct CorruptionRun {
  double p = 0.0;
  std::uint64_t seed = 0;
  double t_max = 0.0;  // last recorded flow time
  double t_opt = 0.0;  // argmax test accuracy over checkpoints, earliest on ties
  std::optional<double> t_label;  // first checkpoint with zero training label error
  std::optional<double> t_loss;   // first checkpoint with loss <= 1% of the initial loss
  double acc_at_t_opt = 0.0;
  std::optional<double> acc_at_t_label;
  double clean_acc_at_t_opt = 0.0;  // against uncorrupted test labels
  std::optional<double> clean_acc_at_t_label;
  bool diverged = false;
  bool t_loss_reached() const { return t_loss.has_value(); }
  /// t_label - t_opt, or t_max - t_opt when t_label was not reached.
  double gap() const { return (t_label ? *t_label : t_max) - t_opt; }
  bool censored() const { return !t_label.has_value(); }
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one value
  std::int64_t count = 0;
};

struct CorruptionRow {
  double p = 0.0;
  Stat t_opt;
  Stat t_label;  // over runs that reached zero label error
  Stat acc_at_t_opt;
  Stat acc_at_t_label;
  Stat acc_drop;  // acc_at_t_opt - acc_at_t_label, over runs with t_label
  double median_gap = 0.0;
  std::int64_t censored_runs = 0;
  std::int64_t runs = 0;
};

struct CorruptionSummary {
  std::vector<CorruptionRun> runs;  // sorted by (p, seed)
  std::vector<CorruptionRow> per_p;
  std::optional<double> spearman_gap;  // between p and median gap
  std::int64_t diverged_runs = 0;
};

CorruptionSummary run_corruption(const ExperimentConfig& cfg, const RunOptions& opts = {});

// ---------------------------------------------------------------- plotdata

/// Writes tidy CSVs (experiment,param,seed,x,y) under dir/plotdata for the
/// experiment named in the manifest and refreshes the manifest inventory.
/// Returns the written paths. Throws InvalidState without a manifest.
std::vector<std::filesystem::path> emit_plotdata(const std::filesystem::path& dir);

/// Dispatches on cfg.experiment (kernel_eval is CLI-only and throws
/// UnsupportedMode). Returns the number of divergent runs.
std::int64_t run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

}  // namespace rntk
