#include "rntk/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "rntk/csv.hpp"
#include "rntk/errors.hpp"
#include "rntk/kernel_flow.hpp"
#include "rntk/resnet.hpp"
#include "rntk/rng.hpp"
#include "rntk/sphere_data.hpp"

namespace rntk {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

long long ll(std::int64_t v) { return static_cast<long long>(v); }

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

Stat make_stat(const std::vector<double>& v) {
  Stat s;
  s.count = static_cast<std::int64_t>(v.size());
  if (v.empty()) {
    s.mean = s.std = std::nan("");
    return s;
  }
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidState("cannot write " + path.string());
  out << text;
}

void log_line(const RunOptions& opts, const std::string& s) {
  if (opts.log) opts.log(s);
}

// Creates dir and removes outputs listed by an earlier manifest there, so a
// re-run never leaves stale files in the inventory.
void prepare_output_dir(const fs::path& dir) {
  fs::create_directories(dir);
  if (!fs::exists(dir / kManifestName)) return;
  const auto old = RunManifest::read(dir);
  for (const auto& f : old.files) fs::remove(dir / f.path);
  fs::remove(dir / kManifestName);
}

RunManifest begin_manifest(const ExperimentConfig& cfg) {
  RunManifest man;
  man.experiment = std::string(to_string(cfg.experiment));
  man.config_hash = config_hash(cfg);
  man.rng_algorithm = std::string(Rng::kAlgorithm);
  man.started = utc_timestamp();
  return man;
}

void finish_manifest(RunManifest& man, const fs::path& dir) {
  man.finished = utc_timestamp();
  man.refresh_inventory(dir);
  man.write(dir);
}

std::string param_label(std::string_view name, double v) { return std::string(name) + "=" + csv::format_double(v); }

int argmax_row(const Matrix& F, Eigen::Index i) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < F.cols(); ++k)
    if (F(i, k) > F(i, best)) best = k;
  return static_cast<int>(best);
}

double accuracy(const Matrix& F, const Vector& labels) {
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < F.rows(); ++i)
    if (argmax_row(F, i) == static_cast<int>(labels[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(F.rows());
}

}  // namespace

// ---------------------------------------------------------------- manifest

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::refresh_inventory(const fs::path& dir) {
  files.clear();
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == kManifestName) continue;
    files.push_back({rel, sha256_file(entry.path().string()), entry.file_size()});
  }
  std::sort(files.begin(), files.end(), [](const auto& x, const auto& y) { return x.path < y.path; });
}

void RunManifest::write(const fs::path& dir) const {
  ordered_json j;
  j["tool"] = tool;
  j["tool_version"] = tool_version;
  j["experiment"] = experiment;
  j["config_hash"] = config_hash;
  j["rng_algorithm"] = rng_algorithm;
  j["started"] = started;
  j["finished"] = finished;
  j["diverged_runs"] = diverged_runs;
  j["runs"] = ordered_json::array();
  for (const auto& r : runs) j["runs"].push_back({{"param", r.param}, {"seed", r.seed}, {"diverged", r.diverged}});
  j["files"] = ordered_json::array();
  for (const auto& f : files) j["files"].push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  write_text(dir / kManifestName, j.dump(2) + "\n");
}

RunManifest RunManifest::read(const fs::path& dir) {
  std::ifstream in(dir / kManifestName, std::ios::binary);
  if (!in) throw InvalidState("no " + std::string(kManifestName) + " in " + dir.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw InvalidState("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  RunManifest m;
  m.tool = j.value("tool", "");
  m.tool_version = j.value("tool_version", "");
  m.experiment = j.value("experiment", "");
  m.config_hash = j.value("config_hash", "");
  m.rng_algorithm = j.value("rng_algorithm", "");
  m.started = j.value("started", "");
  m.finished = j.value("finished", "");
  m.diverged_runs = j.value("diverged_runs", std::int64_t{0});
  for (const auto& r : j.value("runs", ordered_json::array()))
    m.runs.push_back({r.at("param").get<std::string>(), r.at("seed").get<std::uint64_t>(), r.at("diverged").get<bool>()});
  for (const auto& f : j.value("files", ordered_json::array()))
    m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>(),
                       f.at("bytes").get<std::uintmax_t>()});
  return m;
}

// ------------------------------------------------------------------ pool

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, 256));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    while (!stop) {
      const std::size_t i = next++;
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        stop = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("RNTK_LAB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
    throw InvalidArgument("RNTK_LAB_THREADS must be a positive integer");
  }
  return 1;
}

// ------------------------------------------------------------- statistics

std::optional<double> loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("loglog_slope: length mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] > 0.0 && ys[i] > 0.0 && std::isfinite(xs[i]) && std::isfinite(ys[i])) {
      lx.push_back(std::log(xs[i]));
      ly.push_back(std::log(ys[i]));
    }
  }
  if (lx.size() < 2) return std::nullopt;
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) return std::nullopt;
  return sxy / sxx;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("spearman: length mismatch");
  if (xs.size() < 2) return std::nullopt;
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------- spectrum

SpectrumReport run_spectrum(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path dir = cfg.output_dir;
  prepare_output_dir(dir);
  auto man = begin_manifest(cfg);
  write_text(dir / "config.ini", canonical_config_text(cfg));

  SpectrumReport rep;
  rep.profile = funk_hecke_mu(cfg.kernel, cfg.d, cfg.k_max);
  const auto& prof = rep.profile;

  std::vector<double> ks(prof.mu.size());
  std::iota(ks.begin(), ks.end(), 0.0);
  rep.mu_fit = fit_decay(ks, prof.mu, {8, std::min<std::size_t>(48, prof.mu.size() - 1)});
  std::vector<double> js(prof.lambda_flat.size());
  std::iota(js.begin(), js.end(), 1.0);
  rep.lambda_fit = fit_decay(js, prof.lambda_flat, {49, std::min<std::size_t>(1999, js.size() - 1)});

  std::vector<Vector> tops(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), opts.threads, [&](std::size_t i) {
    tops[i] = nystrom_check(cfg.kernel, cfg.d, cfg.nystrom_n, derive_seed(cfg.seeds[i], 5));
    log_line(opts, "spectrum nystrom seed=" + std::to_string(cfg.seeds[i]));
  });

  {
    csv::Writer w(dir / "spectrum_mu.csv");
    w.header({"k", "N", "mu"});
    for (std::size_t k = 0; k < prof.mu.size(); ++k)
      w.field(ll(static_cast<std::int64_t>(k))).field(ll(prof.mult[k])).field(prof.mu[k]).end_row();
  }
  {
    csv::Writer w(dir / "spectrum_lambda.csv");
    w.header({"j", "lambda"});
    for (std::size_t j = 0; j < prof.lambda_flat.size(); ++j)
      w.field(ll(static_cast<std::int64_t>(j + 1))).field(prof.lambda_flat[j]).end_row();
  }
  {
    csv::Writer w(dir / "nystrom.csv");
    w.header({"seed", "j", "gram", "operator", "rel_err"});
    for (std::size_t i = 0; i < tops.size(); ++i) {
      double worst = 0.0;
      for (Eigen::Index j = 0; j < 10; ++j) {
        const double op = prof.lambda_flat[static_cast<std::size_t>(j)];
        const double rel = std::abs(tops[i][j] - op) / op;
        worst = std::max(worst, rel);
        w.field(cfg.seeds[i]).field(ll(j + 1)).field(tops[i][j]).field(op).field(rel).end_row();
      }
      rep.nystrom_max_rel_err.push_back(worst);
    }
  }
  rep.nystrom_median_rel_err = median(rep.nystrom_max_rel_err);

  const double d = cfg.d;
  auto fit_json = [](const DecayFit& f, double first, double last, double target) {
    return ordered_json{{"slope", f.slope},   {"stderr", f.stderr_slope}, {"window", {first, last}},
                        {"target", target},   {"lo95", f.lo95},           {"hi95", f.hi95}};
  };
  ordered_json j;
  j["mu"] = fit_json(rep.mu_fit, static_cast<double>(rep.mu_fit.window.first),
                     static_cast<double>(rep.mu_fit.window.last), -d);
  j["lambda"] = fit_json(rep.lambda_fit, static_cast<double>(rep.lambda_fit.window.first + 1),
                         static_cast<double>(rep.lambda_fit.window.last + 1), -d / (d - 1.0));
  j["trace_partial"] = prof.trace_partial;
  j["trace_deficit"] = prof.trace_deficit();
  j["quad_nodes"] = prof.quad_nodes;
  j["nystrom_n"] = cfg.nystrom_n;
  j["nystrom_median_max_rel_err"] = rep.nystrom_median_rel_err;
  j["warnings"] = prof.warnings;
  write_text(dir / "spectrum_slopes.json", j.dump(2) + "\n");

  for (auto s : cfg.seeds) man.runs.push_back({param_label("k_max", cfg.k_max), s, false});
  finish_manifest(man, dir);
  return rep;
}

// ------------------------------------------------------------- convergence

ConvergenceTable run_convergence(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path dir = cfg.output_dir;
  prepare_output_dir(dir);
  fs::create_directories(dir / "trajectories");
  auto man = begin_manifest(cfg);
  write_text(dir / "config.ini", canonical_config_text(cfg));

  const auto& kernel = cfg.kernel;
  const auto set = make_rkhs_regression_set(cfg.n.front(), cfg.d, kernel, cfg.k_centers, cfg.noise_sigma,
                                            derive_seed(cfg.seed, 1));
  write_dataset_csv(dir / "dataset.csv", set.data);
  const Matrix P1 = sample_uniform_sphere(cfg.probe_pairs, cfg.d, derive_seed(cfg.seed, 2));
  const Matrix P2 = sample_uniform_sphere(cfg.probe_pairs, cfg.d, derive_seed(cfg.seed, 3));
  const Matrix Pin = sample_uniform_sphere(cfg.probe_inputs, cfg.d, derive_seed(cfg.seed, 4));
  Vector r_ref(cfg.probe_pairs);
  for (Eigen::Index i = 0; i < cfg.probe_pairs; ++i) r_ref[i] = rntk_value(clamp_inner(P1.row(i).dot(P2.row(i))), kernel);
  const FlowRegressor reg(set.data.X, set.data.y, kernel);
  const Matrix cross = reg.cross_kernel(Pin);

  struct Cell {
    std::int64_t m;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto m : cfg.m)
    for (auto s : cfg.seeds_for_width(m)) cells.push_back({m, s});
  std::sort(cells.begin(), cells.end(),
            [](const Cell& x, const Cell& y) { return std::tie(x.m, x.seed) < std::tie(y.m, y.seed); });

  ConvergenceTable table;
  table.runs.resize(cells.size());
  parallel_for(cells.size(), opts.threads, [&](std::size_t ci) {
    const auto started = std::chrono::steady_clock::now();
    const Cell c = cells[ci];
    auto net = MirroredNet::init_mirrored(c.m, cfg.d, kernel, derive_seed(c.seed, static_cast<std::uint64_t>(c.m)));
    TrainOptions topts;
    topts.lr = cfg.lr;
    topts.steps = cfg.steps;
    topts.pinned_checkpoints = cfg.checkpoints;
    topts.probe_pair_lhs = P1;
    topts.probe_pair_rhs = P2;
    topts.probe_inputs = Pin;
    const TrainResult res = train_gd(net, set.data, topts);

    ConvergenceRun run;
    run.m = c.m;
    run.seed = c.seed;
    run.diverged = res.diverged;
    run.steps_run = res.steps_run;
    csv::Writer w(dir / "trajectories" / ("m" + std::to_string(c.m) + "_seed" + std::to_string(c.seed) + ".csv"));
    w.header({"step", "t", "train_loss", "label_err", "probe_rnk_dev", "probe_fn_dev"});
    for (const auto& rec : res.records) {
      const double rnk_dev = (rec.probe_rnk - r_ref).cwiseAbs().maxCoeff();
      const double fn_dev = (rec.probe_fn - reg.predict_cross(rec.t, cross)).cwiseAbs().maxCoeff();
      if (rec.step == 0) run.init_rnk_dev = rnk_dev;
      run.sup_rnk_dev = std::max(run.sup_rnk_dev, rnk_dev);
      run.sup_fn_dev = std::max(run.sup_fn_dev, fn_dev);
      run.final_loss = rec.train_loss;
      w.field(ll(rec.step)).field(rec.t).field(rec.train_loss).field(rec.label_err).field(rnk_dev).field(fn_dev).end_row();
    }
    table.runs[ci] = run;
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::ostringstream msg;
    msg << "convergence m=" << c.m << " seed=" << c.seed << " sup_rnk_dev=" << run.sup_rnk_dev
        << " sup_fn_dev=" << run.sup_fn_dev << (run.diverged ? " DIVERGED" : "") << " (" << sec << " s)";
    log_line(opts, msg.str());
  });

  {
    csv::Writer w(dir / "convergence_runs.csv");
    w.header({"m", "seed", "init_rnk_dev", "sup_rnk_dev", "sup_fn_dev", "final_loss", "steps_run", "diverged"});
    for (const auto& r : table.runs) {
      w.field(ll(r.m)).field(r.seed).field(r.init_rnk_dev).field(r.sup_rnk_dev).field(r.sup_fn_dev);
      w.field(r.final_loss).field(ll(r.steps_run)).field(r.diverged ? 1 : 0).end_row();
      man.runs.push_back({param_label("m", static_cast<double>(r.m)), r.seed, r.diverged});
      if (r.diverged) ++table.diverged_runs;
    }
  }

  std::vector<double> ms, a_med, b_med, c_med;
  for (auto m : cfg.m) {
    std::vector<double> a, b, c;
    for (const auto& r : table.runs) {
      if (r.m != m || r.diverged) continue;
      a.push_back(r.init_rnk_dev);
      b.push_back(r.sup_rnk_dev);
      c.push_back(r.sup_fn_dev);
    }
    ConvergenceRow row{m, static_cast<std::int64_t>(a.size()), median(a), median(b), median(c)};
    table.summary.push_back(row);
    ms.push_back(static_cast<double>(m));
    a_med.push_back(row.median_init_rnk_dev);
    b_med.push_back(row.median_sup_rnk_dev);
    c_med.push_back(row.median_sup_fn_dev);
  }
  table.slope_init_rnk = loglog_slope(ms, a_med);
  table.slope_sup_rnk = loglog_slope(ms, b_med);
  table.slope_sup_fn = loglog_slope(ms, c_med);

  {
    csv::Writer w(dir / "convergence_summary.csv");
    w.header({"m", "runs", "median_init_rnk_dev", "median_sup_rnk_dev", "median_sup_fn_dev"});
    for (const auto& r : table.summary)
      w.field(ll(r.m)).field(ll(r.runs)).field(r.median_init_rnk_dev).field(r.median_sup_rnk_dev).field(r.median_sup_fn_dev).end_row();
  }
  ordered_json j;
  j["slope_init_rnk_dev"] = opt_json(table.slope_init_rnk);
  j["slope_sup_rnk_dev"] = opt_json(table.slope_sup_rnk);
  j["slope_sup_fn_dev"] = opt_json(table.slope_sup_fn);
  j["diverged_runs"] = table.diverged_runs;
  write_text(dir / "convergence_slopes.json", j.dump(2) + "\n");

  man.diverged_runs = table.diverged_runs;
  finish_manifest(man, dir);
  return table;
}

// ------------------------------------------------------------------ rates

std::string_view to_string(RiskMode mode) {
  switch (mode) {
    case RiskMode::early_stop: return "early_stop";
    case RiskMode::interpolate: return "interpolate";
    case RiskMode::sweep: return "sweep";
  }
  return "?";
}

namespace {

// One rate-experiment cell: a fitted regressor plus a fixed Monte Carlo
// sample, so risks at several t reuse the same cross kernel.
struct RateCell {
  std::unique_ptr<FlowRegressor> reg;
  Matrix cross;
  Vector f_star;

  RateCell(const RKHSTarget& target, const ExperimentConfig& cfg, std::int64_t n, std::uint64_t seed) {
    const std::uint64_t cell = derive_seed(seed, static_cast<std::uint64_t>(n));
    const Matrix X = sample_uniform_sphere(n, cfg.d, derive_seed(cell, 1));
    Vector y = target.evaluate(X);
    Rng noise(derive_seed(cell, 2));
    for (Eigen::Index i = 0; i < n; ++i) y[i] += cfg.noise_sigma * noise.normal();
    reg = std::make_unique<FlowRegressor>(X, y, cfg.kernel);
    const Matrix P = sample_uniform_sphere(cfg.n_mc, cfg.d, derive_seed(cell, 3));
    cross = reg->cross_kernel(P);
    f_star = target.evaluate(P);
  }

  // Same estimator as excess_risk_mc: mean squared deviation from f* over
  // uniform draws, with its standard error.
  std::pair<double, double> risk(double t) const {
    const Vector sq = (reg->predict_cross(t, cross) - f_star).array().square();
    const double mean = sq.mean();
    const double k = static_cast<double>(sq.size());
    const double var = (sq.array() - mean).square().sum() / (k - 1.0);
    return {mean, std::sqrt(var / k)};
  }
};

}  // namespace

RiskCurves run_rates(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path dir = cfg.output_dir;
  prepare_output_dir(dir);
  auto man = begin_manifest(cfg);
  write_text(dir / "config.ini", canonical_config_text(cfg));

  const RKHSTarget target =
      make_rkhs_regression_set(1, cfg.d, cfg.kernel, cfg.k_centers, 0.0, derive_seed(cfg.seed, 1)).target;
  const double exponent = static_cast<double>(cfg.d) / (2.0 * cfg.d - 1.0);
  std::vector<std::int64_t> ns = cfg.n;
  std::sort(ns.begin(), ns.end());

  RiskCurves out;
  if (cfg.tstar_c > 0.0) {
    out.tstar_c = cfg.tstar_c;
  } else {
    // c minimizing the median early-stopped risk at the smallest n
    const std::int64_t n0 = ns.front();
    std::vector<std::vector<double>> grid(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), opts.threads, [&](std::size_t i) {
      const RateCell cell(target, cfg, n0, cfg.seeds[i]);
      for (double c : cfg.tstar_grid) grid[i].push_back(cell.risk(early_stop_time(n0, cfg.d, c)).first);
    });
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < cfg.tstar_grid.size(); ++g) {
      std::vector<double> v;
      for (const auto& row : grid) v.push_back(row[g]);
      const double med = median(v);
      out.tuning.emplace_back(cfg.tstar_grid[g], med);
      if (med < best) {
        best = med;
        out.tstar_c = cfg.tstar_grid[g];
      }
    }
    out.tuned = true;
    log_line(opts, "rates tuned c=" + csv::format_double(out.tstar_c));
  }

  struct Cell {
    std::int64_t n;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto n : ns)
    for (auto s : cfg.seeds) cells.push_back({n, s});
  std::sort(cells.begin(), cells.end(),
            [](const Cell& x, const Cell& y) { return std::tie(x.n, x.seed) < std::tie(y.n, y.seed); });

  std::vector<std::vector<RiskRow>> per_cell(cells.size());
  parallel_for(cells.size(), opts.threads, [&](std::size_t ci) {
    const Cell c = cells[ci];
    const RateCell cell(target, cfg, c.n, c.seed);
    const double t_star = early_stop_time(c.n, cfg.d, out.tstar_c);
    auto add = [&](double t, RiskMode mode) {
      const auto [risk, se] = cell.risk(t);
      per_cell[ci].push_back({c.n, c.seed, t, risk, se, mode});
    };
    add(t_star, RiskMode::early_stop);
    add(kInfiniteTime, RiskMode::interpolate);
    if (cfg.sweep_points >= 2) {
      for (std::int64_t k = 0; k < cfg.sweep_points; ++k) {
        const double e = -2.0 + 5.0 * static_cast<double>(k) / static_cast<double>(cfg.sweep_points - 1);
        add(t_star * std::pow(10.0, e), RiskMode::sweep);
      }
    }
    log_line(opts, "rates n=" + std::to_string(c.n) + " seed=" + std::to_string(c.seed) +
                       " early=" + csv::format_double(per_cell[ci][0].risk) +
                       " interp=" + csv::format_double(per_cell[ci][1].risk));
  });
  for (auto& v : per_cell) out.rows.insert(out.rows.end(), v.begin(), v.end());

  std::vector<double> xs, early, interp;
  for (auto n : ns) {
    std::vector<double> e, i;
    for (const auto& r : out.rows) {
      if (r.n != n) continue;
      if (r.mode == RiskMode::early_stop) e.push_back(r.risk);
      if (r.mode == RiskMode::interpolate) i.push_back(r.risk);
    }
    out.summary.push_back({n, early_stop_time(n, cfg.d, out.tstar_c), median(e), median(i)});
    xs.push_back(static_cast<double>(n));
    early.push_back(out.summary.back().median_early);
    interp.push_back(out.summary.back().median_interp);
  }
  out.slope_early = loglog_slope(xs, early);
  out.slope_interp = loglog_slope(xs, interp);

  {
    csv::Writer w(dir / "rates_risk.csv");
    w.header({"n", "seed", "t", "risk", "std_error", "mode"});
    for (const auto& r : out.rows)
      w.field(ll(r.n)).field(r.seed).field(r.t).field(r.risk).field(r.std_error).field(to_string(r.mode)).end_row();
  }
  {
    csv::Writer w(dir / "rates_summary.csv");
    w.header({"n", "t_star", "median_early_stop", "median_interpolate"});
    for (const auto& p : out.summary) w.field(ll(p.n)).field(p.t_star).field(p.median_early).field(p.median_interp).end_row();
  }
  {
    csv::Writer w(dir / "rates_tuning.csv");
    w.header({"c", "median_risk"});
    for (const auto& [c, r] : out.tuning) w.field(c).field(r).end_row();
  }
  ordered_json j;
  j["tstar_c"] = out.tstar_c;
  j["tuned"] = out.tuned;
  j["tstar_exponent"] = exponent;
  j["slope_early_stop"] = opt_json(out.slope_early);
  j["slope_interpolate"] = opt_json(out.slope_interp);
  j["target_slope_early_stop"] = -exponent;
  write_text(dir / "rates_fit.json", j.dump(2) + "\n");

  for (const auto& c : cells) man.runs.push_back({param_label("n", static_cast<double>(c.n)), c.seed, false});
  finish_manifest(man, dir);
  return out;
}

// ------------------------------------------------------------- corruption

CorruptionSummary run_corruption(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path dir = cfg.output_dir;
  prepare_output_dir(dir);
  fs::create_directories(dir / "trajectories");
  auto man = begin_manifest(cfg);
  write_text(dir / "config.ini", canonical_config_text(cfg));

  struct Cell {
    std::size_t p_index;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t pi = 0; pi < cfg.corruption_p.size(); ++pi)
    for (auto s : cfg.seeds) cells.push_back({pi, s});
  std::sort(cells.begin(), cells.end(), [&](const Cell& x, const Cell& y) {
    return std::make_pair(cfg.corruption_p[x.p_index], x.seed) < std::make_pair(cfg.corruption_p[y.p_index], y.seed);
  });

  CorruptionSummary sum;
  sum.runs.resize(cells.size());
  parallel_for(cells.size(), opts.threads, [&](std::size_t ci) {
    const auto started = std::chrono::steady_clock::now();
    const Cell c = cells[ci];
    const double p = cfg.corruption_p[c.p_index];
    const std::uint64_t p_stream = 100 + c.p_index;
    const auto train = corrupt_labels(make_octant_dataset(cfg.n.front(), derive_seed(c.seed, 1)), p,
                                      derive_seed(c.seed, p_stream));
    const auto test_clean = make_octant_dataset(cfg.n_test, derive_seed(c.seed, 2));
    const auto test_noisy = corrupt_labels(test_clean, p, derive_seed(c.seed, 1000 + p_stream));
    const Vector& select_labels = cfg.test_labels == TestLabels::same ? test_noisy.y : test_clean.y;

    auto net = MirroredNet::init_mirrored(cfg.m.front(), cfg.d, cfg.kernel, derive_seed(c.seed, 3), cfg.classes);
    struct Point {
      double acc, clean_acc;
    };
    std::vector<Point> points;
    TrainOptions topts;
    topts.lr = cfg.lr;
    topts.steps = cfg.steps;
    topts.loss = cfg.loss;
    topts.pinned_checkpoints = cfg.checkpoints;
    topts.on_checkpoint = [&](const MirroredNet& nn, TrainRecord&) {
      const Matrix F = predict_batch(nn, test_clean.X);
      points.push_back({accuracy(F, select_labels), accuracy(F, test_clean.y)});
    };
    const TrainResult res = train_gd(net, train, topts);

    CorruptionRun run;
    run.p = p;
    run.seed = c.seed;
    run.diverged = res.diverged;
    csv::Writer w(dir / "trajectories" / ("p" + csv::format_double(p) + "_seed" + std::to_string(c.seed) + ".csv"));
    w.header({"step", "t", "train_loss", "train_err", "test_acc", "test_acc_clean"});
    std::size_t best = 0;
    for (std::size_t k = 0; k < res.records.size(); ++k) {
      const auto& rec = res.records[k];
      w.field(ll(rec.step)).field(rec.t).field(rec.train_loss).field(rec.label_err);
      w.field(points[k].acc).field(points[k].clean_acc).end_row();
      if (points[k].acc > points[best].acc) best = k;
      if (!run.t_label && rec.label_err == 0.0) {
        run.t_label = rec.t;
        run.acc_at_t_label = points[k].acc;
        run.clean_acc_at_t_label = points[k].clean_acc;
      }
      if (!run.t_loss && rec.train_loss <= 0.01 * res.records.front().train_loss) run.t_loss = rec.t;
    }
    if (!res.records.empty()) {
      run.t_max = res.records.back().t;
      run.t_opt = res.records[best].t;
      run.acc_at_t_opt = points[best].acc;
      run.clean_acc_at_t_opt = points[best].clean_acc;
    }
    sum.runs[ci] = run;
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::ostringstream msg;
    msg << "corruption p=" << p << " seed=" << c.seed << " t_opt=" << run.t_opt << " acc_opt=" << run.acc_at_t_opt
        << " t_label=" << (run.t_label ? csv::format_double(*run.t_label) : std::string("unreached"))
        << (run.diverged ? " DIVERGED" : "") << " (" << sec << " s)";
    log_line(opts, msg.str());
  });

  auto opt_field = [](csv::Writer& w, const std::optional<double>& v) -> csv::Writer& {
    return v ? w.field(*v) : w.field(std::string_view{});
  };
  {
    csv::Writer w(dir / "corruption_runs.csv");
    w.header({"p", "seed", "t_max", "t_opt", "t_label", "t_label_reached", "t_loss", "t_loss_reached", "acc_at_t_opt",
              "acc_at_t_label", "clean_acc_at_t_opt", "clean_acc_at_t_label", "gap", "censored", "diverged"});
    for (const auto& r : sum.runs) {
      w.field(r.p).field(r.seed).field(r.t_max).field(r.t_opt);
      opt_field(w, r.t_label).field(r.t_label ? 1 : 0);
      opt_field(w, r.t_loss).field(r.t_loss_reached() ? 1 : 0);
      w.field(r.acc_at_t_opt);
      opt_field(w, r.acc_at_t_label).field(r.clean_acc_at_t_opt);
      opt_field(w, r.clean_acc_at_t_label).field(r.gap()).field(r.censored() ? 1 : 0).field(r.diverged ? 1 : 0);
      w.end_row();
      man.runs.push_back({param_label("p", r.p), r.seed, r.diverged});
      if (r.diverged) ++sum.diverged_runs;
    }
  }

  std::vector<double> ps, gaps;
  for (double p : cfg.corruption_p) {
    std::vector<double> t_opt, t_label, acc_opt, acc_label, drop, gap;
    CorruptionRow row;
    row.p = p;
    for (const auto& r : sum.runs) {
      if (r.p != p || r.diverged) continue;
      ++row.runs;
      t_opt.push_back(r.t_opt);
      acc_opt.push_back(r.acc_at_t_opt);
      gap.push_back(r.gap());
      if (r.t_label) {
        t_label.push_back(*r.t_label);
        acc_label.push_back(*r.acc_at_t_label);
        drop.push_back(r.acc_at_t_opt - *r.acc_at_t_label);
      } else {
        ++row.censored_runs;
      }
    }
    row.t_opt = make_stat(t_opt);
    row.t_label = make_stat(t_label);
    row.acc_at_t_opt = make_stat(acc_opt);
    row.acc_at_t_label = make_stat(acc_label);
    row.acc_drop = make_stat(drop);
    row.median_gap = median(gap);
    sum.per_p.push_back(row);
    ps.push_back(p);
    gaps.push_back(row.median_gap);
  }
  sum.spearman_gap = spearman(ps, gaps);

  {
    csv::Writer w(dir / "corruption_summary.csv");
    w.header({"p", "runs", "censored_runs", "t_opt_mean", "t_opt_std", "t_label_mean", "t_label_std", "t_label_count",
              "acc_at_t_opt_mean", "acc_at_t_opt_std", "acc_at_t_label_mean", "acc_at_t_label_std", "acc_drop_mean",
              "acc_drop_std", "acc_drop_count", "median_gap"});
    for (const auto& r : sum.per_p) {
      w.field(r.p).field(ll(r.runs)).field(ll(r.censored_runs)).field(r.t_opt.mean).field(r.t_opt.std);
      w.field(r.t_label.mean).field(r.t_label.std).field(ll(r.t_label.count));
      w.field(r.acc_at_t_opt.mean).field(r.acc_at_t_opt.std).field(r.acc_at_t_label.mean).field(r.acc_at_t_label.std);
      w.field(r.acc_drop.mean).field(r.acc_drop.std).field(ll(r.acc_drop.count)).field(r.median_gap).end_row();
    }
  }
  ordered_json j;
  j["spearman_p_vs_median_gap"] = opt_json(sum.spearman_gap);
  j["gap_definition"] = "t_label - t_opt; t_max - t_opt when t_label is unreached (censored)";
  j["test_labels"] = cfg.test_labels == TestLabels::same ? "same" : "clean";
  j["loss"] = cfg.loss == Loss::squared ? "squared" : "cross_entropy";
  j["diverged_runs"] = sum.diverged_runs;
  write_text(dir / "corruption_stats.json", j.dump(2) + "\n");

  man.diverged_runs = sum.diverged_runs;
  finish_manifest(man, dir);
  return sum;
}

// ---------------------------------------------------------------- plotdata

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t col(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InvalidState("missing column " + std::string(name));
  }
};

std::optional<Table> read_table(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  Table t;
  std::string line;
  if (std::getline(in, line)) t.header = csv::split_record(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(csv::split_record(line));
  return t;
}

struct TidyRow {
  std::string param, seed, x, y;
};

fs::path write_tidy(const fs::path& path, std::string_view experiment, const std::vector<TidyRow>& rows) {
  csv::Writer w(path);
  w.header({"experiment", "param", "seed", "x", "y"});
  for (const auto& r : rows) w.field(experiment).field(r.param).field(r.seed).field(r.x).field(r.y).end_row();
  return path;
}

}  // namespace

std::vector<fs::path> emit_plotdata(const fs::path& dir) {
  auto man = RunManifest::read(dir);
  const fs::path out = dir / "plotdata";
  fs::create_directories(out);
  std::vector<fs::path> written;
  const std::string& exp = man.experiment;

  // (output name, source file, x column, y column, param column)
  struct Spec {
    std::string name, source, x, y, param_col;
    std::function<bool(const Table&, const std::vector<std::string>&)> keep;
  };
  std::vector<Spec> specs;
  auto mode_is = [](std::string mode) {
    return [mode](const Table& t, const std::vector<std::string>& r) { return r[t.col("mode")] == mode; };
  };
  auto nonempty = [](std::string col) {
    return [col](const Table& t, const std::vector<std::string>& r) { return !r[t.col(col)].empty(); };
  };
  if (exp == "convergence") {
    for (std::string kind : {"init_rnk_dev", "sup_rnk_dev", "sup_fn_dev"})
      specs.push_back({"convergence_" + kind, "convergence_runs.csv", "m", kind, "m",
                       [](const Table& t, const auto& r) { return r[t.col("diverged")] == "0"; }});
  } else if (exp == "rates") {
    specs.push_back({"rates_early_stop", "rates_risk.csv", "n", "risk", "n", mode_is("early_stop")});
    specs.push_back({"rates_interpolate", "rates_risk.csv", "n", "risk", "n", mode_is("interpolate")});
    specs.push_back({"rates_sweep", "rates_risk.csv", "t", "risk", "n", mode_is("sweep")});
  } else if (exp == "corruption") {
    specs.push_back({"corruption_gap", "corruption_runs.csv", "p", "gap", "p", nullptr});
    specs.push_back({"corruption_acc_at_t_opt", "corruption_runs.csv", "p", "acc_at_t_opt", "p", nullptr});
    specs.push_back({"corruption_acc_at_t_label", "corruption_runs.csv", "p", "acc_at_t_label", "p",
                     nonempty("acc_at_t_label")});
  } else if (exp == "spectrum") {
    specs.push_back({"spectrum_mu", "spectrum_mu.csv", "k", "mu", "", nullptr});
    specs.push_back({"spectrum_lambda", "spectrum_lambda.csv", "j", "lambda", "", nullptr});
  } else {
    throw InvalidState("emit_plotdata: unknown experiment '" + exp + "' in manifest");
  }

  for (const auto& s : specs) {
    std::vector<TidyRow> rows;
    if (const auto t = read_table(dir / s.source)) {
      const bool has_seed = std::find(t->header.begin(), t->header.end(), "seed") != t->header.end();
      for (const auto& r : t->rows) {
        if (s.keep && !s.keep(*t, r)) continue;
        TidyRow row;
        row.param = s.param_col.empty() ? std::string() : s.param_col + "=" + r[t->col(s.param_col)];
        row.seed = has_seed ? r[t->col("seed")] : "0";
        row.x = r[t->col(s.x)];
        row.y = r[t->col(s.y)];
        rows.push_back(std::move(row));
      }
    }
    written.push_back(write_tidy(out / (s.name + ".csv"), exp, rows));
  }

  man.refresh_inventory(dir);
  man.write(dir);
  return written;
}

std::int64_t run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  switch (cfg.experiment) {
    case ExperimentKind::spectrum: run_spectrum(cfg, opts); return 0;
    case ExperimentKind::convergence: return run_convergence(cfg, opts).diverged_runs;
    case ExperimentKind::rates: run_rates(cfg, opts); return 0;
    case ExperimentKind::corruption: return run_corruption(cfg, opts).diverged_runs;
    case ExperimentKind::kernel_eval: break;
  }
  throw UnsupportedMode("run_experiment: kernel_eval has no batch runner");
}

}  // namespace rntk
