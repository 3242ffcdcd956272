// rntk_lab: command-line front end for the kernel and experiment library.
//
// Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
// failure, 4 one or more training runs diverged.

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rntk/config.hpp"
#include "rntk/errors.hpp"
#include "rntk/harness.hpp"
#include "rntk/rntk.hpp"
#include "rntk/sphere_data.hpp"

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitDiverged = 4;

struct Globals {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

struct ExperimentCommand {
  rntk::ExperimentKind kind;
  CLI::App* app = nullptr;
  std::map<std::string, std::string> overrides;
};

rntk::ExperimentConfig build_config(const Globals& g, const ExperimentCommand& cmd) {
  auto cfg = g.config_path.empty() ? rntk::ExperimentConfig::defaults(cmd.kind) : rntk::load_config(g.config_path);
  if (cfg.experiment != cmd.kind) {
    if (!g.config_path.empty())
      throw rntk::InvalidArgument("config file names experiment '" + std::string(rntk::to_string(cfg.experiment)) +
                                  "' but the subcommand is '" + std::string(rntk::to_string(cmd.kind)) + "'");
    cfg.experiment = cmd.kind;
  }
  for (const auto& [key, value] : cmd.overrides)
    if (cmd.app->count("--" + key) > 0) cfg.set(key, value);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out_dir.empty()) cfg.output_dir = g.out_dir;
  cfg.validate();
  return cfg;
}

rntk::UnitVector parse_point(const std::vector<double>& coords, const char* name) {
  if (coords.empty()) throw rntk::InvalidArgument(std::string(name) + " is required");
  rntk::Vector v(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t i = 0; i < coords.size(); ++i) v[static_cast<Eigen::Index>(i)] = coords[i];
  return rntk::UnitVector::normalized(v);
}

int kernel_eval(const std::vector<double>& x, const std::vector<double>& x2, int depth, double a, bool trace) {
  const rntk::KernelConfig cfg{depth, a};
  cfg.validate();
  const auto u = parse_point(x, "--x");
  const auto v = parse_point(x2, "--x2");
  const auto tr = rntk::rntk_eval(u, v, cfg);
  nlohmann::ordered_json j;
  j["u"] = tr.u;
  j["value"] = tr.value;
  j["L"] = depth;
  j["a"] = a;
  if (trace) {
    j["K"] = tr.K;
    j["B"] = tr.B;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual neural tangent kernel on the hypersphere: kernel evaluation and experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "key = value configuration file");
  app.add_option("--out", g.out_dir, "output directory (overrides output_dir)");
  app.add_option("--seed", g.seed, "master seed for datasets and probes");
  app.add_option("--threads", g.threads, "worker threads (default: RNTK_LAB_THREADS or 1)");

  std::vector<double> x, x2;
  int depth = 2;
  double a = 0.5;
  bool trace = false;
  auto* eval = app.add_subcommand("kernel-eval", "evaluate r(x, x') for two points (normalized to unit length)");
  eval->add_option("--x", x, "first point, comma-separated")->delimiter(',')->required();
  eval->add_option("--x2", x2, "second point, comma-separated")->delimiter(',')->required();
  eval->add_option("--L", depth, "depth L >= 2");
  eval->add_option("--a", a, "residual scale in (0, 1)");
  eval->add_flag("--trace", trace, "also print the K and B recursions");

  std::vector<ExperimentCommand> commands = {
      {rntk::ExperimentKind::spectrum}, {rntk::ExperimentKind::convergence},
      {rntk::ExperimentKind::rates}, {rntk::ExperimentKind::corruption}};
  const std::map<rntk::ExperimentKind, std::string> help = {
      {rntk::ExperimentKind::spectrum, "Funk-Hecke spectrum, decay fits and Gram cross-check"},
      {rntk::ExperimentKind::convergence, "finite-width kernel and function convergence sweep"},
      {rntk::ExperimentKind::rates, "early-stopping and interpolation excess-risk rates"},
      {rntk::ExperimentKind::corruption, "label-corruption experiment on the octant target"}};
  for (auto& cmd : commands) {
    cmd.app = app.add_subcommand(std::string(rntk::to_string(cmd.kind)), help.at(cmd.kind));
    for (const auto& key : rntk::config_keys()) {
      if (key == "experiment" || key == "seed" || key == "output_dir") continue;
      cmd.app->add_option("--" + key, cmd.overrides[key], "override config key '" + key + "'");
    }
  }

  std::string plot_dir;
  auto* plot = app.add_subcommand("emit-plotdata", "write tidy plot CSVs for a finished run directory");
  plot->add_option("dir", plot_dir, "run directory (default: --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (eval->parsed()) return kernel_eval(x, x2, depth, a, trace);

    if (plot->parsed()) {
      const std::string dir = !plot_dir.empty() ? plot_dir : g.out_dir;
      if (dir.empty()) throw rntk::InvalidArgument("emit-plotdata needs a run directory");
      for (const auto& p : rntk::emit_plotdata(dir)) std::cout << p.generic_string() << "\n";
      return 0;
    }

    for (const auto& cmd : commands) {
      if (!cmd.app->parsed()) continue;
      const auto cfg = build_config(g, cmd);
      rntk::RunOptions opts;
      opts.threads = rntk::resolve_threads(g.threads);
      opts.log = [](const std::string& s) { std::cerr << s << std::endl; };
      const auto diverged = rntk::run_experiment(cfg, opts);
      std::cout << cfg.output_dir << "\n";
      if (diverged > 0) {
        std::cerr << diverged << " run(s) diverged; see " << cfg.output_dir << "/manifest.json\n";
        return kExitDiverged;
      }
      return 0;
    }
  } catch (const rntk::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const rntk::Diverged& e) {
    std::cerr << "diverged at step " << e.step() << ": " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::logic_error& e) {
    // InvalidArgument, DomainError, InvalidState, UnsupportedMode
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitInvalid;
}
