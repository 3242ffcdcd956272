#include "rntk/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "rntk/csv.hpp"
#include "rntk/errors.hpp"

namespace rntk {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw InvalidArgument("config: bad value for '" + std::string(key) + "': '" + std::string(value) + "'");
}

template <class T>
T parse_int(std::string_view key, std::string_view s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) bad_value(key, s);
  return v;
}

double parse_real(std::string_view key, std::string_view s) {
  try {
    return csv::parse_double(s);
  } catch (const std::exception&) {
    bad_value(key, s);
  }
}

template <class T, class F>
std::vector<T> parse_list(std::string_view key, std::string_view s, F&& one) {
  if (trim(s).empty()) return {};
  std::vector<T> out;
  for (auto item : split_list(s)) out.push_back(one(key, item));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>)
      out += csv::format_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field int_field(T ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*member = parse_int<T>(k, v); },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(double ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*member = parse_real(k, v); },
          [member](const ExperimentConfig& c) { return csv::format_double(c.*member); }};
}

template <class T>
Field int_list_field(std::vector<T> ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) {
            c.*member = parse_list<T>(k, v, parse_int<T>);
          },
          [member](const ExperimentConfig& c) { return join(c.*member); }};
}

Field real_list_field(std::vector<double> ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) {
            c.*member = parse_list<double>(k, v, parse_real);
          },
          [member](const ExperimentConfig& c) { return join(c.*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"experiment",
       {[](ExperimentConfig& c, std::string_view, std::string_view v) { c.experiment = parse_experiment_kind(v); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.experiment)); }}},
      {"L",
       {[](ExperimentConfig& c, std::string_view k, std::string_view v) { c.kernel.depth = parse_int<int>(k, v); },
        [](const ExperimentConfig& c) { return std::to_string(c.kernel.depth); }}},
      {"a",
       {[](ExperimentConfig& c, std::string_view k, std::string_view v) { c.kernel.a = parse_real(k, v); },
        [](const ExperimentConfig& c) { return csv::format_double(c.kernel.a); }}},
      {"d", int_field(&ExperimentConfig::d)},
      {"seed", int_field(&ExperimentConfig::seed)},
      {"n", int_list_field(&ExperimentConfig::n)},
      {"m", int_list_field(&ExperimentConfig::m)},
      {"seeds", int_list_field(&ExperimentConfig::seeds)},
      {"seed_cap", int_field(&ExperimentConfig::seed_cap)},
      {"seed_cap_width", int_field(&ExperimentConfig::seed_cap_width)},
      {"lr", real_field(&ExperimentConfig::lr)},
      {"steps", int_field(&ExperimentConfig::steps)},
      {"checkpoints", int_list_field(&ExperimentConfig::checkpoints)},
      {"noise_sigma", real_field(&ExperimentConfig::noise_sigma)},
      {"corruption_p", real_list_field(&ExperimentConfig::corruption_p)},
      {"probe_pairs", int_field(&ExperimentConfig::probe_pairs)},
      {"probe_inputs", int_field(&ExperimentConfig::probe_inputs)},
      {"k_centers", int_field(&ExperimentConfig::k_centers)},
      {"n_test", int_field(&ExperimentConfig::n_test)},
      {"n_mc", int_field(&ExperimentConfig::n_mc)},
      {"tstar_c", real_field(&ExperimentConfig::tstar_c)},
      {"tstar_grid", real_list_field(&ExperimentConfig::tstar_grid)},
      {"sweep_points", int_field(&ExperimentConfig::sweep_points)},
      {"loss",
       {[](ExperimentConfig& c, std::string_view k, std::string_view v) {
          if (v == "squared")
            c.loss = Loss::squared;
          else if (v == "cross_entropy")
            c.loss = Loss::cross_entropy;
          else
            bad_value(k, v);
        },
        [](const ExperimentConfig& c) {
          return std::string(c.loss == Loss::squared ? "squared" : "cross_entropy");
        }}},
      {"test_labels",
       {[](ExperimentConfig& c, std::string_view k, std::string_view v) {
          if (v == "same")
            c.test_labels = TestLabels::same;
          else if (v == "clean")
            c.test_labels = TestLabels::clean;
          else
            bad_value(k, v);
        },
        [](const ExperimentConfig& c) {
          return std::string(c.test_labels == TestLabels::same ? "same" : "clean");
        }}},
      {"classes", int_field(&ExperimentConfig::classes)},
      {"k_max", int_field(&ExperimentConfig::k_max)},
      {"nystrom_n", int_field(&ExperimentConfig::nystrom_n)},
      {"output_dir",
       {[](ExperimentConfig& c, std::string_view, std::string_view v) {
          if (!v.empty()) c.output_dir = std::string(v);
        },
        [](const ExperimentConfig& c) { return c.output_dir; }}},
  };
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw InvalidArgument("config: unknown key '" + std::string(key) + "'");
}

std::vector<std::uint64_t> seed_range(std::uint64_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::uint64_t i = 0; i < count; ++i) s[i] = i + 1;
  return s;
}

}  // namespace

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kernel_eval: return "kernel_eval";
    case ExperimentKind::spectrum: return "spectrum";
    case ExperimentKind::convergence: return "convergence";
    case ExperimentKind::rates: return "rates";
    case ExperimentKind::corruption: return "corruption";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(std::string_view s) {
  for (auto k : {ExperimentKind::kernel_eval, ExperimentKind::spectrum, ExperimentKind::convergence,
                 ExperimentKind::rates, ExperimentKind::corruption})
    if (to_string(k) == s) return k;
  throw InvalidArgument("config: unknown experiment '" + std::string(s) + "'");
}

ExperimentConfig ExperimentConfig::defaults(ExperimentKind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  switch (kind) {
    case ExperimentKind::kernel_eval:
    case ExperimentKind::convergence:
      break;
    case ExperimentKind::spectrum:
      c.seeds = seed_range(5);
      break;
    case ExperimentKind::rates:
      c.n = {64, 128, 256, 512, 1024};
      c.noise_sigma = 0.5;
      c.k_centers = 10;
      break;
    case ExperimentKind::corruption:
      c.kernel = KernelConfig{5, 0.5};
      c.n = {500};
      c.m = {1000};
      c.seeds = seed_range(10);
      c.seed_cap = 0;
      c.lr = 4.0;
      c.steps = 16;
      c.corruption_p = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
      break;
  }
  return c;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  field(key).set(*this, key, trim(value));
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument("config: " + what);
  };
  kernel.validate();
  require(d >= 2, "d must be >= 2");
  require(!output_dir.empty(), "output_dir must be set");
  require(!n.empty() && !m.empty() && !seeds.empty() && !checkpoints.empty() && !corruption_p.empty() &&
              !tstar_grid.empty(),
          "list fields must be nonempty");
  require(std::all_of(n.begin(), n.end(), [](auto v) { return v >= 1; }), "n entries must be >= 1");
  require(std::all_of(m.begin(), m.end(), [](auto v) { return v >= 1; }), "m entries must be >= 1");
  require(std::is_sorted(m.begin(), m.end()), "m list must be ascending");
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
  require(seed_cap >= 0 && seed_cap_width >= 0, "seed caps must be >= 0");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(steps >= 0, "steps must be >= 0");
  require(std::all_of(checkpoints.begin(), checkpoints.end(), [](auto v) { return v >= 0; }),
          "checkpoints must be >= 0");
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(std::all_of(corruption_p.begin(), corruption_p.end(), [](double p) { return p >= 0.0 && p <= 1.0; }),
          "corruption_p entries must lie in [0, 1]");
  require(probe_pairs >= 1 && probe_inputs >= 1, "probe counts must be >= 1");
  require(k_centers >= 1, "k_centers must be >= 1");
  require(n_test >= 1, "n_test must be >= 1");
  require(n_mc >= 100, "n_mc must be >= 100");
  require(tstar_c >= 0.0, "tstar_c must be >= 0");
  require(std::all_of(tstar_grid.begin(), tstar_grid.end(), [](double c) { return c > 0.0; }),
          "tstar_grid entries must be positive");
  require(sweep_points >= 0, "sweep_points must be >= 0");
  require(classes >= 2, "classes must be >= 2");
  require(k_max >= 8, "k_max must be >= 8");
  require(nystrom_n >= 200, "nystrom_n must be >= 200");
  if (experiment == ExperimentKind::convergence || experiment == ExperimentKind::corruption)
    require(n.size() == 1, "n must hold a single value for this experiment");
  if (experiment == ExperimentKind::corruption) {
    require(m.size() == 1, "m must hold a single value for corruption");
    require(d == 3, "corruption needs d = 3 (octant target)");
    require(classes == 8, "corruption needs classes = 8");
  }
}

std::vector<std::uint64_t> ExperimentConfig::seeds_for_width(std::int64_t width) const {
  if (seed_cap == 0 || width < seed_cap_width || static_cast<std::size_t>(seed_cap) >= seeds.size()) return seeds;
  return {seeds.begin(), seeds.begin() + seed_cap};
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.first);
    return k;
  }();
  return keys;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto c = s.find_first_of("#;"); c != std::string_view::npos) s = s.substr(0, c);
    s = trim(s);
    if (s.empty() || s.front() == '[') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw InvalidArgument("config: line " + std::to_string(lineno) + " has no '='");
    entries.emplace_back(std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))));
  }
  ExperimentKind kind = ExperimentKind::convergence;
  for (const auto& [k, v] : entries)
    if (k == "experiment") kind = parse_experiment_kind(v);
  auto cfg = ExperimentConfig::defaults(kind);
  for (const auto& [k, v] : entries) cfg.set(k, v);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalFailure("sha256: digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidState("sha256: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string canonical_config_text(const ExperimentConfig& cfg) {
  auto c = cfg;
  c.output_dir.clear();
  return serialize_config(c);
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(canonical_config_text(cfg)); }

}  // namespace rntk
