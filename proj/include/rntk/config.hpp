#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rntk/resnet.hpp"
#include "rntk/rntk.hpp"

namespace rntk {

enum class ExperimentKind { kernel_eval, spectrum, convergence, rates, corruption };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view s);

enum class TestLabels {
  same,   // test labels corrupted with the training p
  clean,  // uncorrupted octant labels
};

/// Every knob of one experiment. Serialized as flat `key = value` text with
/// comma-separated lists; keys are written in a fixed order so the text
/// (and its hash) is canonical.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::convergence;
  KernelConfig kernel{2, 0.5};
  int d = 3;
  std::uint64_t seed = 20240601;  // master seed for datasets and probes
  std::vector<std::int64_t> n{32};
  std::vector<std::int64_t> m{64, 256, 1024, 4096};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  // Widths >= seed_cap_width run only the first seed_cap seeds (0 disables).
  std::int64_t seed_cap = 5;
  std::int64_t seed_cap_width = 4096;
  double lr = 0.125;
  std::int64_t steps = 128;
  std::vector<std::int64_t> checkpoints{0};  // pinned on top of the geometric grid
  double noise_sigma = 0.0;
  std::vector<double> corruption_p{0.0};
  std::int64_t probe_pairs = 10;
  std::int64_t probe_inputs = 50;
  std::int64_t k_centers = 5;
  std::int64_t n_test = 10000;
  std::int64_t n_mc = 5000;
  double tstar_c = 0.0;  // 0 tunes c on the smallest n over tstar_grid
  std::vector<double> tstar_grid{0.25, 0.5, 1, 2, 4, 8, 16, 32, 64, 128};
  std::int64_t sweep_points = 0;  // t-sweep size for rates; 0 disables
  Loss loss = Loss::squared;
  TestLabels test_labels = TestLabels::same;
  int classes = 8;
  int k_max = 64;
  std::int64_t nystrom_n = 2000;
  std::string output_dir = "results";

  /// Documented defaults for each experiment.
  static ExperimentConfig defaults(ExperimentKind kind);

  /// Sets one key from its text form. Throws InvalidArgument on unknown keys
  /// or malformed values.
  void set(std::string_view key, std::string_view value);

  /// Throws InvalidArgument when an invariant fails.
  void validate() const;

  /// Seeds used at width m (honours seed_cap).
  std::vector<std::uint64_t> seeds_for_width(std::int64_t width) const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Known keys in serialization order.
const std::vector<std::string>& config_keys();

std::string serialize_config(const ExperimentConfig& cfg);
/// Parses `key = value` lines on top of the defaults for the experiment named
/// in the text (convergence when absent). '#' and ';' start comments.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

/// Serialized text with output_dir blanked, so the same experiment written to
/// different directories has the same text. An empty output_dir on parse
/// keeps the default.
std::string canonical_config_text(const ExperimentConfig& cfg);

/// SHA-256 of canonical_config_text.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace rntk
