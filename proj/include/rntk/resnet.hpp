#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "rntk/rntk.hpp"
#include "rntk/sphere_data.hpp"
#include "rntk/types.hpp"

namespace rntk {

/// One branch of the mirrored network:
///   alpha^(0) = A x / sqrt(m)
///   alpha^(l) = alpha^(l-1) + a/sqrt(m) V^(l) relu(sqrt(2/m) W^(l) alpha^(l-1))
///   f        = head^T alpha^(L)
/// A and head are frozen; W and V are trained. head is m x 1 (the vector v)
/// in scalar mode and m x K in K-class mode.
struct ResNetParams {
  Matrix A;
  std::vector<Matrix> W;
  std::vector<Matrix> V;
  Matrix head;
};

enum class OutputScaling {
  kernel_normalized,  // multiply by sqrt(C)/a so the empirical kernel tends to r
  raw,
};

/// f = (sqrt(2)/2) s (f^(1) - f^(2)) with identical branches at
/// initialization, so f_0 == 0 exactly. s is 1 for raw scaling and
/// sqrt(C)/a for kernel-normalized scaling.
class MirroredNet {
 public:
  static MirroredNet init_mirrored(Eigen::Index width, Eigen::Index dim, const KernelConfig& cfg,
                                   std::uint64_t seed, std::optional<int> classes = std::nullopt,
                                   OutputScaling scaling = OutputScaling::kernel_normalized);

  const ResNetParams& branch(int p) const { return branches_.at(static_cast<std::size_t>(p)); }
  /// Mutable access; bumps the parameter version so older caches go stale.
  ResNetParams& mutable_branch(int p);

  Eigen::Index width() const noexcept { return width_; }
  Eigen::Index dim() const noexcept { return dim_; }
  int depth() const noexcept { return cfg_.depth; }
  double a() const noexcept { return cfg_.a; }
  const KernelConfig& config() const noexcept { return cfg_; }
  int outputs() const noexcept { return static_cast<int>(branches_[0].head.cols()); }
  bool scalar_mode() const noexcept { return !classes_.has_value(); }
  std::optional<int> classes() const noexcept { return classes_; }
  double output_scale() const noexcept { return output_scale_; }
  OutputScaling scaling() const noexcept { return scaling_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }

 private:
  MirroredNet() = default;
  friend MirroredNet load_checkpoint(const std::filesystem::path&);

  std::array<ResNetParams, 2> branches_;
  KernelConfig cfg_;
  Eigen::Index width_ = 0;
  Eigen::Index dim_ = 0;
  std::optional<int> classes_;
  double output_scale_ = 1.0;
  OutputScaling scaling_ = OutputScaling::kernel_normalized;
  std::uint64_t seed_ = 0;
  std::uint64_t version_ = 0;
};

struct BranchCache {
  std::vector<Vector> alpha;   // alpha^(0) .. alpha^(L)
  std::vector<Vector> preact;  // sqrt(2/m) W^(l) alpha^(l-1), l = 1..L (index l-1)
  std::vector<Vector> mask;    // diagonal of D^(l): 1 where preact > 0, else 0
  Vector output;               // head^T alpha^(L), unscaled
};

struct ForwardCache {
  std::array<BranchCache, 2> branch;
  Vector output;  // combined network output (length 1 in scalar mode)
  std::uint64_t version = 0;

  double scalar() const { return output[0]; }
};

ForwardCache forward(const MirroredNet& net, const UnitVector& x);
ForwardCache forward(const MirroredNet& net, const Eigen::Ref<const Vector>& x);

/// Per-branch gradient factors of the combined output: for each layer l,
///   grad_{W^(l)} f = a gamma^(l) alpha^(l-1)^T,
///   grad_{V^(l)} f = a delta^(l) eta^(l)^T.
struct BranchGradient {
  std::vector<Vector> delta;       // delta^(l), l = 0..L
  std::vector<Vector> gamma;       // l = 1..L (index l-1)
  std::vector<Vector> eta;         // l = 1..L (index l-1)
  std::vector<Vector> alpha_prev;  // alpha^(l-1), l = 1..L (index l-1)
  double a = 0.0;

  Matrix dW(int l) const;  // 1-based layer
  Matrix dV(int l) const;
};

struct GradientBundle {
  std::array<BranchGradient, 2> branch;
};

/// Gradient of cotangent^T f with respect to W, V of both branches. The
/// cotangent defaults to 1 in scalar mode. Throws InvalidState when the cache
/// was produced before the latest parameter change.
GradientBundle backward(const MirroredNet& net, const ForwardCache& cache,
                        std::optional<Vector> cotangent = std::nullopt);

struct RnkValue {
  double branch1 = 0.0;  // r^(1): kernel of s f^(1)
  double branch2 = 0.0;
  double value = 0.0;    // (r^(1) + r^(2)) / 2
};

/// Empirical residual network kernel <grad f(x), grad f(x')> through the
/// rank-1 factors: per layer <gamma,gamma'><alpha,alpha'> + <delta,delta'><eta,eta'>.
RnkValue empirical_rnk_detail(const GradientBundle& gx, const GradientBundle& gx2);
double empirical_rnk(const MirroredNet& net, const Eigen::Ref<const Vector>& x,
                     const Eigen::Ref<const Vector>& x2);
RnkValue empirical_rnk_detail(const MirroredNet& net, const Eigen::Ref<const Vector>& x,
                              const Eigen::Ref<const Vector>& x2);

/// Batched variants: one forward/backward over all probe rows, then the same
/// rank-1 inner products per pair.
/// RNK for paired rows: out[i] = r_t(P1.row(i), P2.row(i)).
Vector empirical_rnk_pairs(const MirroredNet& net, const Matrix& P1, const Matrix& P2);
/// Full probe-set RNK matrix.
Matrix empirical_rnk_matrix(const MirroredNet& net, const Matrix& P);

/// Batched forward over the rows of X; returns n x K outputs (no caches kept).
Matrix predict_batch(const MirroredNet& net, const Matrix& X, Eigen::Index chunk = 1024);
/// Scalar-mode batched forward.
Vector network_function_snapshot(const MirroredNet& net, const Matrix& probes);

enum class Loss { squared, cross_entropy };

struct TrainRecord {
  std::int64_t step = 0;
  double t = 0.0;  // flow time step * lr
  double train_loss = 0.0;
  double label_err = 0.0;  // NaN for regression data
  Vector probe_rnk;        // per probe pair
  Vector probe_fn;         // per probe input (scalar mode)
};

struct TrainOptions {
  double lr = 0.1;
  std::int64_t steps = 0;
  Loss loss = Loss::squared;
  std::vector<std::int64_t> pinned_checkpoints;
  Matrix probe_pair_lhs;  // rows paired with probe_pair_rhs
  Matrix probe_pair_rhs;
  Matrix probe_inputs;
  /// Runs after the built-in probes at every checkpoint.
  std::function<void(const MirroredNet&, TrainRecord&)> on_checkpoint;
};

struct TrainResult {
  std::vector<TrainRecord> records;
  std::int64_t steps_run = 0;
  bool diverged = false;
  std::int64_t diverged_step = -1;
};

/// {0} plus 1, 2, 4, ... below steps, plus steps itself and any pinned steps
/// in [0, steps]; sorted and unique.
std::vector<std::int64_t> checkpoint_schedule(std::int64_t steps, const std::vector<std::int64_t>& pinned);

/// Full-batch gradient descent on the empirical loss, updating W and V only.
/// Squared loss: (1/2n) sum ||f(x_i) - y_i||^2 (one-hot y in class mode).
/// Cross-entropy: (1/n) sum -log softmax(f(x_i))[y_i].
TrainResult train_gd(MirroredNet& net, const SphereDataset& ds, const TrainOptions& opts);

/// Parameter dump (little-endian f64, branch 1 then branch 2, each
/// A, W^(1..L), V^(1..L), head, row-major) plus a JSON sidecar.
struct CheckpointMeta {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};
void save_checkpoint(const MirroredNet& net, const std::filesystem::path& bin_path,
                     const CheckpointMeta& meta);
MirroredNet load_checkpoint(const std::filesystem::path& bin_path);

}  // namespace rntk
