#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rntk/rntk.hpp"
#include "rntk/types.hpp"

namespace rntk {

/// A point of S^{d-1}, d >= 2.
class UnitVector {
 public:
  /// Scales v to unit length. Throws on d < 2 or a zero vector.
  static UnitVector normalized(const Vector& v);
  /// Accepts v only if | ||v|| - 1 | <= tol.
  static UnitVector checked(const Vector& v, double tol = 1e-12);

  const Vector& coords() const noexcept { return coords_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }
  double operator[](Eigen::Index i) const { return coords_[i]; }

 private:
  explicit UnitVector(Vector v) : coords_(std::move(v)) {}
  Vector coords_;
};

enum class LabelKind { regression, classification };

struct SphereDataset {
  Matrix X;        // n x d, unit rows
  Vector y;        // targets; class indices stored as exact integers
  Vector clean_y;  // y before noise / corruption
  LabelKind kind = LabelKind::regression;
  int num_classes = 0;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  double corruption_p = 0.0;

  Eigen::Index n() const noexcept { return X.rows(); }
  Eigen::Index d() const noexcept { return X.cols(); }
  std::vector<int> labels() const;
  std::vector<int> clean_labels() const;
};

/// n i.i.d. uniform points on S^{d-1} (normalized Gaussian vectors), one per row.
Matrix sample_uniform_sphere(Eigen::Index n, Eigen::Index d, std::uint64_t seed);

/// Octant class of x in S^2: each coordinate contributes 1 if >= 0, else 0,
/// weighted 1, 2, 4.
int make_octant_target(const UnitVector& x);
int make_octant_target(const Eigen::Ref<const Vector>& x);

/// n uniform points on S^2 labelled by the octant target (K = 8).
SphereDataset make_octant_dataset(Eigen::Index n, std::uint64_t seed);

/// Each label independently replaced with probability p by a uniform draw
/// from {0..K-1}. clean_y is kept.
SphereDataset corrupt_labels(const SphereDataset& ds, double p, std::uint64_t seed);

/// f*(x) = sum_j w_j r(x, z_j), a finite member of the RKHS of r.
struct RKHSTarget {
  Matrix centers;  // k x d
  Vector weights;
  KernelConfig kernel;
  double rkhs_norm = 0.0;  // sqrt(w^T r(Z,Z) w)

  double operator()(const Eigen::Ref<const Vector>& x) const;
  Vector evaluate(const Matrix& X) const;
};

struct RegressionSet {
  SphereDataset data;
  RKHSTarget target;
};

RegressionSet make_rkhs_regression_set(Eigen::Index n, Eigen::Index d, const KernelConfig& kernel,
                                       Eigen::Index k_centers, double noise_sigma,
                                       std::uint64_t seed);

/// CSV with header x0,...,x{d-1},y,clean_y; shortest round-trip decimals.
void write_dataset_csv(const std::filesystem::path& path, const SphereDataset& ds);
SphereDataset read_dataset_csv(const std::filesystem::path& path, LabelKind kind,
                               int num_classes = 0);

}  // namespace rntk
