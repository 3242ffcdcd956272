#include "rntk/sphere_data.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "rntk/csv.hpp"
#include "rntk/errors.hpp"
#include "rntk/rng.hpp"

namespace rntk {

namespace {

// Stream ids keep the draws of one generator call independent of the others.
enum Stream : std::uint64_t { kInputs = 1, kCenters = 2, kWeights = 3, kNoise = 4, kCorrupt = 5 };

std::vector<int> to_ints(const Vector& v) {
  std::vector<int> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(v[i]);
  return out;
}

}  // namespace

UnitVector UnitVector::normalized(const Vector& v) {
  if (v.size() < 2) throw InvalidArgument("UnitVector: dimension must be >= 2");
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidArgument("UnitVector: cannot normalize");
  return UnitVector(v / norm);
}

UnitVector UnitVector::checked(const Vector& v, double tol) {
  if (v.size() < 2) throw InvalidArgument("UnitVector: dimension must be >= 2");
  if (!(std::abs(v.norm() - 1.0) <= tol)) throw InvalidArgument("UnitVector: not unit-norm");
  return UnitVector(v);
}

std::vector<int> SphereDataset::labels() const { return to_ints(y); }
std::vector<int> SphereDataset::clean_labels() const { return to_ints(clean_y); }

Matrix sample_uniform_sphere(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sample_uniform_sphere: n must be >= 1");
  if (d < 2) throw InvalidArgument("sample_uniform_sphere: d must be >= 2");
  Rng rng(seed);
  Matrix X(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double norm2 = 0.0;
    do {
      for (Eigen::Index k = 0; k < d; ++k) X(i, k) = rng.normal();
      norm2 = X.row(i).squaredNorm();
    } while (norm2 == 0.0);
    X.row(i) /= std::sqrt(norm2);
  }
  return X;
}

int make_octant_target(const Eigen::Ref<const Vector>& x) {
  if (x.size() != 3) throw InvalidArgument("octant target requires d = 3");
  // floor(c + 1) clamped to {0, 1}; c = 1 counts as the positive side.
  auto bit = [](double c) { return c >= 0.0 ? 1 : 0; };
  return bit(x[0]) + 2 * bit(x[1]) + 4 * bit(x[2]);
}

int make_octant_target(const UnitVector& x) { return make_octant_target(x.coords()); }

SphereDataset make_octant_dataset(Eigen::Index n, std::uint64_t seed) {
  SphereDataset ds;
  ds.X = sample_uniform_sphere(n, 3, derive_seed(seed, kInputs));
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) ds.y[i] = make_octant_target(Vector(ds.X.row(i).transpose()));
  ds.clean_y = ds.y;
  ds.kind = LabelKind::classification;
  ds.num_classes = 8;
  ds.seed = seed;
  return ds;
}

SphereDataset corrupt_labels(const SphereDataset& ds, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("corrupt_labels: p must be in [0,1]");
  if (ds.kind != LabelKind::classification || ds.num_classes < 1)
    throw InvalidArgument("corrupt_labels: dataset has no class labels");
  SphereDataset out = ds;
  out.corruption_p = p;
  Rng rng(derive_seed(seed, kCorrupt));
  const auto K = static_cast<std::uint64_t>(ds.num_classes);
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    // both draws are consumed for every label so the stream stays aligned across p
    const double coin = rng.uniform();
    const auto replacement = static_cast<double>(rng.below(K));
    if (coin < p) out.y[i] = replacement;
  }
  return out;
}

double RKHSTarget::operator()(const Eigen::Ref<const Vector>& x) const {
  double s = 0.0;
  for (Eigen::Index j = 0; j < centers.rows(); ++j)
    s += weights[j] * rntk_value(centers.row(j).dot(x), kernel);
  return s;
}

Vector RKHSTarget::evaluate(const Matrix& X) const { return rntk_cross(X, centers, kernel) * weights; }

RegressionSet make_rkhs_regression_set(Eigen::Index n, Eigen::Index d, const KernelConfig& kernel,
                                       Eigen::Index k_centers, double noise_sigma,
                                       std::uint64_t seed) {
  kernel.validate();
  if (k_centers < 1) throw InvalidArgument("make_rkhs_regression_set: k_centers must be >= 1");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("make_rkhs_regression_set: noise_sigma < 0");

  RKHSTarget target;
  target.kernel = kernel;
  target.centers = sample_uniform_sphere(k_centers, d, derive_seed(seed, kCenters));
  Rng wrng(derive_seed(seed, kWeights));
  target.weights.resize(k_centers);
  for (Eigen::Index j = 0; j < k_centers; ++j) target.weights[j] = wrng.normal();
  const Matrix Gz = rntk_gram(target.centers, kernel);
  const double norm = std::sqrt(target.weights.dot(Gz * target.weights));
  if (!(norm > 0.0)) throw NumericalFailure("RKHS target has zero norm");
  target.weights /= norm;
  target.rkhs_norm = std::sqrt(target.weights.dot(Gz * target.weights));

  RegressionSet out{SphereDataset{}, std::move(target)};
  auto& ds = out.data;
  ds.X = sample_uniform_sphere(n, d, derive_seed(seed, kInputs));
  ds.clean_y = out.target.evaluate(ds.X);
  ds.y = ds.clean_y;
  if (noise_sigma > 0.0) {
    Rng nrng(derive_seed(seed, kNoise));
    for (Eigen::Index i = 0; i < n; ++i) ds.y[i] += noise_sigma * nrng.normal();
  }
  ds.kind = LabelKind::regression;
  ds.seed = seed;
  ds.noise_sigma = noise_sigma;
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const SphereDataset& ds) {
  csv::Writer w(path);
  std::vector<std::string> cols;
  for (Eigen::Index k = 0; k < ds.d(); ++k) cols.push_back("x" + std::to_string(k));
  cols.emplace_back("y");
  cols.emplace_back("clean_y");
  w.header(cols);
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index k = 0; k < ds.d(); ++k) w.field(ds.X(i, k));
    w.field(ds.y[i]).field(ds.clean_y[i]);
    w.end_row();
  }
}

SphereDataset read_dataset_csv(const std::filesystem::path& path, LabelKind kind, int num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("empty dataset file");
  const auto header = csv::split_record(line);
  if (header.size() < 4 || header[header.size() - 2] != "y" || header.back() != "clean_y")
    throw InvalidArgument("dataset header must be x0,...,x{d-1},y,clean_y");
  const auto d = static_cast<Eigen::Index>(header.size() - 2);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = csv::split_record(line);
    if (static_cast<Eigen::Index>(fields.size()) != d + 2) throw InvalidArgument("ragged dataset row");
    std::vector<double> r;
    for (const auto& f : fields) r.push_back(csv::parse_double(f));
    rows.push_back(std::move(r));
  }
  SphereDataset ds;
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.X.resize(n, d);
  ds.y.resize(n);
  ds.clean_y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < d; ++k) ds.X(i, k) = r[static_cast<std::size_t>(k)];
    ds.y[i] = r[static_cast<std::size_t>(d)];
    ds.clean_y[i] = r[static_cast<std::size_t>(d + 1)];
  }
  check_unit_rows(ds.X);
  ds.kind = kind;
  ds.num_classes = num_classes;
  return ds;
}

}  // namespace rntk
