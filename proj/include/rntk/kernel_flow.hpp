#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>

#include "rntk/rntk.hpp"
#include "rntk/types.hpp"

namespace rntk {

/// Symmetric eigendecomposition G = Q diag(lambda) Q^T, eigenvalues sorted
/// nonincreasing.
struct GramEig {
  Vector eigenvalues;
  Matrix eigenvectors;
  Eigen::Index n = 0;
  double jitter_used = 0.0;

  double lambda_max() const { return eigenvalues[0]; }
  double lambda_min() const { return eigenvalues[n - 1]; }
};

enum class EigMethod {
  tridiagonal_qr,  // Householder tridiagonalization + implicit QR (Eigen)
  jacobi,          // cyclic Jacobi rotations
};

GramEig sym_eig(const Matrix& G, EigMethod method = EigMethod::tridiagonal_qr);

/// Cyclic Jacobi: sweeps until the off-diagonal Frobenius norm drops below
/// 1e-12 ||G||_F. Throws NumericalFailure after max_sweeps.
GramEig jacobi_eig(const Matrix& G, int max_sweeps = 100);

double reconstruction_error(const GramEig& eig, const Matrix& G);  // relative Frobenius
double orthogonality_error(const GramEig& eig);                    // ||Q^T Q - I||_F

inline constexpr double kInfiniteTime = std::numeric_limits<double>::infinity();

/// Closed-form gradient-flow kernel regression started from f_0 = 0:
///   f_t(x) = r(x, X) r(X,X)^{-1} (I - exp(-r(X,X) t / n)) y,
/// evaluated through the eigendecomposition of r(X, X).
class FlowRegressor {
 public:
  FlowRegressor(Matrix train_X, Vector y, KernelConfig cfg);
  /// Uses a caller-supplied Gram matrix (e.g. a test kernel). predict()
  /// then needs the cross kernel from the caller too.
  FlowRegressor(Matrix train_X, Vector y, Matrix gram);

  const Matrix& train_X() const noexcept { return train_X_; }
  const Vector& y() const noexcept { return y_; }
  const GramEig& eig() const noexcept { return eig_; }
  const Matrix& gram() const noexcept { return gram_; }
  Eigen::Index n() const noexcept { return train_X_.rows(); }

  /// Representer coefficients c(t) with f_t(x) = r(x, X) c(t).
  Vector coefficients(double t) const;

  /// r(probes, X); requires the analytic-kernel constructor.
  Matrix cross_kernel(const Matrix& probes) const;

  /// Predictions at probe rows (requires the analytic-kernel constructor).
  Vector predict(double t, const Matrix& probes) const;
  /// Predictions given the k x n cross kernel r(probes, X).
  Vector predict_cross(double t, const Matrix& cross) const;
  /// f_t at the training inputs.
  Vector fitted(double t) const;

 private:
  Matrix train_X_;
  Vector y_;
  std::optional<KernelConfig> cfg_;
  Matrix gram_;
  GramEig eig_;
  Vector qty_;  // Q^T y
};

/// (1 - exp(-lambda t / n)) / lambda with its limits: t/n when lambda t/n < 1e-8,
/// and at t = inf either 1/lambda or 0 below the pseudo-inverse threshold.
double flow_factor(double lambda, double t, double n, double lambda_max);

Vector flow_predict(const FlowRegressor& reg, double t, const Matrix& probes);

/// Explicit-Euler kernel gradient descent in function space:
/// u <- u - (lr/n) G (u - y) from u = 0, transported to probes through the
/// representer coefficients. Throws Diverged on blow-up.
Vector flow_gd_oracle(const FlowRegressor& reg, double lr, std::int64_t steps, const Matrix& probes);
Vector flow_gd_oracle_cross(const FlowRegressor& reg, double lr, std::int64_t steps,
                            const Matrix& cross);

/// t* = c n^{d/(2d-1)}.
double early_stop_time(std::int64_t n, int d, double c);

struct RiskEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t n_mc = 0;
};

using BatchFunction = std::function<Vector(const Matrix&)>;

/// Monte Carlo estimate of the excess risk E = int (f - f*)^2 dmu over the
/// uniform measure on S^{d-1}.
RiskEstimate excess_risk_mc(const BatchFunction& predict, const BatchFunction& target, int d,
                            std::int64_t n_mc, std::uint64_t seed);

}  // namespace rntk
