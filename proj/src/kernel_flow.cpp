#include "rntk/kernel_flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "rntk/errors.hpp"
#include "rntk/sphere_data.hpp"

namespace rntk {

namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kPinvThreshold = 1e-12;
constexpr double kSmallExponent = 1e-8;

void check_symmetric(const Matrix& G) {
  if (G.rows() != G.cols() || G.rows() == 0) throw InvalidArgument("sym_eig: matrix must be square");
  const double scale = std::max(1.0, G.cwiseAbs().maxCoeff());
  if ((G - G.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale)
    throw InvalidArgument("sym_eig: matrix is not symmetric");
}

GramEig sorted_descending(const Vector& values, const Matrix& vectors) {
  const Eigen::Index n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return values[i] > values[j]; });
  GramEig out;
  out.n = n;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.eigenvalues[k] = values[src];
    out.eigenvectors.col(k) = vectors.col(src);
  }
  return out;
}

}  // namespace

GramEig jacobi_eig(const Matrix& G, int max_sweeps) {
  check_symmetric(G);
  const Eigen::Index n = G.rows();
  Matrix A = 0.5 * (G + G.transpose());
  Matrix V = Matrix::Identity(n, n);
  const double threshold = 1e-12 * A.norm();

  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != j) s += A(i, j) * A(i, j);
    return std::sqrt(s);
  };

  double off = off_norm();
  int sweep = 0;
  while (off > threshold) {
    if (sweep++ >= max_sweeps)
      throw NumericalFailure("jacobi_eig: no convergence after " + std::to_string(max_sweeps) +
                                 " sweeps, off-diagonal residual " + std::to_string(off),
                             off);
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- J^T A J with J the (p, q) rotation [[c, s], [-s, c]].
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        A(p, q) = 0.0;
        A(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
    off = off_norm();
  }
  return sorted_descending(A.diagonal(), V);
}

GramEig sym_eig(const Matrix& G, EigMethod method) {
  if (method == EigMethod::jacobi) return jacobi_eig(G);
  check_symmetric(G);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (G + G.transpose()));
  if (solver.info() != Eigen::Success)
    throw NumericalFailure("sym_eig: tridiagonal QR did not converge");
  GramEig eig = sorted_descending(solver.eigenvalues(), solver.eigenvectors());
  const double residual = reconstruction_error(eig, G);
  if (!(residual < 1e-10)) throw NumericalFailure("sym_eig: reconstruction residual too large", residual);
  return eig;
}

double reconstruction_error(const GramEig& eig, const Matrix& G) {
  const Matrix R = eig.eigenvectors * eig.eigenvalues.asDiagonal() * eig.eigenvectors.transpose();
  const double denom = G.norm();
  return denom > 0.0 ? (R - G).norm() / denom : (R - G).norm();
}

double orthogonality_error(const GramEig& eig) {
  const Matrix QtQ = eig.eigenvectors.transpose() * eig.eigenvectors;
  return (QtQ - Matrix::Identity(eig.n, eig.n)).norm();
}

FlowRegressor::FlowRegressor(Matrix train_X, Vector y, KernelConfig cfg)
    : train_X_(std::move(train_X)), y_(std::move(y)), cfg_(cfg) {
  if (y_.size() != train_X_.rows()) throw InvalidArgument("FlowRegressor: len(y) != rows(X)");
  gram_ = rntk_gram(train_X_, cfg);
  eig_ = sym_eig(gram_);
  qty_ = eig_.eigenvectors.transpose() * y_;
}

FlowRegressor::FlowRegressor(Matrix train_X, Vector y, Matrix gram)
    : train_X_(std::move(train_X)), y_(std::move(y)), gram_(std::move(gram)) {
  if (y_.size() != train_X_.rows() || gram_.rows() != y_.size())
    throw InvalidArgument("FlowRegressor: inconsistent sizes");
  eig_ = sym_eig(gram_);
  qty_ = eig_.eigenvectors.transpose() * y_;
}

double flow_factor(double lambda, double t, double n, double lambda_max) {
  if (std::isinf(t)) return lambda > kPinvThreshold * lambda_max ? 1.0 / lambda : 0.0;
  const double x = lambda * t / n;
  if (std::abs(x) < kSmallExponent) return t / n;
  return -std::expm1(-x) / lambda;
}

Vector FlowRegressor::coefficients(double t) const {
  if (!(t >= 0.0)) throw InvalidArgument("flow time must be >= 0");
  Vector scaled(eig_.n);
  const double nn = static_cast<double>(eig_.n);
  for (Eigen::Index i = 0; i < eig_.n; ++i)
    scaled[i] = flow_factor(eig_.eigenvalues[i], t, nn, eig_.lambda_max()) * qty_[i];
  return eig_.eigenvectors * scaled;
}

Vector FlowRegressor::predict_cross(double t, const Matrix& cross) const {
  if (cross.cols() != n()) throw InvalidArgument("predict_cross: cross kernel has wrong width");
  return cross * coefficients(t);
}

Matrix FlowRegressor::cross_kernel(const Matrix& probes) const {
  if (!cfg_) throw UnsupportedMode("regressor was built from an explicit Gram matrix");
  return rntk_cross(probes, train_X_, *cfg_);
}

Vector FlowRegressor::predict(double t, const Matrix& probes) const {
  return predict_cross(t, cross_kernel(probes));
}

Vector FlowRegressor::fitted(double t) const { return gram_ * coefficients(t); }

Vector flow_predict(const FlowRegressor& reg, double t, const Matrix& probes) {
  return reg.predict(t, probes);
}

Vector flow_gd_oracle_cross(const FlowRegressor& reg, double lr, std::int64_t steps,
                            const Matrix& cross) {
  if (!(lr > 0.0)) throw InvalidArgument("flow_gd_oracle: lr must be > 0");
  if (steps < 0) throw InvalidArgument("flow_gd_oracle: steps must be >= 0");
  const Matrix& G = reg.gram();
  const double step = lr / static_cast<double>(reg.n());
  const double limit = 1e6 * std::max(1.0, reg.y().norm());
  Vector c = Vector::Zero(reg.n());
  Vector u = Vector::Zero(reg.n());
  for (std::int64_t k = 0; k < steps; ++k) {
    c -= step * (u - reg.y());
    u.noalias() = G * c;
    const double norm = u.norm();
    if (!std::isfinite(norm) || norm > limit)
      throw Diverged("flow_gd_oracle: iterates blew up (lr too large)", k + 1);
  }
  return cross * c;
}

Vector flow_gd_oracle(const FlowRegressor& reg, double lr, std::int64_t steps, const Matrix& probes) {
  return flow_gd_oracle_cross(reg, lr, steps, reg.cross_kernel(probes));
}

double early_stop_time(std::int64_t n, int d, double c) {
  if (n < 1) throw InvalidArgument("early_stop_time: n must be >= 1");
  if (d < 2) throw InvalidArgument("early_stop_time: d must be >= 2");
  if (!(c > 0.0)) throw InvalidArgument("early_stop_time: c must be > 0");
  const double exponent = static_cast<double>(d) / (2.0 * d - 1.0);
  return c * std::pow(static_cast<double>(n), exponent);
}

RiskEstimate excess_risk_mc(const BatchFunction& predict, const BatchFunction& target, int d,
                            std::int64_t n_mc, std::uint64_t seed) {
  if (n_mc < 100) throw InvalidArgument("excess_risk_mc: n_mc must be >= 100");
  const Matrix P = sample_uniform_sphere(n_mc, d, seed);
  const Vector diff = predict(P) - target(P);
  const Vector sq = diff.array().square();
  RiskEstimate est;
  est.n_mc = n_mc;
  est.value = sq.mean();
  const double var = n_mc > 1 ? (sq.array() - est.value).square().sum() / static_cast<double>(n_mc - 1) : 0.0;
  est.std_error = std::sqrt(var / static_cast<double>(n_mc));
  return est;
}

}  // namespace rntk
