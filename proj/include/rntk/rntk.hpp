#pragma once

#include <filesystem>
#include <vector>

#include "rntk/types.hpp"

namespace rntk {

/// Depth L and residual scale a shared by the analytic kernel and the network.
struct KernelConfig {
  int depth = 2;
  double a = 0.5;

  /// Throws InvalidArgument unless depth >= 2 and 0 < a < 1.
  void validate() const;

  /// C = 1 / (2 L (1 + a^2)^(L-1)), the factor that makes r(x, x) = 1.
  double normalizer() const;

  bool operator==(const KernelConfig&) const = default;
};

/// Clamp a dot product of unit vectors into [-1, 1]. Values outside by more
/// than 1e-9 raise DomainError.
double clamp_inner(double u);

double kappa0(double u);
double kappa1(double u);

/// Full recursion state for one inner product.
struct KernelTrace {
  double u = 0.0;
  std::vector<double> K;  // K_0 .. K_{L-1}
  std::vector<double> B;  // B_2 .. B_{L+1}
  double value = 0.0;

  double k_at(int l) const { return K.at(static_cast<std::size_t>(l)); }
  double b_at(int l) const { return B.at(static_cast<std::size_t>(l - 2)); }
};

KernelTrace rntk_trace(double u, const KernelConfig& cfg);

/// Value-only entry point; same arithmetic as rntk_trace without retaining it.
double rntk_value(double u, const KernelConfig& cfg);

class UnitVector;

KernelTrace rntk_eval(const UnitVector& x, const UnitVector& x2, const KernelConfig& cfg);

/// Gram matrix r(X, X) over the rows of X. Only the upper triangle is
/// evaluated; the lower triangle is a mirror copy.
Matrix rntk_gram(const Matrix& X, const KernelConfig& cfg);

/// Cross kernel r(P, X): rows index P, columns index X.
Matrix rntk_cross(const Matrix& P, const Matrix& X, const KernelConfig& cfg);

/// Rows must be unit-norm within 1e-9.
void check_unit_rows(const Matrix& X, double tol = 1e-9);

// Gram export. Binary layout: "RNTKGRAM", u32 n, u32 reserved (0), then n*n
// little-endian f64 values, row-major.
void write_gram_csv(const std::filesystem::path& path, const Matrix& G);
void write_gram_binary(const std::filesystem::path& path, const Matrix& G);
Matrix read_gram_binary(const std::filesystem::path& path);

}  // namespace rntk
