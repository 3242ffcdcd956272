#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rntk/rntk.hpp"
#include "rntk/types.hpp"

namespace rntk {

/// Number of linearly independent spherical harmonics of degree k on S^{d-1}:
/// N(d,0) = 1, N(d,k) = ((2k+d-2)/k) C(k+d-3, k-1).
std::int64_t multiplicity(int d, int k);

/// Gegenbauer polynomial of degree k and index (d-2)/2, normalized so that
/// P_{k,d}(1) = 1 (Legendre for d = 3, Chebyshev for d = 2).
double gegenbauer(int k, int d, double t);
/// P_{0,d}(t) .. P_{k_max,d}(t) by the three-term recurrence.
std::vector<double> gegenbauer_all(int k_max, int d, double t);

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss–Legendre rule on [-1, 1] (Newton iteration on P_n).
QuadratureRule gauss_legendre(int n);

struct IndexWindow {
  std::size_t first = 0;  // inclusive
  std::size_t last = 0;   // inclusive
  std::size_t size() const { return last >= first ? last - first + 1 : 0; }
};

struct DecayFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  IndexWindow window;
};

/// Least squares of log y on log x over the window.
DecayFit fit_decay(std::span<const double> xs, std::span<const double> ys, IndexWindow window);

struct SpectralProfile {
  int d = 3;
  int k_max = 0;
  int quad_nodes = 0;  // node count actually used after refinement
  std::vector<double> mu;                // mu_0 .. mu_{k_max}
  std::vector<std::int64_t> mult;        // N(d, k)
  std::vector<double> lambda_flat;       // nonincreasing
  double trace_partial = 0.0;            // sum_k N(d,k) mu_k
  std::optional<DecayFit> slope_mu;      // mu_k vs k
  std::optional<DecayFit> slope_lambda;  // lambda_j vs j
  std::vector<std::string> warnings;

  double trace_deficit() const { return 1.0 - trace_partial; }
};

using ZonalFunction = std::function<double(double)>;

struct FunkHeckeOptions {
  int quad_nodes = 0;          // 0 selects 4 * k_max
  bool refine = true;          // double nodes until max |d mu_k| < tol
  double tol = 1e-8;
  int max_nodes = 8192;
};

/// Per-frequency Mercer eigenvalues of a zonal kernel g(<x, x'>) under the
/// uniform probability measure on S^{d-1}:
///   mu_k = Z_d int_{-1}^{1} g(t) P_{k,d}(t) (1 - t^2)^{(d-3)/2} dt,
/// with Z_d the reciprocal of the same quadrature applied to g = 1.
/// The integral is evaluated in t = cos(theta) on [0, pi] with Gauss–Legendre
/// nodes and the weight sin^{d-2}(theta) folded into the integrand.
SpectralProfile funk_hecke_mu(const ZonalFunction& g, int d, int k_max, FunkHeckeOptions opts = {});
SpectralProfile funk_hecke_mu(const KernelConfig& cfg, int d, int k_max, FunkHeckeOptions opts = {});

/// Repeats every mu_k exactly N(d,k) times and sorts nonincreasing.
std::vector<double> flatten_spectrum(const SpectralProfile& profile);

/// Truncated Mercer series sum_k N(d,k) mu_k P_{k,d}(t).
double mercer_series(const SpectralProfile& profile, double t);

/// Top-q eigenvalues of G / n, nonincreasing.
Vector top_scaled_eigenvalues(const Matrix& G, int q);

/// Top-q eigenvalues of r(X, X) / n for n uniform points on S^{d-1}.
Vector nystrom_check(const KernelConfig& cfg, int d, Eigen::Index n, std::uint64_t seed, int q = 20);

}  // namespace rntk
