#include "rntk/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/students_t.hpp>

#include "rntk/errors.hpp"
#include "rntk/sphere_data.hpp"

namespace rntk {

std::int64_t multiplicity(int d, int k) {
  if (d < 2 || k < 0) throw InvalidArgument("multiplicity: need d >= 2 and k >= 0");
  if (k == 0) return 1;
  // C(k+d-3, k-1) by the multiplicative formula; every partial product is exact.
  const int top = k + d - 3;
  const int r = std::min(k - 1, d - 2);
  unsigned __int128 binom = 1;
  for (int i = 1; i <= r; ++i) {
    binom = binom * static_cast<unsigned>(top - r + i) / static_cast<unsigned>(i);
    if (binom > static_cast<unsigned __int128>(INT64_MAX)) throw DomainError("multiplicity overflow");
  }
  const unsigned __int128 n = binom * static_cast<unsigned>(2 * k + d - 2) / static_cast<unsigned>(k);
  if (n > static_cast<unsigned __int128>(INT64_MAX)) throw DomainError("multiplicity overflow");
  return static_cast<std::int64_t>(n);
}

std::vector<double> gegenbauer_all(int k_max, int d, double t) {
  if (d < 2 || k_max < 0) throw InvalidArgument("gegenbauer: need d >= 2 and k >= 0");
  std::vector<double> p(static_cast<std::size_t>(k_max) + 1);
  p[0] = 1.0;
  if (k_max >= 1) p[1] = t;
  for (int k = 1; k < k_max; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    p[kk + 1] = ((2.0 * k + d - 2.0) * t * p[kk] - k * p[kk - 1]) / (k + d - 2.0);
  }
  return p;
}

double gegenbauer(int k, int d, double t) { return gegenbauer_all(k, d, t).back(); }

QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw InvalidArgument("gauss_legendre: n must be >= 1");
  // P_n(x) and P_n'(x) by the Legendre recurrence
  auto legendre = [n](double x) {
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    return std::pair{p1, n * (x * p1 - p0) / (x * x - 1.0)};
  };
  QuadratureRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int iter = 0; iter < 100; ++iter) {
      const auto [p, dp] = legendre(x);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double dp = legendre(x).second;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const auto lo = static_cast<std::size_t>(i);
    const auto hi = static_cast<std::size_t>(n - 1 - i);
    rule.nodes[lo] = -x;
    rule.nodes[hi] = x;
    rule.weights[lo] = w;
    rule.weights[hi] = w;
  }
  if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
  return rule;
}

DecayFit fit_decay(std::span<const double> xs, std::span<const double> ys, IndexWindow window) {
  if (xs.size() != ys.size()) throw InvalidArgument("fit_decay: xs and ys differ in length");
  if (window.last >= xs.size() || window.size() < 5)
    throw InvalidArgument("fit_decay: window must hold >= 5 points inside the data");
  const auto m = static_cast<Eigen::Index>(window.size());
  Eigen::ArrayXd lx(m), ly(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto idx = window.first + static_cast<std::size_t>(i);
    if (!(xs[idx] > 0.0) || !(ys[idx] > 0.0)) throw InvalidArgument("fit_decay: values must be positive");
    lx[i] = std::log(xs[idx]);
    ly[i] = std::log(ys[idx]);
  }
  const Eigen::ArrayXd cx = lx - lx.mean();
  const Eigen::ArrayXd cy = ly - ly.mean();
  const double sxx = cx.square().sum();
  if (!(sxx > 0.0)) throw InvalidArgument("fit_decay: x values are all equal");
  DecayFit fit;
  fit.window = window;
  fit.slope = (cx * cy).sum() / sxx;
  fit.intercept = ly.mean() - fit.slope * lx.mean();
  const double ssr = (ly - fit.intercept - fit.slope * lx).square().sum();
  const auto dof = static_cast<double>(m - 2);
  fit.stderr_slope = std::sqrt(ssr / dof / sxx);
  const boost::math::students_t dist(dof);
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
  fit.lo95 = fit.slope - tq * fit.stderr_slope;
  fit.hi95 = fit.slope + tq * fit.stderr_slope;
  return fit;
}

namespace {

struct ThetaRule {
  std::vector<double> t;       // cos(theta_i)
  std::vector<double> weight;  // GL weight * (pi/2) * sin^{d-2}(theta_i)
};

ThetaRule theta_rule(int nodes, int d) {
  const QuadratureRule gl = gauss_legendre(nodes);
  ThetaRule r;
  r.t.resize(gl.nodes.size());
  r.weight.resize(gl.nodes.size());
  for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
    const double theta = 0.5 * std::numbers::pi * (gl.nodes[i] + 1.0);
    r.t[i] = std::cos(theta);
    r.weight[i] = 0.5 * std::numbers::pi * gl.weights[i] * std::pow(std::sin(theta), d - 2);
  }
  return r;
}

std::vector<double> project(const ZonalFunction& g, int d, int k_max, int nodes) {
  const ThetaRule rule = theta_rule(nodes, d);
  std::vector<double> mu(static_cast<std::size_t>(k_max) + 1, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < rule.t.size(); ++i) {
    const double gi = g(rule.t[i]) * rule.weight[i];
    z += rule.weight[i];
    const auto p = gegenbauer_all(k_max, d, rule.t[i]);
    for (std::size_t k = 0; k < mu.size(); ++k) mu[k] += gi * p[k];
  }
  for (auto& m : mu) m /= z;
  return mu;
}

}  // namespace

SpectralProfile funk_hecke_mu(const ZonalFunction& g, int d, int k_max, FunkHeckeOptions opts) {
  if (d < 2) throw InvalidArgument("funk_hecke_mu: d must be >= 2");
  if (k_max < 4) throw InvalidArgument("funk_hecke_mu: k_max must be >= 4");
  if (opts.quad_nodes == 0) opts.quad_nodes = 4 * k_max;
  if (opts.quad_nodes < 4 * k_max) throw InvalidArgument("funk_hecke_mu: quad_nodes must be >= 4 k_max");

  SpectralProfile prof;
  prof.d = d;
  prof.k_max = k_max;
  int nodes = opts.quad_nodes;
  prof.mu = project(g, d, k_max, nodes);
  while (opts.refine && nodes * 2 <= opts.max_nodes) {
    nodes *= 2;
    auto next = project(g, d, k_max, nodes);
    double change = 0.0;
    for (std::size_t k = 0; k < next.size(); ++k) change = std::max(change, std::abs(next[k] - prof.mu[k]));
    prof.mu = std::move(next);
    if (change < opts.tol) break;
  }
  prof.quad_nodes = nodes;

  prof.mult.resize(prof.mu.size());
  prof.trace_partial = 0.0;
  for (int k = 0; k <= k_max; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    prof.mult[kk] = multiplicity(d, k);
    if (prof.mu[kk] < -1e-8)
      throw NumericalFailure("funk_hecke_mu: mu_" + std::to_string(k) + " = " +
                                 std::to_string(prof.mu[kk]) + " is negative",
                             prof.mu[kk]);
    prof.trace_partial += static_cast<double>(prof.mult[kk]) * prof.mu[kk];
  }
  if (prof.trace_deficit() > 0.05)
    prof.warnings.push_back("trace deficit " + std::to_string(prof.trace_deficit()) +
                            " exceeds 0.05 at k_max = " + std::to_string(k_max));
  prof.lambda_flat = flatten_spectrum(prof);

  // Default fit windows: drop k < 8 and the top 10% of frequencies.
  const auto k_hi = static_cast<std::size_t>(std::floor(0.9 * k_max));
  if (k_hi >= 12) {
    std::vector<double> ks(prof.mu.size());
    for (std::size_t k = 0; k < ks.size(); ++k) ks[k] = static_cast<double>(k);
    const bool positive = std::all_of(prof.mu.begin() + 8, prof.mu.begin() + static_cast<long>(k_hi) + 1,
                                      [](double v) { return v > 0.0; });
    if (positive) prof.slope_mu = fit_decay(ks, prof.mu, {8, k_hi});
  }
  std::size_t j_last = 0;
  for (int k = 0; k <= static_cast<int>(k_hi); ++k) j_last += static_cast<std::size_t>(prof.mult[static_cast<std::size_t>(k)]);
  std::size_t j_first = 0;
  for (int k = 0; k < 8 && k <= k_max; ++k) j_first += static_cast<std::size_t>(prof.mult[static_cast<std::size_t>(k)]);
  if (j_last > j_first + 5 && j_last <= prof.lambda_flat.size() && prof.lambda_flat[j_last - 1] > 0.0) {
    std::vector<double> js(prof.lambda_flat.size());
    for (std::size_t j = 0; j < js.size(); ++j) js[j] = static_cast<double>(j + 1);
    prof.slope_lambda = fit_decay(js, prof.lambda_flat, {j_first, j_last - 1});
  }
  return prof;
}

SpectralProfile funk_hecke_mu(const KernelConfig& cfg, int d, int k_max, FunkHeckeOptions opts) {
  cfg.validate();
  return funk_hecke_mu([&cfg](double t) { return rntk_value(t, cfg); }, d, k_max, opts);
}

std::vector<double> flatten_spectrum(const SpectralProfile& profile) {
  std::vector<double> out;
  std::size_t total = 0;
  for (auto m : profile.mult) total += static_cast<std::size_t>(m);
  out.reserve(total);
  for (std::size_t k = 0; k < profile.mu.size(); ++k)
    out.insert(out.end(), static_cast<std::size_t>(profile.mult[k]), profile.mu[k]);
  std::stable_sort(out.begin(), out.end(), std::greater<>());
  return out;
}

double mercer_series(const SpectralProfile& profile, double t) {
  const auto p = gegenbauer_all(profile.k_max, profile.d, t);
  double s = 0.0;
  for (std::size_t k = 0; k < profile.mu.size(); ++k)
    s += static_cast<double>(profile.mult[k]) * profile.mu[k] * p[k];
  return s;
}

Vector top_scaled_eigenvalues(const Matrix& G, int q) {
  const Eigen::Index n = G.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(G / static_cast<double>(n), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalFailure("nystrom: eigensolver failed");
  const Eigen::Index count = std::min<Eigen::Index>(q, n);
  Vector top(count);
  for (Eigen::Index i = 0; i < count; ++i) top[i] = solver.eigenvalues()[n - 1 - i];
  return top;
}

Vector nystrom_check(const KernelConfig& cfg, int d, Eigen::Index n, std::uint64_t seed, int q) {
  if (n < 200) throw InvalidArgument("nystrom_check: n must be >= 200");
  const Matrix X = sample_uniform_sphere(n, d, seed);
  return top_scaled_eigenvalues(rntk_gram(X, cfg), q);
}

}  // namespace rntk
