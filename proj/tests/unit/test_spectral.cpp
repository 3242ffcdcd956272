#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "rntk/errors.hpp"
#include "rntk/spectral.hpp"

using namespace rntk;

TEST_CASE("harmonic multiplicities") {
  CHECK(multiplicity(3, 0) == 1);
  for (int k = 1; k < 40; ++k) CHECK(multiplicity(3, k) == 2 * k + 1);
  for (int k = 1; k < 40; ++k) CHECK(multiplicity(2, k) == 2);
  // degree-2 harmonics in 4 variables: 10 quadratics minus the one trace constraint
  CHECK(multiplicity(4, 2) == 9);
  CHECK(multiplicity(4, 3) == 16);
  CHECK(multiplicity(5, 2) == 14);
  CHECK_THROWS_AS(multiplicity(1, 2), InvalidArgument);
  CHECK_THROWS_AS(multiplicity(3, -1), InvalidArgument);
}

TEST_CASE("Gegenbauer normalization and special cases") {
  for (int d : {2, 3, 4, 7})
    for (int k = 0; k <= 30; ++k) CHECK(gegenbauer(k, d, 1.0) == doctest::Approx(1.0).epsilon(1e-13));
  // Legendre for d = 3, Chebyshev for d = 2
  const double t = 0.37;
  CHECK(gegenbauer(2, 3, t) == doctest::Approx(0.5 * (3 * t * t - 1)).epsilon(1e-15));
  CHECK(gegenbauer(3, 3, t) == doctest::Approx(0.5 * (5 * t * t * t - 3 * t)).epsilon(1e-15));
  for (int k = 0; k < 10; ++k) CHECK(gegenbauer(k, 2, t) == doctest::Approx(std::cos(k * std::acos(t))).epsilon(1e-13));
}

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
  const auto rule = gauss_legendre(12);
  CHECK(std::accumulate(rule.weights.begin(), rule.weights.end(), 0.0) == doctest::Approx(2.0).epsilon(1e-15));
  for (int p = 0; p <= 23; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * std::pow(rule.nodes[i], p);
    const double exact = p % 2 ? 0.0 : 2.0 / (p + 1);
    CAPTURE(p);
    CHECK(std::abs(s - exact) < 1e-14);
  }
}

TEST_CASE("Gegenbauer orthogonality under the projection quadrature") {
  // Projecting g = P_j gives mu_k = delta_jk / N(d, j).
  for (int d : {2, 3, 4, 5}) {
    for (int j = 0; j <= 20; ++j) {
      const auto prof = funk_hecke_mu([j, d](double t) { return gegenbauer(j, d, t); }, d, 20,
                                      FunkHeckeOptions{.refine = false});
      for (int k = 0; k <= 20; ++k) {
        const double expected = k == j ? 1.0 / static_cast<double>(multiplicity(d, j)) : 0.0;
        CAPTURE(d);
        CAPTURE(j);
        CAPTURE(k);
        CHECK(std::abs(prof.mu[static_cast<std::size_t>(k)] - expected) < 1e-10);
      }
    }
  }
}

TEST_CASE("projection test hooks") {
  SUBCASE("constant kernel") {
    const auto prof = funk_hecke_mu([](double) { return 1.0; }, 3, 16);
    CHECK(std::abs(prof.mu[0] - 1.0) < 1e-10);
    for (std::size_t k = 1; k < prof.mu.size(); ++k) CHECK(std::abs(prof.mu[k]) < 1e-10);
    const auto flat = flatten_spectrum(prof);
    CHECK(flat.size() == 17u * 17u);
    CHECK(flat[0] == doctest::Approx(1.0));
    CHECK(std::abs(flat[1]) < 1e-10);
  }
  SUBCASE("linear kernel") {
    const auto prof = funk_hecke_mu([](double t) { return t; }, 3, 16);
    for (std::size_t k = 0; k < prof.mu.size(); ++k)
      CHECK(std::abs(prof.mu[k] - (k == 1 ? 1.0 / 3.0 : 0.0)) < 1e-10);
    CHECK(prof.trace_partial == doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("argument checks") {
    CHECK_THROWS_AS(funk_hecke_mu([](double) { return 1.0; }, 3, 3), InvalidArgument);
    CHECK_THROWS_AS(funk_hecke_mu([](double) { return 1.0; }, 3, 8, FunkHeckeOptions{.quad_nodes = 16}),
                    InvalidArgument);
    CHECK_THROWS_AS(funk_hecke_mu([](double t) { return -std::abs(t); }, 3, 8), NumericalFailure);
  }
}

TEST_CASE("flattening") {
  SpectralProfile prof;
  prof.d = 3;
  prof.k_max = 1;
  prof.mu = {1.0, 0.1};
  prof.mult = {1, 3};
  const auto flat = flatten_spectrum(prof);
  REQUIRE(flat.size() == 4);
  CHECK(flat == std::vector<double>{1.0, 0.1, 0.1, 0.1});

  prof.mu = {0.2, 0.3};
  CHECK(flatten_spectrum(prof) == std::vector<double>{0.3, 0.3, 0.3, 0.2});
}

TEST_CASE("decay fits") {
  std::vector<double> xs, ys, ys3;
  for (int i = 1; i <= 40; ++i) {
    xs.push_back(i);
    ys.push_back(std::pow(i, -2.0));
    ys3.push_back(7.5 * std::pow(i, -3.0));
  }
  const auto fit = fit_decay(xs, ys, {0, 39});
  CHECK(std::abs(fit.slope + 2.0) < 1e-10);
  CHECK(fit.lo95 <= fit.slope);
  CHECK(fit.hi95 >= fit.slope);
  const auto fit3 = fit_decay(xs, ys3, {4, 30});
  CHECK(std::abs(fit3.slope + 3.0) < 1e-10);
  CHECK(std::exp(fit3.intercept) == doctest::Approx(7.5).epsilon(1e-9));

  ys[10] = 0.0;
  CHECK_THROWS_AS(fit_decay(xs, ys, {0, 39}), InvalidArgument);
  CHECK_THROWS_AS(fit_decay(xs, ys3, {0, 3}), InvalidArgument);
}

TEST_CASE("kernel spectrum") {
  const KernelConfig cfg{2, 0.5};
  const auto prof = funk_hecke_mu(cfg, 3, 64);
  CHECK(prof.warnings.empty());
  CHECK(prof.trace_partial >= 0.95);
  CHECK(prof.trace_partial <= 1.0 + 1e-6);
  for (double m : prof.mu) CHECK(m >= -1e-10);
  CHECK(std::is_sorted(prof.lambda_flat.rbegin(), prof.lambda_flat.rend()));

  std::vector<double> ks(prof.mu.size());
  std::iota(ks.begin(), ks.end(), 0.0);
  const auto mu_fit = fit_decay(ks, prof.mu, {8, 48});
  CHECK(mu_fit.slope >= -3.6);
  CHECK(mu_fit.slope <= -2.4);

  std::vector<double> js(prof.lambda_flat.size());
  std::iota(js.begin(), js.end(), 1.0);
  const auto lam_fit = fit_decay(js, prof.lambda_flat, {49, 1999});
  CHECK(lam_fit.slope >= -1.9);
  CHECK(lam_fit.slope <= -1.1);

  REQUIRE(prof.slope_mu.has_value());
  REQUIRE(prof.slope_lambda.has_value());

  // truncated Mercer series against the kernel, away from t = 1
  double worst = 0.0;
  for (int i = 0; i <= 190; ++i) {
    const double t = -1.0 + i * 0.01;
    worst = std::max(worst, std::abs(mercer_series(prof, t) - rntk_value(t, cfg)));
  }
  CHECK(worst < 0.05);

  // the trace grows with k_max
  const auto coarse = funk_hecke_mu(cfg, 3, 16);
  CHECK(coarse.trace_partial < prof.trace_partial);
}

TEST_CASE("Gram spectrum tracks the operator spectrum") {
  const KernelConfig cfg{2, 0.5};
  const auto prof = funk_hecke_mu(cfg, 3, 32);
  std::vector<double> rel_err;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Vector top = nystrom_check(cfg, 3, 1000, seed);
    REQUIRE(top.size() == 20);
    double worst = 0.0;
    for (int j = 0; j < 10; ++j)
      worst = std::max(worst, std::abs(top[j] - prof.lambda_flat[static_cast<std::size_t>(j)]) /
                                  prof.lambda_flat[static_cast<std::size_t>(j)]);
    rel_err.push_back(worst);
  }
  std::sort(rel_err.begin(), rel_err.end());
  CHECK(rel_err[2] < 0.25);
  CHECK_THROWS_AS(nystrom_check(cfg, 3, 100, 1), InvalidArgument);
}
