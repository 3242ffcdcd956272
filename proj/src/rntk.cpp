#include "rntk/rntk.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "rntk/csv.hpp"
#include "rntk/errors.hpp"
#include "rntk/sphere_data.hpp"

namespace rntk {

namespace {

constexpr double kClampTol = 1e-9;
constexpr char kGramMagic[8] = {'R', 'N', 'T', 'K', 'G', 'R', 'A', 'M'};

static_assert(std::endian::native == std::endian::little,
              "binary exports assume a little-endian host");

// A normalized correlation rho together with its gap 1 - rho. kappa0 has an
// infinite slope at rho = 1, so near the diagonal the angle must come from the
// gap (carried through its own recursion) rather than from acos of a rounded rho.
struct Corr {
  double rho;
  double gap;

  double angle() const { return rho > 0.0 ? 2.0 * std::asin(std::sqrt(0.5 * gap)) : std::acos(rho); }
};

double kappa0_of(double theta) { return 1.0 - theta / std::numbers::pi; }

double kappa1_of(const Corr& c, double theta) {
  return (c.rho * (std::numbers::pi - theta) + std::sqrt(c.gap * (2.0 - c.gap))) / std::numbers::pi;
}

// 1 - kappa1 = (gap (pi - theta) + theta - sin theta) / pi, without cancellation.
double one_minus_kappa1_of(const Corr& c, double theta) {
  double theta_minus_sin;
  if (theta < 1e-2) {
    const double t2 = theta * theta;
    theta_minus_sin = theta * t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)));
  } else {
    theta_minus_sin = theta - std::sin(theta);
  }
  return (c.gap * (std::numbers::pi - theta) + theta_minus_sin) / std::numbers::pi;
}

Corr clamp_corr(double rho, double gap) {
  if (rho >= 1.0 || gap <= 0.0) return {1.0, 0.0};
  if (rho <= -1.0 || gap >= 2.0) return {-1.0, 2.0};
  return {rho, gap};
}

// Shared core of rntk_trace / rntk_value. The K recursion uses the
// (1 + a^2)^(l-1) coefficient; that is the only choice under which
// K_l(x, x) = (1 + a^2)^l and r(x, x) = 1.
template <bool kKeepTrace>
double evaluate(double u, const KernelConfig& cfg, KernelTrace* trace) {
  const int L = cfg.depth;
  const double a2 = cfg.a * cfg.a;
  const double growth = 1.0 + a2;

  // Per layer l = 0..L-1: K_l, the correlation K_l / (1+a^2)^l with its gap
  // D_l / (1+a^2)^l where D_l = (1+a^2)^l - K_l, and the angle acos(rho_l).
  struct Layer {
    double K;
    Corr corr;
    double theta;
  };
  Layer small[16];
  std::vector<Layer> big;
  Layer* layer = small;
  if (L > 16) {
    big.resize(static_cast<std::size_t>(L));
    layer = big.data();
  }

  double D = 1.0 - u;
  layer[0].K = u;
  layer[0].corr = clamp_corr(u, D);
  layer[0].theta = layer[0].corr.angle();
  double scale = 1.0;  // (1 + a^2)^(l-1)
  for (int l = 1; l < L; ++l) {
    const Layer& prev = layer[l - 1];
    Layer& cur = layer[l];
    cur.K = prev.K + a2 * scale * kappa1_of(prev.corr, prev.theta);
    D += a2 * scale * one_minus_kappa1_of(prev.corr, prev.theta);
    scale *= growth;
    cur.corr = clamp_corr(cur.K / scale, D / scale);
    cur.theta = cur.corr.angle();
  }

  // Backward B recursion fused with the layer sum: B_{L+1} = 1,
  // B_l = B_{l+1} (1 + a^2 kappa0(rho_{l-1})).
  double B = 1.0;
  double total = 0.0;
  if constexpr (kKeepTrace) trace->B.assign(static_cast<std::size_t>(L), 0.0);
  double layer_scale = std::pow(growth, L - 1);
  for (int l = L; l >= 1; --l) {
    if constexpr (kKeepTrace) trace->B[static_cast<std::size_t>(l - 1)] = B;  // B_{l+1}
    const Layer& cur = layer[l - 1];
    const double k0 = kappa0_of(cur.theta);
    total += B * (layer_scale * kappa1_of(cur.corr, cur.theta) + cur.K * k0);
    B *= 1.0 + a2 * k0;
    layer_scale /= growth;
  }

  const double value = cfg.normalizer() * total;
  if constexpr (kKeepTrace) {
    trace->u = u;
    trace->K.resize(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) trace->K[static_cast<std::size_t>(l)] = layer[l].K;
    trace->value = value;
  }
  return value;
}

// Identical unit vectors have inner product exactly 1. The rounded dot product
// can land 1e-16 short of it, which the sqrt(1 - u^2) term in kappa1 inflates
// to ~1e-9 in r.
template <typename A, typename B>
double unit_inner(const A& x, const B& y, double dot) {
  if (dot > 1.0 - 1e-12 && x == y) return 1.0;
  return dot;
}

}  // namespace

void KernelConfig::validate() const {
  if (depth < 2) throw InvalidArgument("KernelConfig: depth L must be >= 2");
  if (!(a > 0.0 && a < 1.0)) throw InvalidArgument("KernelConfig: residual scale a must be in (0,1)");
}

double KernelConfig::normalizer() const {
  return 1.0 / (2.0 * depth * std::pow(1.0 + a * a, depth - 1));
}

double clamp_inner(double u) {
  if (!(std::abs(u) <= 1.0 + kClampTol))
    throw DomainError("inner product outside [-1, 1]: " + std::to_string(u));
  return std::min(1.0, std::max(-1.0, u));
}

double kappa0(double u) {
  u = clamp_inner(u);
  return (std::numbers::pi - std::acos(u)) / std::numbers::pi;
}

double kappa1(double u) {
  u = clamp_inner(u);
  return (u * (std::numbers::pi - std::acos(u)) + std::sqrt(1.0 - u * u)) / std::numbers::pi;
}

KernelTrace rntk_trace(double u, const KernelConfig& cfg) {
  cfg.validate();
  KernelTrace trace;
  evaluate<true>(clamp_inner(u), cfg, &trace);
  return trace;
}

double rntk_value(double u, const KernelConfig& cfg) {
  cfg.validate();
  return evaluate<false>(clamp_inner(u), cfg, nullptr);
}

KernelTrace rntk_eval(const UnitVector& x, const UnitVector& x2, const KernelConfig& cfg) {
  if (x.dim() != x2.dim()) throw InvalidArgument("rntk_eval: dimension mismatch");
  return rntk_trace(unit_inner(x.coords(), x2.coords(), x.coords().dot(x2.coords())), cfg);
}

void check_unit_rows(const Matrix& X, double tol) {
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double norm = X.row(i).norm();
    if (!(std::abs(norm - 1.0) <= tol))
      throw InvalidArgument("row " + std::to_string(i) + " is not unit-norm (" +
                            std::to_string(norm) + ")");
  }
}

Matrix rntk_gram(const Matrix& X, const KernelConfig& cfg) {
  cfg.validate();
  check_unit_rows(X);
  const Eigen::Index n = X.rows();
  Matrix inner = X * X.transpose();
  Matrix G(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      G(i, j) = rntk_value(inner(i, j), cfg);
      G(j, i) = G(i, j);
    }
    G(j, j) = rntk_value(1.0, cfg);
  }
  return G;
}

Matrix rntk_cross(const Matrix& P, const Matrix& X, const KernelConfig& cfg) {
  cfg.validate();
  if (P.cols() != X.cols()) throw InvalidArgument("rntk_cross: dimension mismatch");
  check_unit_rows(P);
  check_unit_rows(X);
  const Matrix inner = P * X.transpose();
  Matrix out(P.rows(), X.rows());
  for (Eigen::Index j = 0; j < X.rows(); ++j)
    for (Eigen::Index i = 0; i < P.rows(); ++i)
      out(i, j) = rntk_value(unit_inner(P.row(i), X.row(j), inner(i, j)), cfg);
  return out;
}

void write_gram_csv(const std::filesystem::path& path, const Matrix& G) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open " + path.string());
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    for (Eigen::Index j = 0; j < G.cols(); ++j) {
      if (j) out << ',';
      out << csv::format_double(G(i, j));
    }
    out << '\n';
  }
}

void write_gram_binary(const std::filesystem::path& path, const Matrix& G) {
  if (G.rows() != G.cols()) throw InvalidArgument("gram matrix must be square");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open " + path.string());
  const auto n = static_cast<std::uint32_t>(G.rows());
  const std::uint32_t reserved = 0;
  out.write(kGramMagic, sizeof kGramMagic);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(&reserved), sizeof reserved);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = G;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(sizeof(double) * rm.size()));
}

Matrix read_gram_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  char magic[8];
  std::uint32_t n = 0, reserved = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  in.read(reinterpret_cast<char*>(&reserved), sizeof reserved);
  if (!in || std::memcmp(magic, kGramMagic, sizeof magic) != 0)
    throw InvalidArgument("not an RNTKGRAM file: " + path.string());
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(n, n);
  in.read(reinterpret_cast<char*>(rm.data()),
          static_cast<std::streamsize>(sizeof(double) * rm.size()));
  if (!in) throw InvalidArgument("truncated RNTKGRAM file: " + path.string());
  return rm;
}

}  // namespace rntk
