#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "rntk/resnet.hpp"

namespace rntk::testing {

// Dense reference gradient of the combined scalar output, written with
// explicit per-layer Jacobians and no rank-1 shortcuts.
struct DenseGrad {
  std::vector<Matrix> dW[2];
  std::vector<Matrix> dV[2];
};

inline DenseGrad dense_gradient(const MirroredNet& net, const Vector& x) {
  const double m = static_cast<double>(net.width());
  const double a = net.a();
  const int L = net.depth();
  DenseGrad g;
  for (int p = 0; p < 2; ++p) {
    const auto& P = net.branch(p);
    std::vector<Vector> alpha{P.A * x / std::sqrt(m)};
    std::vector<Vector> z;
    for (int l = 0; l < L; ++l) {
      z.push_back(std::sqrt(2.0 / m) * P.W[static_cast<std::size_t>(l)] * alpha.back());
      alpha.push_back(alpha.back() + a / std::sqrt(m) * P.V[static_cast<std::size_t>(l)] * z.back().cwiseMax(0.0));
    }
    const double sign = p == 0 ? 1.0 : -1.0;
    Vector grad_alpha = sign * std::numbers::sqrt2 / 2.0 * net.output_scale() * P.head.col(0);
    g.dW[p].resize(static_cast<std::size_t>(L));
    g.dV[p].resize(static_cast<std::size_t>(L));
    for (int l = L - 1; l >= 0; --l) {
      const auto i = static_cast<std::size_t>(l);
      const Matrix D = (z[i].array() > 0.0).cast<double>().matrix().asDiagonal();
      g.dV[p][i] = a / std::sqrt(m) * grad_alpha * z[i].cwiseMax(0.0).transpose();
      const Vector grad_z = a / std::sqrt(m) * D * P.V[i].transpose() * grad_alpha;
      g.dW[p][i] = std::sqrt(2.0 / m) * grad_z * alpha[i].transpose();
      const Matrix J = Matrix::Identity(net.width(), net.width()) +
                       a / std::sqrt(m) * P.V[i] * D * std::sqrt(2.0 / m) * P.W[i];
      grad_alpha = J.transpose() * grad_alpha;
    }
  }
  return g;
}

inline double flat_inner(const DenseGrad& u, const DenseGrad& w) {
  double s = 0.0;
  for (int p = 0; p < 2; ++p)
    for (std::size_t i = 0; i < u.dW[p].size(); ++i)
      s += u.dW[p][i].cwiseProduct(w.dW[p][i]).sum() + u.dV[p][i].cwiseProduct(w.dV[p][i]).sum();
  return s;
}

}  // namespace rntk::testing
