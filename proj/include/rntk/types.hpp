#pragma once

#include <Eigen/Dense>

namespace rntk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace rntk
