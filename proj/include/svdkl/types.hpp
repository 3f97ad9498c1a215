#pragma once

#include <Eigen/Dense>

namespace svdkl {

/// Points are stored one per row.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace svdkl
