#pragma once

#include <Eigen/Core>

// Gauss-Newton systems are H dx = -g for a cost |e + J dx|^2 with H = J^T J
// and g = J^T e.

namespace tio {

struct NormalSystem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
};

/// Square-root linear prior: cost |r + J dx|^2.
struct LinearPrior {
  Eigen::MatrixXd J;
  Eigen::VectorXd r;

  Eigen::MatrixXd information() const { return J.transpose() * J; }
  Eigen::VectorXd gradient() const { return J.transpose() * r; }
  bool empty() const { return J.rows() == 0; }
};

/// Eliminates the leading `m` variables. The eliminated block is inverted
/// through its eigen-decomposition, with eigenvalues below `floor` treated as zero.
NormalSystem schurEliminate(const NormalSystem& system, int m, double floor = 1e-8);

/// Factors H = J^T J keeping eigen-directions above `floor`, and r so that J^T r = g.
LinearPrior sqrtPrior(const NormalSystem& system, double floor = 1e-8);

/// True when symmetric to `tol` and the smallest eigenvalue is >= -tol * max(1, largest).
bool isSymmetricPsd(const Eigen::MatrixXd& H, double tol = 1e-9);

}  // namespace tio
