#include "tio/marginalization.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace tio {

NormalSystem schurEliminate(const NormalSystem& system, int m, double floor) {
  const int n = static_cast<int>(system.H.rows());
  if (system.H.cols() != n || system.g.size() != n || m < 0 || m > n)
    throw std::invalid_argument("schurEliminate: inconsistent system dimensions");
  const int k = n - m;
  const Eigen::MatrixXd Hmm = 0.5 * (system.H.topLeftCorner(m, m) + system.H.topLeftCorner(m, m).transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hmm);
  const Eigen::VectorXd inv = (es.eigenvalues().array() > floor).select(es.eigenvalues().cwiseInverse(), 0.0);
  const Eigen::MatrixXd Hmm_inv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();

  const Eigen::MatrixXd Hkm = system.H.bottomLeftCorner(k, m);
  NormalSystem out;
  out.H = system.H.bottomRightCorner(k, k) - Hkm * Hmm_inv * Hkm.transpose();
  out.H = 0.5 * (out.H + out.H.transpose());
  out.g = system.g.tail(k) - Hkm * Hmm_inv * system.g.head(m);
  return out;
}

LinearPrior sqrtPrior(const NormalSystem& system, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (system.H + system.H.transpose()));
  const Eigen::VectorXd& s = es.eigenvalues();
  const Eigen::MatrixXd& V = es.eigenvectors();
  int kept = 0;
  for (int i = 0; i < s.size(); ++i) kept += s(i) > floor;
  LinearPrior p;
  p.J.resize(kept, s.size());
  p.r.resize(kept);
  int row = 0;
  for (int i = 0; i < s.size(); ++i) {
    if (s(i) <= floor) continue;
    const double root = std::sqrt(s(i));
    p.J.row(row) = root * V.col(i).transpose();
    p.r(row) = V.col(i).dot(system.g) / root;
    ++row;
  }
  return p;
}

bool isSymmetricPsd(const Eigen::MatrixXd& H, double tol) {
  if (H.rows() != H.cols()) return false;
  if (H.size() == 0) return true;
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol * std::max(1.0, es.eigenvalues().maxCoeff());
}

}  // namespace tio
