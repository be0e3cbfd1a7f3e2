#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace lgp {

struct CgResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;
};

// Conjugate gradients for a symmetric positive definite operator given as a
// callable v -> A v. Relative residual tolerance.
template <class Apply>
CgResult conjugate_gradient(const Apply& apply, const Eigen::VectorXd& b,
                            double tol = 1e-10, int max_iter = 1000) {
  CgResult out;
  out.x = Eigen::VectorXd::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) return out;
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd Ap = apply(p);
    const double pAp = p.dot(Ap);
    if (pAp <= 0.0)
      throw std::runtime_error("conjugate_gradient: operator not positive definite");
    const double alpha = rs / pAp;
    out.x += alpha * p;
    r -= alpha * Ap;
    const double rs_new = r.squaredNorm();
    out.iterations = it + 1;
    out.residual = std::sqrt(rs_new) / bnorm;
    if (out.residual <= tol) return out;
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  return out;
}

}  // namespace lgp
