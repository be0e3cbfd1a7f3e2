// Squared exponential covariance with log-space gradients, second-order
// polynomial basis extension, and half-Student-t hyperparameter priors.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lgp {

struct Hyperparameters {
  double log_sigma2 = 0.0;
  Eigen::VectorXd log_lengthscales;  // one per input dimension

  static Hyperparameters zeros(int dims) {
    Hyperparameters h;
    h.log_sigma2 = 0.0;
    h.log_lengthscales = Eigen::VectorXd::Zero(dims);
    return h;
  }

  int dims() const { return static_cast<int>(log_lengthscales.size()); }

  double sigma2() const { return std::exp(log_sigma2); }
  double lengthscale(int k) const { return std::exp(log_lengthscales(k)); }

  // Packed order: [log_sigma2, log_l1, ..., log_ld].
  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(1 + dims());
    v(0) = log_sigma2;
    v.tail(dims()) = log_lengthscales;
    return v;
  }
  static Hyperparameters from_vector(const Eigen::VectorXd& v) {
    Hyperparameters h;
    h.log_sigma2 = v(0);
    h.log_lengthscales = v.tail(v.size() - 1);
    return h;
  }
};

struct SqExpCov {
  Eigen::MatrixXd K;
  // dK[0] = dK/d log sigma2, dK[1+k] = dK/d log l_k.
  std::vector<Eigen::MatrixXd> dK;
};

inline Eigen::MatrixXd sqexp_cov(const Eigen::MatrixXd& X,
                                 const Hyperparameters& theta) {
  const long m = X.rows();
  const int d = static_cast<int>(X.cols());
  const double s2 = theta.sigma2();
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(m, m);
  for (int k = 0; k < d; ++k) {
    const double inv_l2 = std::exp(-2.0 * theta.log_lengthscales(k));
    const auto xk = X.col(k);
    Q.noalias() += inv_l2 * (xk.replicate(1, m) - xk.transpose().replicate(m, 1))
                                .array()
                                .square()
                                .matrix();
  }
  return s2 * (-0.5 * Q.array()).exp().matrix();
}

inline SqExpCov sqexp_cov_and_grads(const Eigen::MatrixXd& X,
                                    const Hyperparameters& theta) {
  const long m = X.rows();
  const int d = static_cast<int>(X.cols());
  SqExpCov out;
  std::vector<Eigen::MatrixXd> sq(d);  // per-dim scaled squared distances
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(m, m);
  for (int k = 0; k < d; ++k) {
    const double inv_l2 = std::exp(-2.0 * theta.log_lengthscales(k));
    const auto xk = X.col(k);
    sq[k] = inv_l2 * (xk.replicate(1, m) - xk.transpose().replicate(m, 1))
                         .array()
                         .square()
                         .matrix();
    Q += sq[k];
  }
  out.K = theta.sigma2() * (-0.5 * Q.array()).exp().matrix();
  out.dK.resize(1 + d);
  out.dK[0] = out.K;  // d/d log sigma2
  for (int k = 0; k < d; ++k) out.dK[1 + k] = out.K.cwiseProduct(sq[k]);
  return out;
}

// One separable factor sigma2 * exp(-(x-x')^2 / (2 l^2)) on a coordinate set.
inline Eigen::MatrixXd sqexp_factor(const Eigen::VectorXd& coords, double log_l,
                                    double sigma2 = 1.0) {
  const long m = coords.size();
  const double inv_l2 = std::exp(-2.0 * log_l);
  Eigen::MatrixXd K(m, m);
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < m; ++j) {
      const double dx = coords(i) - coords(j);
      K(i, j) = sigma2 * std::exp(-0.5 * inv_l2 * dx * dx);
    }
  return K;
}

// Second-order polynomial basis: [x, x^2] in 1D, [x1, x1^2, x2, x2^2, x1*x2]
// in 2D, evaluated at (normalized) coordinates.
inline Eigen::MatrixXd basis_matrix(const Eigen::MatrixXd& X) {
  const long m = X.rows();
  if (X.cols() == 1) {
    Eigen::MatrixXd H(m, 2);
    H.col(0) = X.col(0);
    H.col(1) = X.col(0).array().square();
    return H;
  }
  if (X.cols() == 2) {
    Eigen::MatrixXd H(m, 5);
    H.col(0) = X.col(0);
    H.col(1) = X.col(0).array().square();
    H.col(2) = X.col(1);
    H.col(3) = X.col(1).array().square();
    H.col(4) = X.col(0).cwiseProduct(X.col(1));
    return H;
  }
  throw std::invalid_argument("basis_matrix: only 1 or 2 input dims supported");
}

struct BasisPrior {
  Eigen::MatrixXd H;  // m x q
  Eigen::VectorXd b;  // prior mean of the coefficients, zero
  Eigen::MatrixXd B;  // prior covariance of the coefficients
};

inline BasisPrior make_basis_prior(const Eigen::MatrixXd& X_normalized,
                                   double coeff_var = 100.0) {
  BasisPrior bp;
  bp.H = basis_matrix(X_normalized);
  const long q = bp.H.cols();
  bp.b = Eigen::VectorXd::Zero(q);
  bp.B = coeff_var * Eigen::MatrixXd::Identity(q, q);
  return bp;
}

// Effective prior covariance C = K + H B H^T + jitter*I with a cached
// Cholesky factor. Factorization failure escalates the jitter tenfold up to
// the cap before giving up.
class PriorCov {
 public:
  PriorCov() = default;
  PriorCov(Eigen::MatrixXd C, double jitter) : C_(std::move(C)) {
    const long m = C_.rows();
    const double scale = C_.diagonal().mean();
    double j = jitter;
    const double cap = 1e-2 * scale;
    for (;;) {
      Eigen::MatrixXd Cj = C_ + j * Eigen::MatrixXd::Identity(m, m);
      llt_.compute(Cj);
      if (llt_.info() == Eigen::Success) {
        C_ = std::move(Cj);
        jitter_ = j;
        return;
      }
      const double next = (j > 0.0) ? 10.0 * j : 1e-10 * scale;
      if (next > cap)
        throw std::runtime_error("prior_cov: Cholesky failed at maximum jitter");
      j = next;
    }
  }

  const Eigen::MatrixXd& dense() const { return C_; }
  double jitter() const { return jitter_; }
  long size() const { return C_.rows(); }

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const { return C_ * v; }
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const { return llt_.solve(v); }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& V) const { return llt_.solve(V); }
  double quad(const Eigen::VectorXd& v) const { return v.dot(llt_.solve(v)); }
  double logdet() const {
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }
  const Eigen::LLT<Eigen::MatrixXd>& llt() const { return llt_; }

 private:
  Eigen::MatrixXd C_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double jitter_ = 0.0;
};

inline PriorCov prior_cov(const Eigen::MatrixXd& K, const BasisPrior& basis,
                          double jitter) {
  Eigen::MatrixXd C = K;
  if (basis.H.size() > 0) {
    C.noalias() += basis.H * basis.B * basis.H.transpose();
    C = 0.5 * (C + C.transpose()).eval();  // restore exact symmetry
  }
  return PriorCov(std::move(C), jitter);
}

inline double default_jitter(double sigma2) { return 1e-8 * sigma2; }

// Half-Student-t prior on a positive scale parameter.
struct HalfStudentT {
  double nu = 1.0;
  double scale = 1.0;

  double log_density(double x) const {
    // 2 * t_nu(x / s) / s for x >= 0
    const double c = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                     0.5 * std::log(nu * M_PI) - std::log(scale);
    return std::log(2.0) + c -
           0.5 * (nu + 1.0) * std::log1p(x * x / (nu * scale * scale));
  }
  double dlog_density(double x) const {
    return -(nu + 1.0) * x / (nu * scale * scale + x * x);
  }
};

struct HyperPrior {
  HalfStudentT sigma;        // on sigma = sqrt(sigma2)
  HalfStudentT lengthscale;  // on each l_k

  // sigma prior variance read as squared scale: 10 in 1D, 1000 in 2D.
  static HyperPrior defaults(int dims) {
    HyperPrior p;
    p.sigma = {1.0, std::sqrt(dims >= 2 ? 1000.0 : 10.0)};
    p.lengthscale = {1.0, 1.0};
    return p;
  }
};

// Log prior of theta in log-parametrization (includes the change-of-variables
// Jacobian) and its gradient w.r.t. [log sigma2, log l_1..log l_d].
inline std::pair<double, Eigen::VectorXd> hyper_log_prior(
    const Hyperparameters& theta, const HyperPrior& prior) {
  const int d = theta.dims();
  Eigen::VectorXd grad(1 + d);
  const double sigma = std::exp(0.5 * theta.log_sigma2);
  // sigma = exp(t/2): |d sigma / dt| = sigma / 2
  double lp = prior.sigma.log_density(sigma) + std::log(0.5 * sigma);
  grad(0) = prior.sigma.dlog_density(sigma) * 0.5 * sigma + 0.5;
  for (int k = 0; k < d; ++k) {
    const double l = theta.lengthscale(k);
    lp += prior.lengthscale.log_density(l) + theta.log_lengthscales(k);
    grad(1 + k) = prior.lengthscale.dlog_density(l) * l + 1.0;
  }
  return {lp, grad};
}

}  // namespace lgp
