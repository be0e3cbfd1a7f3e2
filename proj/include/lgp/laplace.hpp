// Laplace approximation for the latent grid posterior: damped Newton mode
// finding via the stabilized update f_new = C (I - R (I + R^T C R)^-1 R^T C) v,
// the approximate log marginal likelihood, and its gradients with respect to
// the covariance hyperparameters.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "lgp/kernel.hpp"
#include "lgp/likelihood.hpp"
#include "lgp/linalg.hpp"

namespace lgp {

struct NewtonOptions {
  int max_iter = 100;
  double obj_tol = 1e-10;
  double grad_tol = 1e-6;
  double cg_tol = 1e-10;
  int cg_max_iter = 1000;
  Eigen::VectorXd f0;  // optional initial point (zero when empty)
  Eigen::VectorXd a0;  // C^{-1} f0, required when f0 is nonzero
};

template <class L>
struct ModeResult {
  Eigen::VectorXd f_hat;
  Eigen::VectorXd a;  // C^{-1} f_hat, tracked through the iteration
  typename L::State state;
  double objective = 0.0;    // log posterior up to constants
  double stationarity = 0.0; // sup norm of the log-posterior gradient
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

namespace detail {

// One Newton pass shared by the dense and CG paths; `inner_solve` solves
// (I + R^T C R) z = rhs at the current likelihood state.
template <class L, class CApply, class InnerSolve>
ModeResult<L> newton_iterate(const CApply& C_apply, const L& lik,
                             const InnerSolve& inner_solve,
                             const NewtonOptions& opts) {
  const long m = lik.size();
  ModeResult<L> res;
  if (opts.f0.size() > 0) {
    if (opts.a0.size() != opts.f0.size())
      throw std::invalid_argument("newton: warm start requires both f0 and a0");
    res.f_hat = opts.f0;
    res.a = opts.a0;
  } else {
    res.f_hat = Eigen::VectorXd::Zero(m);
    res.a = Eigen::VectorXd::Zero(m);
  }
  res.state = lik.eval(res.f_hat);
  res.objective = -0.5 * res.f_hat.dot(res.a) + res.state.loglik;
  res.objective_trace.push_back(res.objective);

  for (int it = 0; it < opts.max_iter; ++it) {
    res.iterations = it + 1;
    const Eigen::VectorXd v =
        lik.apply_W(res.state, res.f_hat) + res.state.grad;
    const Eigen::VectorXd Cv = C_apply(v);
    const Eigen::VectorXd z = inner_solve(res.state, lik.apply_Rt(res.state, Cv));
    const Eigen::VectorXd a_new = v - lik.apply_R(res.state, z);
    const Eigen::VectorXd f_new = C_apply(a_new);

    // Step halving keeps the log posterior non-decreasing.
    const Eigen::VectorXd df = f_new - res.f_hat;
    const Eigen::VectorXd da = a_new - res.a;
    double step = 1.0;
    double best_obj = res.objective;
    Eigen::VectorXd f_try, a_try;
    typename L::State state_try;
    bool improved = false;
    for (int h = 0; h < 40; ++h) {
      f_try = res.f_hat + step * df;
      a_try = res.a + step * da;
      state_try = lik.eval(f_try);
      const double obj = -0.5 * f_try.dot(a_try) + state_try.loglik;
      if (std::isfinite(obj) && obj >= best_obj) {
        improved = true;
        best_obj = obj;
        break;
      }
      step *= 0.5;
    }
    const double delta = improved ? best_obj - res.objective : 0.0;
    if (improved) {
      res.f_hat = f_try;
      res.a = a_try;
      res.state = state_try;
      res.objective = best_obj;
      res.objective_trace.push_back(best_obj);
    }
    res.stationarity = (res.state.grad - res.a).template lpNorm<Eigen::Infinity>();
    if (res.stationarity <= opts.grad_tol && delta <= opts.obj_tol) {
      res.converged = true;
      return res;
    }
    if (!improved) break;  // no ascent direction left at this accuracy
  }
  res.stationarity = (res.state.grad - res.a).template lpNorm<Eigen::Infinity>();
  if (res.stationarity <= opts.grad_tol) {
    res.converged = true;
    return res;
  }
  throw std::runtime_error("find_mode: Newton did not converge");
}

}  // namespace detail

// Dense path: the inner m x m system is formed through the structure of R and
// solved by Cholesky factorization.
template <class L>
ModeResult<L> find_mode_dense(const PriorCov& C, const L& lik,
                              const NewtonOptions& opts = {}) {
  auto C_apply = [&](const Eigen::VectorXd& v) { return C.apply(v); };
  auto inner = [&](const typename L::State& s, const Eigen::VectorXd& rhs) {
    Eigen::MatrixXd A = lik.form_A(s, C.dense());
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("find_mode: inner factorization failed");
    return Eigen::VectorXd(llt.solve(rhs));
  };
  return detail::newton_iterate(C_apply, lik, inner, opts);
}

// Matrix-free path: C is applied as an operator (FFT Toeplitz product in 1D)
// and the inner system is solved by conjugate gradients.
template <class L, class CApply>
ModeResult<L> find_mode_cg(const CApply& C_apply, const L& lik,
                           const NewtonOptions& opts = {}) {
  auto inner = [&](const typename L::State& s, const Eigen::VectorXd& rhs) {
    auto op = [&](const Eigen::VectorXd& x) {
      return (x + lik.apply_Rt(s, C_apply(lik.apply_R(s, x)))).eval();
    };
    return conjugate_gradient(op, rhs, opts.cg_tol, opts.cg_max_iter).x;
  };
  return detail::newton_iterate(C_apply, lik, inner, opts);
}

// Laplace fit at fixed hyperparameters: mode, log marginal likelihood, and the
// Cholesky factor of I + R^T C R reused by the determinant, the gradients and
// the posterior covariance.
template <class L>
struct LaplaceFit {
  ModeResult<L> mode;
  double log_marginal = 0.0;
  Eigen::LLT<Eigen::MatrixXd> lltA;
  Eigen::MatrixXd Sigma;  // posterior covariance, on demand
  bool sigma_ready = false;
};

template <class L>
LaplaceFit<L> laplace_fit(const PriorCov& C, const L& lik,
                          const NewtonOptions& opts = {}) {
  LaplaceFit<L> fit;
  fit.mode = find_mode_dense(C, lik, opts);
  Eigen::MatrixXd A = lik.form_A(fit.mode.state, C.dense());
  fit.lltA.compute(A);
  if (fit.lltA.info() != Eigen::Success)
    throw std::runtime_error("laplace_fit: Cholesky of I + R^T C R failed");
  const double logdet =
      2.0 * fit.lltA.matrixLLT().diagonal().array().log().sum();
  fit.log_marginal = -0.5 * fit.mode.f_hat.dot(fit.mode.a) +
                     fit.mode.state.loglik - 0.5 * logdet;
  return fit;
}

// Posterior covariance by the inversion lemma: Sigma = C - (CR) A^-1 (CR)^T.
template <class L>
void laplace_prepare_sigma(LaplaceFit<L>& fit, const PriorCov& C, const L& lik) {
  if (fit.sigma_ready) return;
  const Eigen::MatrixXd CR = lik.right_mult_R(fit.mode.state, C.dense());
  fit.Sigma = C.dense();
  fit.Sigma.noalias() -= CR * fit.lltA.solve(CR.transpose());
  fit.sigma_ready = true;
}

// Gradient of the approximate log marginal likelihood in log-hyperparameter
// space. dC[j] must be the full derivative of C (kernel gradient plus any
// sigma2-proportional jitter on the first entry). Combines the explicit terms
// with the implicit dependence through the mode.
template <class L>
Eigen::VectorXd laplace_grad(LaplaceFit<L>& fit, const PriorCov& C, const L& lik,
                             const std::vector<Eigen::MatrixXd>& dC) {
  laplace_prepare_sigma(fit, C, lik);
  const auto& s = fit.mode.state;
  const Eigen::VectorXd& a = fit.mode.a;
  const Eigen::MatrixXd WSW =
      lik.W_mat(s, Eigen::MatrixXd(lik.W_mat(s, fit.Sigma).transpose()));
  const Eigen::VectorXd s2 = lik.s2_dense(s, fit.Sigma);
  const Eigen::VectorXd Ss2 = fit.Sigma * s2;

  Eigen::VectorXd grad(dC.size());
  for (size_t j = 0; j < dC.size(); ++j) {
    const Eigen::MatrixXd& X = dC[j];
    const Eigen::VectorXd Xa = X * a;
    const double explicit_term = 0.5 * a.dot(Xa) - 0.5 * lik.trace_W_X(s, X) +
                                 0.5 * WSW.cwiseProduct(X).sum();
    const double implicit_term = Ss2.dot(C.solve(Xa));
    grad(j) = explicit_term + implicit_term;
  }
  return grad;
}

}  // namespace lgp
