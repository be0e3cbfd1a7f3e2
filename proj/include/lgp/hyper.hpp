// Type-II MAP estimation of the covariance hyperparameters by BFGS on the
// approximate log marginal posterior, and central-composite-design integration
// over the hyperparameters around the mode.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lgp/kernel.hpp"
#include "lgp/laplace.hpp"
#include "lgp/posterior.hpp"

namespace lgp {

struct BfgsOptions {
  int max_iter = 200;
  double grad_tol = 1e-4;  // sup norm of the gradient at the returned point
  double c1 = 1e-4;        // Armijo constant
  int max_ls = 40;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
};

// Minimizes f(x, grad*) with backtracking line search. The callable computes
// the value and, when the pointer is non-null, the gradient.
template <class F>
BfgsResult bfgs_minimize(F&& f, Eigen::VectorXd x0,
                         const BfgsOptions& opts = {}) {
  const long k = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  res.grad.resize(k);
  res.value = f(res.x, &res.grad);
  if (!std::isfinite(res.value))
    throw std::runtime_error("bfgs: objective not finite at the initial point");
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(k, k);
  bool fresh_hessian = true;

  for (int it = 0; it < opts.max_iter; ++it) {
    res.iterations = it;
    if (res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      res.converged = true;
      return res;
    }
    Eigen::VectorXd dir = -Hinv * res.grad;
    double slope = res.grad.dot(dir);
    if (slope >= 0.0) {  // stale curvature; restart from steepest descent
      Hinv.setIdentity();
      fresh_hessian = true;
      dir = -res.grad;
      slope = res.grad.dot(dir);
    }
    double t = 1.0;
    double fx_new = 0.0;
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < opts.max_ls; ++ls) {
      x_new = res.x + t * dir;
      fx_new = f(x_new, nullptr);
      if (std::isfinite(fx_new) && fx_new <= res.value + opts.c1 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!fresh_hessian) {  // retry once along steepest descent
        Hinv.setIdentity();
        fresh_hessian = true;
        continue;
      }
      // no progress at machine accuracy
      res.converged = res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
      return res;
    }
    fresh_hessian = false;
    Eigen::VectorXd grad_new(k);
    fx_new = f(x_new, &grad_new);
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = grad_new - res.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
      Hinv = (I - rho * s * y.transpose()) * Hinv *
                 (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    res.x = x_new;
    res.value = fx_new;
    res.grad = grad_new;
  }
  res.converged = res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
  return res;
}

// ---------------------------------------------------------------------------
// Dense-path MAP objective: negative approximate log marginal posterior of
// theta in log space. Warm-starts Newton from the previous mode.

template <class L>
class LaplaceObjective {
 public:
  LaplaceObjective(const Eigen::MatrixXd& Xn, const BasisPrior& basis,
                   const L& lik, const HyperPrior& prior)
      : Xn_(&Xn), basis_(&basis), lik_(&lik), prior_(prior) {}

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const Hyperparameters th = Hyperparameters::from_vector(x);
    const double jitter = default_jitter(th.sigma2());
    NewtonOptions nopts;
    if (warm_f_.size() > 0) {
      nopts.f0 = warm_f_;
    }
    double logq;
    if (grad) {
      SqExpCov kc = sqexp_cov_and_grads(*Xn_, th);
      PriorCov C = prior_cov(kc.K, *basis_, jitter);
      if (nopts.f0.size() > 0) nopts.a0 = C.solve(nopts.f0);
      LaplaceFit<L> fit = laplace_fit(C, *lik_, nopts);
      std::vector<Eigen::MatrixXd> dC = std::move(kc.dK);
      dC[0].diagonal().array() += jitter;
      Eigen::VectorXd g = laplace_grad(fit, C, *lik_, dC);
      auto [lp, lp_grad] = hyper_log_prior(th, prior_);
      *grad = -(g + lp_grad);
      logq = fit.log_marginal + lp;
      warm_f_ = fit.mode.f_hat;
      last_fit_ = std::move(fit);
      last_C_ = std::move(C);
      has_fit_ = true;
    } else {
      PriorCov C = prior_cov(sqexp_cov(*Xn_, th), *basis_, jitter);
      if (nopts.f0.size() > 0) nopts.a0 = C.solve(nopts.f0);
      LaplaceFit<L> fit = laplace_fit(C, *lik_, nopts);
      logq = fit.log_marginal + hyper_log_prior(th, prior_).first;
    }
    return -logq;
  }

  bool has_fit() const { return has_fit_; }
  LaplaceFit<L>& fit() { return last_fit_; }
  PriorCov& C() { return last_C_; }

 private:
  const Eigen::MatrixXd* Xn_;
  const BasisPrior* basis_;
  const L* lik_;
  HyperPrior prior_;
  Eigen::VectorXd warm_f_;
  LaplaceFit<L> last_fit_;
  PriorCov last_C_;
  bool has_fit_ = false;
};

template <class L>
struct MapResult {
  Hyperparameters theta;
  double log_post = 0.0;  // log q + log prior at theta
  LaplaceFit<L> fit;
  PriorCov C;
  int iterations = 0;
  bool converged = false;
};

template <class L>
MapResult<L> map_optimize(const Eigen::MatrixXd& Xn, const BasisPrior& basis,
                          const L& lik, const HyperPrior& prior,
                          const Hyperparameters& init,
                          const BfgsOptions& opts = {}) {
  LaplaceObjective<L> obj(Xn, basis, lik, prior);
  BfgsResult r = bfgs_minimize(std::ref(obj), init.to_vector(), opts);
  if (!r.converged)
    throw std::runtime_error("map_optimize: BFGS did not converge");
  MapResult<L> out;
  out.theta = Hyperparameters::from_vector(r.x);
  out.log_post = -r.value;
  out.iterations = r.iterations;
  out.converged = r.converged;
  // the last gradient evaluation happened at the accepted point
  out.fit = std::move(obj.fit());
  out.C = std::move(obj.C());
  return out;
}

// ---------------------------------------------------------------------------
// Central composite design in whitened log-hyperparameter space: the mode,
// 2k axial points, and a full factorial (k <= 3), all non-center points on
// the sphere of radius f0 sqrt(k). Quadrature weights match the Gaussian
// second moments; mixing weights rescale by the actual posterior against the
// Gaussian it replaces.

struct CcdPlan {
  Eigen::MatrixXd thetas;       // npoints x k, log-theta space
  Eigen::VectorXd mix_weights;  // normalized mixture weights
  bool fallback_map_only = false;
};

inline Eigen::MatrixXd ccd_unit_points(int k, double f0) {
  const int np = 1 + 2 * k + (1 << k);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(np, k);
  const double delta = f0 * std::sqrt(static_cast<double>(k));
  int row = 1;
  for (int i = 0; i < k; ++i) {
    z(row++, i) = delta;
    z(row++, i) = -delta;
  }
  for (int c = 0; c < (1 << k); ++c, ++row)
    for (int i = 0; i < k; ++i) z(row, i) = (c >> i) & 1 ? f0 : -f0;
  return z;
}

inline CcdPlan make_ccd_plan(
    const Eigen::VectorXd& theta_star, const Eigen::MatrixXd& hessian,
    const std::function<double(const Eigen::VectorXd&)>& log_post,
    double f0 = 1.1) {
  const int k = static_cast<int>(theta_star.size());
  CcdPlan plan;
  Eigen::LLT<Eigen::MatrixXd> llt(hessian);
  if (llt.info() != Eigen::Success) {
    plan.thetas = theta_star.transpose();
    plan.mix_weights = Eigen::VectorXd::Ones(1);
    plan.fallback_map_only = true;
    return plan;
  }
  const Eigen::MatrixXd z = ccd_unit_points(k, f0);
  const int np = static_cast<int>(z.rows());
  plan.thetas.resize(np, k);
  for (int j = 0; j < np; ++j)
    plan.thetas.row(j) =
        (theta_star +
         llt.matrixU().solve(Eigen::VectorXd(z.row(j).transpose())))
            .transpose();

  // second-moment matching weights
  const double w0 = 1.0 - 1.0 / (f0 * f0);
  const double w1 = 1.0 / ((np - 1) * f0 * f0);
  const double lp0 = log_post(theta_star);
  plan.mix_weights.resize(np);
  for (int j = 0; j < np; ++j) {
    const double lw = std::log(j == 0 ? w0 : w1);
    const double lp = (j == 0) ? lp0 : log_post(plan.thetas.row(j).transpose());
    // divide out the Gaussian the design integrates exactly
    plan.mix_weights(j) = lw + (lp - lp0) + 0.5 * z.row(j).squaredNorm();
  }
  plan.mix_weights.array() -= plan.mix_weights.maxCoeff();
  plan.mix_weights = plan.mix_weights.array().exp();
  plan.mix_weights /= plan.mix_weights.sum();
  return plan;
}

// Mixes per-design-point posterior sample sets into one weighted sample set.
inline DensityPosterior mix_posteriors(
    const std::vector<DensityPosterior>& parts,
    const Eigen::VectorXd& mix_weights) {
  if (parts.empty()) throw std::invalid_argument("mix_posteriors: empty input");
  long total = 0;
  for (const auto& p : parts) total += p.size();
  DensityPosterior out;
  out.probs.resize(parts.front().probs.rows(), total);
  out.weights.resize(total);
  long at = 0;
  for (size_t j = 0; j < parts.size(); ++j) {
    const long s = parts[j].size();
    out.probs.middleCols(at, s) = parts[j].probs;
    out.weights.segment(at, s) = mix_weights(static_cast<long>(j)) *
                                 parts[j].weights;
    at += s;
  }
  out.finalize();
  return out;
}

// Symmetric finite-difference Hessian of a gradient function.
inline Eigen::MatrixXd fd_hessian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_fn,
    const Eigen::VectorXd& x, double h = 1e-3) {
  const long k = x.size();
  Eigen::MatrixXd H(k, k);
  for (long j = 0; j < k; ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    H.col(j) = (grad_fn(xp) - grad_fn(xm)) / (2.0 * h);
  }
  return 0.5 * (H + H.transpose());
}

}  // namespace lgp
