// MCMC verification path: scaled Metropolis-Hastings over the latent grid
// values with the Laplace Gaussian as the proposal anchor, random-walk
// Metropolis over log-hyperparameters, the alternating meta-iteration
// scheduler, and convergence diagnostics (PSRF, initial monotone sequence
// effective sample size).
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lgp/hyper.hpp"
#include "lgp/kernel.hpp"
#include "lgp/laplace.hpp"
#include "lgp/likelihood.hpp"
#include "lgp/rng.hpp"

namespace lgp {

struct ChainConfig {
  int latent_steps = 100;  // latent updates per meta-iteration
  int meta_iters = 5100;
  int burn_in = 100;  // meta-iterations discarded (adaptation window)
  double eps = 0.5;   // autoregressive proposal scale, in (0, 1]
  double hyper_step = 0.2;
  std::uint64_t seed = 0;
};

// Autoregressive proposal f' = f_hat + sqrt(1-eps^2)(f - f_hat) + eps*zeta,
// zeta ~ N(0, Sigma_LA). The proposal leaves N(f_hat, Sigma_LA) invariant, so
// the Hastings ratio reduces to the ratio of target to Gaussian-approximation
// densities at the two points.
class ScaledMhLatentSampler {
 public:
  template <class LFit>
  ScaledMhLatentSampler(const PriorCov& C, const GridLikelihood& lik,
                        const LFit& fit)
      : C_(&C), lik_(&lik), f_hat_(fit.mode.f_hat) {
    if (!fit.sigma_ready)
      throw std::invalid_argument("ScaledMhLatentSampler: Sigma not prepared");
    Eigen::LLT<Eigen::MatrixXd> llt(fit.Sigma);
    if (llt.info() != Eigen::Success) {
      Eigen::MatrixXd S = fit.Sigma;
      S.diagonal().array() += 1e-10 * S.diagonal().mean();
      llt.compute(S);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("ScaledMhLatentSampler: Sigma factorization failed");
    }
    L_ = llt.matrixL();
  }

  double log_target(const Eigen::VectorXd& f) const {
    return -0.5 * C_->quad(f) + lik_->eval(f).loglik;
  }

  // log N(f | f_hat, Sigma) up to a constant
  double log_gauss(const Eigen::VectorXd& f) const {
    return -0.5 * L_.triangularView<Eigen::Lower>()
                      .solve(f - f_hat_)
                      .squaredNorm();
  }

  bool step(Eigen::VectorXd& f, double& cur_ratio, double eps,
            std::mt19937_64& gen) const {
    const long m = f.size();
    Eigen::VectorXd z = normal_vector(gen, m);
    Eigen::VectorXd prop = f_hat_ + std::sqrt(1.0 - eps * eps) * (f - f_hat_) +
                           eps * (L_ * z);
    const double prop_ratio = log_target(prop) - log_gauss(prop);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    if (std::log(ud(gen)) < prop_ratio - cur_ratio) {
      f = prop;
      cur_ratio = prop_ratio;
      return true;
    }
    return false;
  }

  // Runs `steps` updates; returns the acceptance count.
  int run(Eigen::VectorXd& f, double eps, int steps,
          std::mt19937_64& gen) const {
    double cur = log_target(f) - log_gauss(f);
    int accepted = 0;
    for (int i = 0; i < steps; ++i) accepted += step(f, cur, eps, gen);
    return accepted;
  }

 private:
  const PriorCov* C_;
  const GridLikelihood* lik_;
  Eigen::VectorXd f_hat_;
  Eigen::MatrixXd L_;
};

// One Gaussian random-walk Metropolis step on an arbitrary log target.
inline bool rw_mh_step(Eigen::VectorXd& x, double& cur_lp,
                       const std::function<double(const Eigen::VectorXd&)>& lp,
                       double step, std::mt19937_64& gen) {
  Eigen::VectorXd prop = x + step * normal_vector(gen, x.size());
  const double prop_lp = lp(prop);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  if (std::log(ud(gen)) < prop_lp - cur_lp) {
    x = prop;
    cur_lp = prop_lp;
    return true;
  }
  return false;
}

// log p(theta | f) up to a constant: N(f | 0, C(theta)) * p(theta).
inline double hyper_conditional_logpost(const Eigen::MatrixXd& Xn,
                                        const BasisPrior& basis,
                                        const HyperPrior& prior,
                                        const Eigen::VectorXd& theta_log,
                                        const Eigen::VectorXd& f) {
  const Hyperparameters th = Hyperparameters::from_vector(theta_log);
  PriorCov C = prior_cov(sqexp_cov(Xn, th), basis, default_jitter(th.sigma2()));
  return -0.5 * C.quad(f) - 0.5 * C.logdet() +
         hyper_log_prior(th, prior).first;
}

struct ChainResult {
  Eigen::MatrixXd density_samples;  // m x kept, softmax of the latent state
  Eigen::MatrixXd theta_samples;    // kept x (d+1), log parametrization
  Eigen::VectorXd log_posts;        // latent log target per kept sample
  double latent_accept = 0.0;
  double hyper_accept = 0.0;
  double eps_final = 0.0;
  double hyper_step_final = 0.0;
};

// Alternates `latent_steps` scaled-MH latent updates with one random-walk
// hyperparameter update per meta-iteration. Starts from the LA MAP and a draw
// from the LA Gaussian; both proposal scales adapt during burn-in only.
inline ChainResult run_chain(const Eigen::MatrixXd& Xn, const BasisPrior& basis,
                             const GridLikelihood& lik, const HyperPrior& prior,
                             const ChainConfig& cfg) {
  if (cfg.burn_in >= cfg.meta_iters)
    throw std::invalid_argument("run_chain: burn_in must be below meta_iters");
  auto map = map_optimize(Xn, basis, lik, prior, Hyperparameters::zeros(
                                                     static_cast<int>(Xn.cols())));
  laplace_prepare_sigma(map.fit, map.C, lik);

  auto gen = substream(cfg.seed, 0xC4A1u);
  Eigen::VectorXd theta = map.theta.to_vector();
  PriorCov C = map.C;
  LaplaceFit<GridLikelihood> fit = map.fit;

  // initial latent draw from the LA Gaussian
  Eigen::LLT<Eigen::MatrixXd> llt0(fit.Sigma);
  Eigen::VectorXd f =
      fit.mode.f_hat + Eigen::MatrixXd(llt0.matrixL()) *
                           normal_vector(gen, fit.mode.f_hat.size());

  double eps = cfg.eps;
  double hstep = cfg.hyper_step;
  const int kept_count = cfg.meta_iters - cfg.burn_in;
  ChainResult out;
  out.density_samples.resize(f.size(), kept_count);
  out.theta_samples.resize(kept_count, theta.size());
  out.log_posts.resize(kept_count);

  long lat_acc = 0, lat_tot = 0, hyp_acc = 0, hyp_tot = 0;
  ScaledMhLatentSampler sampler(C, lik, fit);
  double hyper_lp = hyper_conditional_logpost(Xn, basis, prior, theta, f);

  for (int meta = 0; meta < cfg.meta_iters; ++meta) {
    const bool adapting = meta < cfg.burn_in;
    const int acc = sampler.run(f, eps, cfg.latent_steps, gen);
    if (adapting) {
      const double rate = static_cast<double>(acc) / cfg.latent_steps;
      eps = std::clamp(eps * std::exp(0.6 * (rate - 0.3)), 1e-3, 1.0);
    } else {
      lat_acc += acc;
      lat_tot += cfg.latent_steps;
    }

    auto hyper_lp_fn = [&](const Eigen::VectorXd& t) {
      return hyper_conditional_logpost(Xn, basis, prior, t, f);
    };
    hyper_lp = hyper_lp_fn(theta);  // f moved since the last evaluation
    const bool hacc = rw_mh_step(theta, hyper_lp, hyper_lp_fn, hstep, gen);
    if (adapting) {
      hstep = std::clamp(hstep * std::exp(0.6 * ((hacc ? 1.0 : 0.0) - 0.25)),
                         1e-3, 5.0);
    } else {
      hyp_acc += hacc;
      ++hyp_tot;
    }
    if (hacc) {
      // refresh the proposal anchor at the accepted hyperparameters
      const Hyperparameters th = Hyperparameters::from_vector(theta);
      C = prior_cov(sqexp_cov(Xn, th), basis, default_jitter(th.sigma2()));
      NewtonOptions warm;
      warm.f0 = fit.mode.f_hat;
      warm.a0 = C.solve(fit.mode.f_hat);
      fit = laplace_fit(C, lik, warm);
      laplace_prepare_sigma(fit, C, lik);
      sampler = ScaledMhLatentSampler(C, lik, fit);
    }

    if (meta >= cfg.burn_in) {
      const int at = meta - cfg.burn_in;
      out.density_samples.col(at) = softmax(f);
      out.theta_samples.row(at) = theta.transpose();
      out.log_posts(at) = sampler.log_target(f);
    }
  }
  out.latent_accept = lat_tot ? static_cast<double>(lat_acc) / lat_tot : 0.0;
  out.hyper_accept = hyp_tot ? static_cast<double>(hyp_acc) / hyp_tot : 0.0;
  out.eps_final = eps;
  out.hyper_step_final = hstep;
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

// Potential scale reduction factor over two or more equal-length scalar
// chains. Identical chains give exactly 1.
inline double psrf(const std::vector<Eigen::VectorXd>& chains) {
  const size_t M = chains.size();
  if (M < 2) throw std::invalid_argument("psrf: need at least two chains");
  const long N = chains.front().size();
  Eigen::VectorXd means(M), vars(M);
  for (size_t c = 0; c < M; ++c) {
    if (chains[c].size() != N)
      throw std::invalid_argument("psrf: chains must have equal length");
    means(c) = chains[c].mean();
    vars(c) = (chains[c].array() - means(c)).square().sum() / (N - 1);
  }
  const double W = vars.mean();
  const double mean_of_means = means.mean();
  const double B_over_N =
      (means.array() - mean_of_means).square().sum() / (M - 1);
  if (W <= 0.0) return B_over_N > 0.0 ? std::numeric_limits<double>::infinity()
                                      : 1.0;
  const double Vhat = (N - 1.0) / N * W + B_over_N;
  return std::max(1.0, std::sqrt(Vhat / W));
}

struct EssResult {
  double ess = 0.0;
  bool constant_chain = false;
};

// Effective sample size with Geyer's initial monotone sequence truncation of
// the autocovariance sum.
inline EssResult ess_geyer(const Eigen::VectorXd& chain) {
  const long N = chain.size();
  if (N < 2) return {static_cast<double>(N), true};
  const double mean = chain.mean();
  Eigen::VectorXd x = chain.array() - mean;
  const double g0 = x.squaredNorm() / N;
  if (g0 <= 0.0) return {static_cast<double>(N), true};
  auto gamma = [&](long t) {
    return x.head(N - t).dot(x.tail(N - t)) / N;
  };
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (long k = 0; 2 * k + 1 < N; ++k) {
    const double pair = (gamma(2 * k) + gamma(2 * k + 1)) / g0;
    if (pair <= 0.0) break;
    const double capped = std::min(pair, prev_pair);  // monotone estimator
    tau += 2.0 * capped;
    prev_pair = capped;
  }
  tau = std::max(tau, 1.0 / N);
  return {N / tau, false};
}

}  // namespace lgp
