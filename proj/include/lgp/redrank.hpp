// Reduced-rank prior for dense 2D grids. The separable kernel on a regular
// lattice factors as K = K1 (x) K2, so the eigendecomposition of K comes from
// the two small factors; truncating to the s largest eigenvalues with a FIC
// diagonal correction gives C~ = Lambda + V S V^T + H B H^T. Everything here
// (determinant, marginal-likelihood gradients, posterior sampling) works with
// diagonal, low-rank, and (s+q)-sized triangular operations only; no m x m
// matrix is ever formed.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "lgp/grid.hpp"
#include "lgp/kernel.hpp"
#include "lgp/laplace.hpp"
#include "lgp/likelihood.hpp"
#include "lgp/posterior.hpp"
#include "lgp/rng.hpp"

namespace lgp {

struct ReducedRankPrior {
  int m1 = 0, m2 = 0;
  Eigen::MatrixXd V1, V2;   // eigenvectors of the Kronecker factors
  Eigen::VectorXd r1, r2;   // eigenvalues of the factors
  std::vector<std::pair<int, int>> retained;  // (p, q) pairs, descending r1p*r2q
  Eigen::MatrixXd V;        // m x s retained Kronecker eigenvectors
  Eigen::VectorXd S;        // s eigenvalues, descending
  Eigen::VectorXd lambda;   // FIC diagonal correction, floored at zero
  Eigen::VectorXd k_diag;   // exact prior diagonal
  Eigen::MatrixXd H;        // m x q basis (empty when no basis attached)
  Eigen::MatrixXd B;        // q x q basis coefficient covariance

  long m() const { return static_cast<long>(m1) * m2; }
  long rank() const { return S.size(); }

  // columns [V sqrt(S) | H chol(B)]: a factor of V S V^T + H B H^T
  Eigen::MatrixXd low_rank_factor() const {
    const long q = H.cols();
    Eigen::MatrixXd G(m(), rank() + q);
    G.leftCols(rank()) = V * S.cwiseSqrt().asDiagonal();
    if (q > 0) {
      Eigen::LLT<Eigen::MatrixXd> llt(B);
      G.rightCols(q) = H * Eigen::MatrixXd(llt.matrixL());
    }
    return G;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = lambda.cwiseProduct(v);
    out.noalias() += V * S.cwiseProduct(V.transpose() * v);
    if (H.cols() > 0) out.noalias() += H * (B * (H.transpose() * v));
    return out;
  }
};

inline ReducedRankPrior kron_eig_truncate(const Eigen::MatrixXd& K1,
                                          const Eigen::MatrixXd& K2,
                                          double cutoff = 1e-6,
                                          double max_frac = 0.5) {
  ReducedRankPrior rr;
  rr.m1 = static_cast<int>(K1.rows());
  rr.m2 = static_cast<int>(K2.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(K1), e2(K2);
  if (e1.info() != Eigen::Success || e2.info() != Eigen::Success)
    throw std::runtime_error("kron_eig_truncate: eigendecomposition failed");
  rr.V1 = e1.eigenvectors();
  rr.V2 = e2.eigenvectors();
  rr.r1 = e1.eigenvalues();
  rr.r2 = e2.eigenvalues();
  const double mx1 = rr.r1.maxCoeff(), mx2 = rr.r2.maxCoeff();
  if (rr.r1.minCoeff() < -1e-10 * mx1 || rr.r2.minCoeff() < -1e-10 * mx2)
    throw std::invalid_argument("kron_eig_truncate: input factor is not PSD");
  rr.r1 = rr.r1.cwiseMax(0.0);
  rr.r2 = rr.r2.cwiseMax(0.0);

  const long m = rr.m();
  std::vector<std::pair<int, int>> order(m);
  for (int p = 0; p < rr.m1; ++p)
    for (int q = 0; q < rr.m2; ++q) order[p * rr.m2 + q] = {p, q};
  auto product = [&](const std::pair<int, int>& pq) {
    return rr.r1(pq.first) * rr.r2(pq.second);
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](const auto& a, const auto& b) {
                     return product(a) > product(b);
                   });
  const double pmax = product(order.front());
  const long cap = std::max<long>(1, static_cast<long>(max_frac * m));
  for (const auto& pq : order) {
    if (static_cast<long>(rr.retained.size()) >= cap) break;
    if (product(pq) <= cutoff * pmax && !rr.retained.empty()) break;
    rr.retained.push_back(pq);
  }

  const long s = rr.retained.size();
  rr.V.resize(m, s);
  rr.S.resize(s);
  for (long k = 0; k < s; ++k) {
    const auto [p, q] = rr.retained[k];
    rr.S(k) = rr.r1(p) * rr.r2(q);
    // v1 (x) v2 with flat index i1*m2 + i2
    for (int i1 = 0; i1 < rr.m1; ++i1)
      rr.V.col(k).segment(static_cast<long>(i1) * rr.m2, rr.m2) =
          rr.V1(i1, p) * rr.V2.col(q);
  }
  rr.k_diag.resize(m);
  for (int i1 = 0; i1 < rr.m1; ++i1)
    rr.k_diag.segment(static_cast<long>(i1) * rr.m2, rr.m2) =
        K1(i1, i1) * K2.diagonal();
  rr.lambda =
      (rr.k_diag - (rr.V.array().square().matrix() * rr.S)).cwiseMax(0.0);
  return rr;
}

// ---------------------------------------------------------------------------
// Structured posterior algebra at a softmax state. With D = n diag(u) and
// Z = (I + D Lambda)^-1 the matrix E = (C~ + D^-1)^-1 has the closed form
// E = That - J2 J2^T where That = DZ and J2 involves only the (s+q) triangular
// factor L. F = E - E1 (1^T E 1)^-1 1^T E annihilates constants, which both
// handles the rank deficiency of W and drops the unbounded pseudo-noise
// component during sampling.
class RrOps {
 public:
  RrOps(const ReducedRankPrior& prior, const Eigen::VectorXd& u, double n)
      : prior_(&prior), n_(n) {
    const long m = prior.m();
    d_ = n * u;
    sd_ = d_.cwiseSqrt();
    zbar_ = (1.0 + d_.cwiseProduct(prior.lambda).array()).inverse().matrix();
    that_ = d_.cwiseProduct(zbar_);
    G_ = prior.low_rank_factor();
    const long r = G_.cols();
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(r, r);
    M.noalias() += G_.transpose() * that_.asDiagonal() * G_;
    lltL_.compute(M);
    if (lltL_.info() != Eigen::Success)
      throw std::runtime_error("RrOps: inner Cholesky failed");
    const Eigen::MatrixXd L = lltL_.matrixL();
    // J2 = diag(That) G L^-T
    J2_ = that_.asDiagonal() * G_;
    lltL_.matrixU().solveInPlace<Eigen::OnTheRight>(J2_);
    E1_ = that_ - J2_ * (J2_.transpose() * Eigen::VectorXd::Ones(m));
    sumE1_ = E1_.sum();
    logdet_ = 0.0;
    if (n_ > 0.0) {
      logdet_ = d_.cwiseProduct(prior.lambda).array().log1p().sum() +
                2.0 * L.diagonal().array().log().sum() + std::log(sumE1_) -
                std::log(n_);
    }
  }

  double logdet_term() const { return logdet_; }

  Eigen::VectorXd apply_E(const Eigen::VectorXd& v) const {
    return that_.cwiseProduct(v) - J2_ * (J2_.transpose() * v);
  }

  Eigen::VectorXd apply_F(const Eigen::VectorXd& v) const {
    if (n_ <= 0.0 || sumE1_ <= 0.0) return Eigen::VectorXd::Zero(v.size());
    Eigen::VectorXd e = apply_E(v);
    return e - E1_ * (e.sum() / sumE1_);
  }

  Eigen::VectorXd apply_sigma(const Eigen::VectorXd& v) const {
    Eigen::VectorXd cv = prior_->apply(v);
    return cv - prior_->apply(apply_F(cv));
  }

  Eigen::VectorXd apply_W(const Eigen::VectorXd& v) const {
    if (n_ <= 0.0) return Eigen::VectorXd::Zero(v.size());
    const Eigen::VectorXd u = d_ / n_;
    return n_ * (u.cwiseProduct(v) - u * u.dot(v));
  }

  // diag of Sigma = C~ - C~ F C~ through the structure of E.
  Eigen::VectorXd sigma_diag() const {
    const long m = prior_->m();
    Eigen::VectorXd diagC =
        prior_->lambda + G_.array().square().rowwise().sum().matrix();
    if (n_ <= 0.0 || sumE1_ <= 0.0) return diagC;
    const long r = G_.cols();
    // diag(C~ That C~)
    const Eigen::VectorXd gg = G_.array().square().rowwise().sum();
    Eigen::MatrixXd P1(r, r);
    P1.noalias() = G_.transpose() * that_.asDiagonal() * G_;
    const Eigen::VectorXd quad =
        ((G_ * P1).array() * G_.array()).rowwise().sum();
    Eigen::VectorXd diagCTC = prior_->lambda.array().square() * that_.array() +
                              2.0 * prior_->lambda.array() * that_.array() *
                                  gg.array() +
                              quad.array();
    // rowsq(C~ J2)
    Eigen::MatrixXd CJ = prior_->lambda.asDiagonal() * J2_;
    CJ.noalias() += G_ * (G_.transpose() * J2_);
    const Eigen::VectorXd rsq = CJ.array().square().rowwise().sum();
    const Eigen::VectorXd CE1 = prior_->apply(E1_);
    Eigen::VectorXd diagCFC =
        diagCTC - rsq + Eigen::VectorXd::Zero(m);  // diag(C~ E C~)
    diagCFC -= CE1.array().square().matrix() / sumE1_;
    return diagC - diagCFC;
  }

  // One posterior draw: x_prior ~ N(0, C~), then the Matheron-style downdate
  // x_prior - C~ F (x_prior + noise) with noise ~ N(0, D^-1). F annihilates
  // constants, so the unbounded component of the noise never enters; the
  // noise itself only ever appears premultiplied by D^1/2.
  Eigen::VectorXd sample_latent(const Eigen::VectorXd& f_hat,
                                std::mt19937_64& gen) const {
    const long m = prior_->m();
    const long r = G_.cols();
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd z1(m), z2(r), z3(m);
    for (long i = 0; i < m; ++i) z1(i) = nd(gen);
    for (long i = 0; i < r; ++i) z2(i) = nd(gen);
    for (long i = 0; i < m; ++i) z3(i) = nd(gen);
    Eigen::VectorXd x = prior_->lambda.cwiseSqrt().cwiseProduct(z1) + G_ * z2;
    if (n_ > 0.0 && sumE1_ > 0.0) {
      const Eigen::VectorXd half = sd_.cwiseProduct(x) + z3;  // D^1/2 v
      const Eigen::VectorXd tv = sd_.cwiseProduct(zbar_.cwiseProduct(half));
      const Eigen::VectorXd w = lltL_.matrixL().solve(G_.transpose() * tv);
      const Eigen::VectorXd e = tv - J2_ * w;  // E v
      const Eigen::VectorXd fv = e - E1_ * (e.sum() / sumE1_);
      x -= prior_->apply(fv);
    }
    return f_hat + x;
  }

 private:
  const ReducedRankPrior* prior_;
  double n_ = 0.0;
  Eigen::VectorXd d_, sd_, zbar_, that_, E1_;
  Eigen::MatrixXd G_, J2_;
  Eigen::LLT<Eigen::MatrixXd> lltL_;
  double sumE1_ = 0.0;
  double logdet_ = 0.0;
};

struct RrFit {
  ModeResult<GridLikelihood> mode;
  double log_marginal = 0.0;
};

inline RrFit rr_laplace_fit(const ReducedRankPrior& prior,
                            const GridLikelihood& lik,
                            const NewtonOptions& opts = {}) {
  RrFit fit;
  auto C_apply = [&](const Eigen::VectorXd& v) { return prior.apply(v); };
  fit.mode = find_mode_cg(C_apply, lik, opts);
  RrOps ops(prior, fit.mode.state.u, lik.n());
  fit.log_marginal = -0.5 * fit.mode.f_hat.dot(fit.mode.a) +
                     fit.mode.state.loglik - 0.5 * ops.logdet_term();
  return fit;
}

inline DensityPosterior rr_posterior_sample(const ReducedRankPrior& prior,
                                            const RrFit& fit,
                                            const GridLikelihood& lik,
                                            long count, std::uint64_t seed) {
  RrOps ops(prior, fit.mode.state.u, lik.n());
  DensityPosterior post;
  post.probs.resize(prior.m(), count);
  for (long s = 0; s < count; ++s) {
    auto gen = substream(seed, static_cast<std::uint64_t>(s));
    post.probs.col(s) = softmax(ops.sample_latent(fit.mode.f_hat, gen));
  }
  post.weights = Eigen::VectorXd::Constant(count, 1.0);
  post.finalize();
  return post;
}

// ---------------------------------------------------------------------------
// Hyperparameter gradients. The derivative of the truncated eigenexpansion
// lives in the Kronecker eigenbasis as a sparse symmetric coefficient set:
// exact coefficients between retained pairs, first-order perturbation
// coefficients against discarded ones.

struct KronKernel {
  Eigen::MatrixXd K1, K2;
  // derivative factors per parameter [log sigma2, log l1, log l2];
  // empty matrix means a zero derivative for that factor
  std::vector<Eigen::MatrixXd> dK1, dK2;
};

inline KronKernel kron_sqexp(const Eigen::VectorXd& x1,
                             const Eigen::VectorXd& x2,
                             const Hyperparameters& theta) {
  KronKernel k;
  const double s2 = theta.sigma2();
  k.K1 = sqexp_factor(x1, theta.log_lengthscales(0), s2);
  k.K2 = sqexp_factor(x2, theta.log_lengthscales(1), 1.0);
  auto scaled_sq = [](const Eigen::VectorXd& x, double log_l) {
    const long m = x.size();
    const double inv_l2 = std::exp(-2.0 * log_l);
    Eigen::MatrixXd D(m, m);
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < m; ++j) {
        const double dx = x(i) - x(j);
        D(i, j) = inv_l2 * dx * dx;
      }
    return D;
  };
  k.dK1.resize(3);
  k.dK2.resize(3);
  k.dK1[0] = k.K1;  // d/d log sigma2
  k.dK1[1] = k.K1.cwiseProduct(scaled_sq(x1, theta.log_lengthscales(0)));
  k.dK2[2] = k.K2.cwiseProduct(scaled_sq(x2, theta.log_lengthscales(1)));
  return k;
}

// Normalized per-axis coordinates of a 2D grid (dimension 0 varies slowest).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> grid_axis_coords(
    const Grid& grid) {
  if (grid.dims != 2)
    throw std::invalid_argument("grid_axis_coords: need a 2D grid");
  const Eigen::MatrixXd Xn = grid.normalized_centers();
  const int m1 = grid.m_per_dim[0], m2 = grid.m_per_dim[1];
  Eigen::VectorXd x1(m1), x2(m2);
  for (int i = 0; i < m1; ++i) x1(i) = Xn(static_cast<long>(i) * m2, 0);
  for (int j = 0; j < m2; ++j) x2(j) = Xn(j, 1);
  return {x1, x2};
}

inline ReducedRankPrior make_rr_prior(const Grid& grid,
                                      const Hyperparameters& theta,
                                      const BasisPrior& basis,
                                      double cutoff = 1e-6,
                                      double max_frac = 0.5) {
  auto [x1, x2] = grid_axis_coords(grid);
  KronKernel kk = kron_sqexp(x1, x2, theta);
  ReducedRankPrior rr = kron_eig_truncate(kk.K1, kk.K2, cutoff, max_frac);
  rr.H = basis.H;
  rr.B = basis.B;
  return rr;
}

namespace detail {

struct KronTriplet {
  int a1, a2;  // row pair (may lie outside the retained set)
  int b1, b2;  // column pair, always retained
  double c;    // coefficient of v_a v_b^T + v_b v_a^T (or v_a v_a^T on diag)
};

struct RrDeriv {
  std::vector<KronTriplet> triplets;
  Eigen::VectorXd ddiag;    // derivative of diag(K)
  Eigen::VectorXd dlambda;  // derivative of the FIC diagonal
};

inline Eigen::VectorXd kron_pair_product(const ReducedRankPrior& rr, int a1,
                                         int a2, int b1, int b2) {
  // elementwise product (v1_a1 (x) v2_a2) o (v1_b1 (x) v2_b2)
  const Eigen::VectorXd w1 = rr.V1.col(a1).cwiseProduct(rr.V1.col(b1));
  const Eigen::VectorXd w2 = rr.V2.col(a2).cwiseProduct(rr.V2.col(b2));
  Eigen::VectorXd out(rr.m());
  for (int i1 = 0; i1 < rr.m1; ++i1)
    out.segment(static_cast<long>(i1) * rr.m2, rr.m2) = w1(i1) * w2;
  return out;
}

// Derivative of the truncated expansion V S V^T for one hyperparameter, given
// the factor derivatives (empty matrix = zero). Retained-retained couplings
// have exact coefficients; couplings into the discarded subspace carry the
// eigenvector perturbation denominator and are skipped across (near-)
// degenerate pairs, where the truncated expansion itself is not smooth.
inline RrDeriv build_rr_deriv(const ReducedRankPrior& rr,
                              const Eigen::MatrixXd& K1,
                              const Eigen::MatrixXd& K2,
                              const Eigen::MatrixXd& dK1,
                              const Eigen::MatrixXd& dK2) {
  RrDeriv d;
  const bool has1 = dK1.size() > 0;
  const bool has2 = dK2.size() > 0;
  Eigen::MatrixXd G1, G2;
  if (has1) G1 = rr.V1.transpose() * dK1 * rr.V1;
  if (has2) G2 = rr.V2.transpose() * dK2 * rr.V2;

  Eigen::MatrixXi pos = Eigen::MatrixXi::Constant(rr.m1, rr.m2, -1);
  for (size_t k = 0; k < rr.retained.size(); ++k)
    pos(rr.retained[k].first, rr.retained[k].second) = static_cast<int>(k);

  const double tol1 = 1e-12 * rr.r1.maxCoeff();
  const double tol2 = 1e-12 * rr.r2.maxCoeff();
  for (const auto& [p, q] : rr.retained) {
    double dl = 0.0;
    if (has1) dl += G1(p, p) * rr.r2(q);
    if (has2) dl += rr.r1(p) * G2(q, q);
    d.triplets.push_back({p, q, p, q, dl});
    if (has1) {
      for (int j = 0; j < rr.m1; ++j) {
        if (j == p) continue;
        if (pos(j, q) >= 0) {
          if (j > p) d.triplets.push_back({j, q, p, q, G1(j, p) * rr.r2(q)});
        } else {
          const double den = rr.r1(p) - rr.r1(j);
          if (std::abs(den) > tol1)
            d.triplets.push_back(
                {j, q, p, q, rr.r1(p) * rr.r2(q) * G1(j, p) / den});
        }
      }
    }
    if (has2) {
      for (int j = 0; j < rr.m2; ++j) {
        if (j == q) continue;
        if (pos(p, j) >= 0) {
          if (j > q) d.triplets.push_back({p, j, p, q, rr.r1(p) * G2(j, q)});
        } else {
          const double den = rr.r2(q) - rr.r2(j);
          if (std::abs(den) > tol2)
            d.triplets.push_back(
                {p, j, p, q, rr.r1(p) * rr.r2(q) * G2(j, q) / den});
        }
      }
    }
  }

  // d diag(K): diag(K) = diag(K1) (x) diag(K2)
  d.ddiag.resize(rr.m());
  for (int i1 = 0; i1 < rr.m1; ++i1)
    for (int i2 = 0; i2 < rr.m2; ++i2) {
      double v = 0.0;
      if (has1) v += dK1(i1, i1) * K2(i2, i2);
      if (has2) v += K1(i1, i1) * dK2(i2, i2);
      d.ddiag(static_cast<long>(i1) * rr.m2 + i2) = v;
    }

  d.dlambda = d.ddiag;
  for (const auto& t : d.triplets) {
    const bool diag = (t.a1 == t.b1 && t.a2 == t.b2);
    d.dlambda -= (diag ? t.c : 2.0 * t.c) *
                 kron_pair_product(rr, t.a1, t.a2, t.b1, t.b2);
  }
  return d;
}

// x in the Kronecker eigenbasis, as an m1 x m2 coefficient matrix.
inline Eigen::MatrixXd to_eigenbasis(const ReducedRankPrior& rr,
                                     const Eigen::VectorXd& x) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      X(x.data(), rr.m1, rr.m2);
  return rr.V1.transpose() * X * rr.V2;
}

inline Eigen::VectorXd apply_dC(const ReducedRankPrior& rr, const RrDeriv& d,
                                const Eigen::VectorXd& x) {
  const Eigen::MatrixXd Xh = to_eigenbasis(rr, x);
  Eigen::MatrixXd Yh = Eigen::MatrixXd::Zero(rr.m1, rr.m2);
  for (const auto& t : d.triplets) {
    if (t.a1 == t.b1 && t.a2 == t.b2) {
      Yh(t.a1, t.a2) += t.c * Xh(t.a1, t.a2);
    } else {
      Yh(t.a1, t.a2) += t.c * Xh(t.b1, t.b2);
      Yh(t.b1, t.b2) += t.c * Xh(t.a1, t.a2);
    }
  }
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Y =
      rr.V1 * Yh * rr.V2.transpose();
  Eigen::VectorXd out = Eigen::Map<const Eigen::VectorXd>(Y.data(), rr.m());
  out += d.dlambda.cwiseProduct(x);
  return out;
}

}  // namespace detail

// Gradient of the reduced-rank log marginal likelihood in log-hyperparameter
// space [log sigma2, log l1, log l2]. All terms are assembled from structured
// operator applications; the trace against W Sigma W uses one Sigma action
// per retained eigenvector.
inline Eigen::VectorXd rr_grad(const ReducedRankPrior& prior, const RrFit& fit,
                               const GridLikelihood& lik, const KronKernel& kk) {
  const Eigen::VectorXd& u = fit.mode.state.u;
  const Eigen::VectorXd& a = fit.mode.a;
  const double n = lik.n();
  RrOps ops(prior, u, n);

  const Eigen::VectorXd sdg = ops.sigma_diag();
  const Eigen::VectorXd t = ops.apply_sigma(u);
  const double beta = u.dot(t);
  const double us = u.dot(sdg);
  const double ut = u.dot(t);
  const Eigen::VectorXd s2 =
      (-0.5 * n * u.array() * ((sdg.array() - us) - 2.0 * (t.array() - ut)))
          .matrix();
  const Eigen::VectorXd b2 = s2 - ops.apply_W(ops.apply_sigma(s2));
  const Eigen::VectorXd wsw_diag =
      (n * n * u.array().square() * (sdg.array() - 2.0 * t.array() + beta))
          .matrix();

  // W Sigma W v_k for every retained eigenvector, in the eigenbasis
  const long s = prior.rank();
  std::vector<Eigen::MatrixXd> Yh(static_cast<size_t>(s));
  for (long k = 0; k < s; ++k) {
    const Eigen::VectorXd y =
        ops.apply_W(ops.apply_sigma(ops.apply_W(prior.V.col(k))));
    Yh[static_cast<size_t>(k)] = detail::to_eigenbasis(prior, y);
  }
  Eigen::MatrixXi pos = Eigen::MatrixXi::Constant(prior.m1, prior.m2, -1);
  for (size_t k = 0; k < prior.retained.size(); ++k)
    pos(prior.retained[k].first, prior.retained[k].second) =
        static_cast<int>(k);

  const int nparam = static_cast<int>(kk.dK1.size());
  Eigen::VectorXd grad(nparam);
  for (int j = 0; j < nparam; ++j) {
    const detail::RrDeriv dj =
        detail::build_rr_deriv(prior, kk.K1, kk.K2, kk.dK1[j], kk.dK2[j]);
    const Eigen::VectorXd Xa = detail::apply_dC(prior, dj, a);
    const Eigen::VectorXd Xu = detail::apply_dC(prior, dj, u);
    const double tr_w = n * (u.dot(dj.ddiag) - u.dot(Xu));
    double tr_wsw = dj.dlambda.dot(wsw_diag);
    for (const auto& tr : dj.triplets) {
      const int k = pos(tr.b1, tr.b2);
      const bool diag = (tr.a1 == tr.b1 && tr.a2 == tr.b2);
      tr_wsw += (diag ? tr.c : 2.0 * tr.c) *
                Yh[static_cast<size_t>(k)](tr.a1, tr.a2);
    }
    grad(j) = 0.5 * a.dot(Xa) - 0.5 * tr_w + 0.5 * tr_wsw + b2.dot(Xa);
  }
  return grad;
}

}  // namespace lgp
