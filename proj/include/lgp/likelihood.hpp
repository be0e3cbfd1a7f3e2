// Grid multinomial likelihood for the logistic density transform and its
// curvature structure W = n (diag(u) - u u^T) = R R^T, applied matrix-free.
// The sliced variant handles density regression, where W is block diagonal
// with one softmax block per predictor slice.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace lgp {

inline double logsumexp(const Eigen::VectorXd& f) {
  const double mx = f.maxCoeff();
  return mx + std::log((f.array() - mx).exp().sum());
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& f) {
  const double mx = f.maxCoeff();
  Eigen::VectorXd e = (f.array() - mx).exp();
  return e / e.sum();
}

struct SoftmaxState {
  Eigen::VectorXd u;  // positive, sums to one
  double n = 0.0;     // total observation count behind this block
};

inline SoftmaxState softmax_u(const Eigen::VectorXd& f, double n = 0.0) {
  return {softmax(f), n};
}

// log p(y|f) = y^T f - n * logsumexp(f), gradient y - n*u.
inline std::pair<double, Eigen::VectorXd> log_lik_and_grad(
    const Eigen::VectorXd& y, const Eigen::VectorXd& f) {
  const double n = y.sum();
  if (n == 0.0) return {0.0, Eigen::VectorXd::Zero(f.size())};
  const double lp = y.dot(f) - n * logsumexp(f);
  Eigen::VectorXd grad = y - n * softmax(f);
  return {lp, grad};
}

enum class CurvatureMode { W, R, Rt };

// Applies W, R, or R^T at the given softmax state without forming any m x m
// matrix. R = sqrt(n) (diag(u)^1/2 - u u^T diag(u)^-1/2); the u_i^(1/2)
// factors are evaluated directly so vanishing u entries never hit a division.
inline Eigen::VectorXd curvature_apply(const SoftmaxState& state,
                                       const Eigen::VectorXd& v,
                                       CurvatureMode mode) {
  const Eigen::VectorXd& u = state.u;
  const double n = state.n;
  switch (mode) {
    case CurvatureMode::W:
      return n * (u.cwiseProduct(v) - u * u.dot(v));
    case CurvatureMode::R: {
      Eigen::VectorXd su = u.cwiseSqrt();
      return std::sqrt(n) * (su.cwiseProduct(v) - u * su.dot(v));
    }
    case CurvatureMode::Rt: {
      Eigen::VectorXd su = u.cwiseSqrt();
      return std::sqrt(n) * su.cwiseProduct((v.array() - u.dot(v)).matrix());
    }
  }
  throw std::logic_error("curvature_apply: bad mode");
}

// ---------------------------------------------------------------------------
// Density estimation: one softmax over the whole grid.

class GridLikelihood {
 public:
  explicit GridLikelihood(const Eigen::VectorXd& y) : y_(y), n_(y.sum()) {
    if ((y.array() < 0).any())
      throw std::invalid_argument("GridLikelihood: negative counts");
  }

  long size() const { return y_.size(); }
  double n() const { return n_; }
  const Eigen::VectorXd& y() const { return y_; }

  struct State {
    Eigen::VectorXd u;
    double loglik = 0.0;
    Eigen::VectorXd grad;
  };

  State eval(const Eigen::VectorXd& f) const {
    State s;
    s.u = softmax(f);
    s.loglik = (n_ == 0.0) ? 0.0 : y_.dot(f) - n_ * logsumexp(f);
    s.grad = y_ - n_ * s.u;
    return s;
  }

  Eigen::VectorXd apply_W(const State& s, const Eigen::VectorXd& v) const {
    return curvature_apply({s.u, n_}, v, CurvatureMode::W);
  }
  Eigen::VectorXd apply_R(const State& s, const Eigen::VectorXd& v) const {
    return curvature_apply({s.u, n_}, v, CurvatureMode::R);
  }
  Eigen::VectorXd apply_Rt(const State& s, const Eigen::VectorXd& v) const {
    return curvature_apply({s.u, n_}, v, CurvatureMode::Rt);
  }

  // M * R, exploiting R = sqrt(n) (D^1/2 - u su^T) with su = u^(1/2).
  Eigen::MatrixXd right_mult_R(const State& s, const Eigen::MatrixXd& M) const {
    const Eigen::VectorXd su = s.u.cwiseSqrt();
    Eigen::MatrixXd out = M * su.asDiagonal();
    out.noalias() -= (M * s.u) * su.transpose();
    return std::sqrt(n_) * out;
  }
  // R^T * M.
  Eigen::MatrixXd left_mult_Rt(const State& s, const Eigen::MatrixXd& M) const {
    const Eigen::VectorXd su = s.u.cwiseSqrt();
    Eigen::MatrixXd out = su.asDiagonal() * M;
    out.noalias() -= su * (s.u.transpose() * M);
    return std::sqrt(n_) * out;
  }

  Eigen::MatrixXd form_A(const State& s, const Eigen::MatrixXd& C) const {
    Eigen::MatrixXd A = left_mult_Rt(s, right_mult_R(s, C));
    A.diagonal().array() += 1.0;
    return A;
  }

  // W * M without forming W.
  Eigen::MatrixXd W_mat(const State& s, const Eigen::MatrixXd& M) const {
    Eigen::MatrixXd out = s.u.asDiagonal() * M;
    out.noalias() -= s.u * (s.u.transpose() * M);
    return n_ * out;
  }

  double trace_W_X(const State& s, const Eigen::MatrixXd& X) const {
    return n_ * (s.u.dot(X.diagonal()) - s.u.dot(X * s.u));
  }

  // s2_i = -1/2 tr(Sigma dW/df_i), the marginal-likelihood sensitivity of the
  // log determinant to the mode.
  Eigen::VectorXd s2_dense(const State& s, const Eigen::MatrixXd& Sigma) const {
    const Eigen::VectorXd sd = Sigma.diagonal();
    const Eigen::VectorXd t = Sigma * s.u;
    const double us = s.u.dot(sd);
    const double ut = s.u.dot(t);
    return (-0.5 * n_ * s.u.array() *
            ((sd.array() - us) - 2.0 * (t.array() - ut)))
        .matrix();
  }

 private:
  Eigen::VectorXd y_;
  double n_ = 0.0;
};

// ---------------------------------------------------------------------------
// Density regression: m_x predictor slices, each with its own softmax over
// m_t target cells. Flat layout: cell (ix, it) -> ix * m_t + it.

struct RegressionBlocks {
  int m_x = 0;
  int m_t = 0;
  Eigen::VectorXd y;        // length m_x * m_t
  Eigen::VectorXd slice_n;  // per-slice totals
};

inline RegressionBlocks make_regression_blocks(const Eigen::VectorXd& y, int m_x,
                                               int m_t) {
  if (y.size() != static_cast<long>(m_x) * m_t)
    throw std::invalid_argument("make_regression_blocks: layout mismatch");
  RegressionBlocks b;
  b.m_x = m_x;
  b.m_t = m_t;
  b.y = y;
  b.slice_n.resize(m_x);
  for (int i = 0; i < m_x; ++i) b.slice_n(i) = y.segment(i * m_t, m_t).sum();
  return b;
}

class SlicedLikelihood {
 public:
  explicit SlicedLikelihood(RegressionBlocks blocks) : b_(std::move(blocks)) {}

  long size() const { return b_.y.size(); }
  double n() const { return b_.slice_n.sum(); }
  const RegressionBlocks& blocks() const { return b_; }
  const Eigen::VectorXd& y() const { return b_.y; }

  struct State {
    Eigen::VectorXd u;  // per-slice softmax, concatenated
    double loglik = 0.0;
    Eigen::VectorXd grad;
  };

  State eval(const Eigen::VectorXd& f) const {
    State s;
    s.u.resize(f.size());
    s.grad.resize(f.size());
    s.loglik = 0.0;
    for (int i = 0; i < b_.m_x; ++i) {
      const auto fi = f.segment(i * b_.m_t, b_.m_t);
      const auto yi = b_.y.segment(i * b_.m_t, b_.m_t);
      const Eigen::VectorXd ui = softmax(fi);
      s.u.segment(i * b_.m_t, b_.m_t) = ui;
      const double ni = b_.slice_n(i);
      if (ni > 0.0) s.loglik += yi.dot(fi) - ni * logsumexp(fi);
      s.grad.segment(i * b_.m_t, b_.m_t) = yi - ni * ui;
    }
    return s;
  }

  Eigen::VectorXd apply_W(const State& s, const Eigen::VectorXd& v) const {
    return apply(s, v, CurvatureMode::W);
  }
  Eigen::VectorXd apply_R(const State& s, const Eigen::VectorXd& v) const {
    return apply(s, v, CurvatureMode::R);
  }
  Eigen::VectorXd apply_Rt(const State& s, const Eigen::VectorXd& v) const {
    return apply(s, v, CurvatureMode::Rt);
  }

  Eigen::MatrixXd right_mult_R(const State& s, const Eigen::MatrixXd& M) const {
    Eigen::MatrixXd out(M.rows(), M.cols());
    for (int i = 0; i < b_.m_x; ++i) {
      const auto ui = s.u.segment(i * b_.m_t, b_.m_t);
      const Eigen::VectorXd su = ui.cwiseSqrt();
      const auto Mi = M.middleCols(i * b_.m_t, b_.m_t);
      out.middleCols(i * b_.m_t, b_.m_t) =
          std::sqrt(b_.slice_n(i)) *
          (Mi * su.asDiagonal() - (Mi * ui) * su.transpose());
    }
    return out;
  }
  Eigen::MatrixXd left_mult_Rt(const State& s, const Eigen::MatrixXd& M) const {
    Eigen::MatrixXd out(M.rows(), M.cols());
    for (int i = 0; i < b_.m_x; ++i) {
      const auto ui = s.u.segment(i * b_.m_t, b_.m_t);
      const Eigen::VectorXd su = ui.cwiseSqrt();
      const auto Mi = M.middleRows(i * b_.m_t, b_.m_t);
      out.middleRows(i * b_.m_t, b_.m_t) =
          std::sqrt(b_.slice_n(i)) *
          (su.asDiagonal() * Mi - su * (ui.transpose() * Mi));
    }
    return out;
  }

  Eigen::MatrixXd form_A(const State& s, const Eigen::MatrixXd& C) const {
    Eigen::MatrixXd A = left_mult_Rt(s, right_mult_R(s, C));
    A.diagonal().array() += 1.0;
    return A;
  }

  Eigen::MatrixXd W_mat(const State& s, const Eigen::MatrixXd& M) const {
    Eigen::MatrixXd out(M.rows(), M.cols());
    for (int i = 0; i < b_.m_x; ++i) {
      const auto ui = s.u.segment(i * b_.m_t, b_.m_t);
      const auto Mi = M.middleRows(i * b_.m_t, b_.m_t);
      out.middleRows(i * b_.m_t, b_.m_t) =
          b_.slice_n(i) * (ui.asDiagonal() * Mi - ui * (ui.transpose() * Mi));
    }
    return out;
  }

  double trace_W_X(const State& s, const Eigen::MatrixXd& X) const {
    double tr = 0.0;
    for (int i = 0; i < b_.m_x; ++i) {
      const auto ui = s.u.segment(i * b_.m_t, b_.m_t);
      const auto Xi = X.block(i * b_.m_t, i * b_.m_t, b_.m_t, b_.m_t);
      tr += b_.slice_n(i) * (ui.dot(Xi.diagonal()) - ui.dot(Xi * ui));
    }
    return tr;
  }

  Eigen::VectorXd s2_dense(const State& s, const Eigen::MatrixXd& Sigma) const {
    Eigen::VectorXd s2(s.u.size());
    for (int i = 0; i < b_.m_x; ++i) {
      const auto ui = s.u.segment(i * b_.m_t, b_.m_t);
      const auto Si = Sigma.block(i * b_.m_t, i * b_.m_t, b_.m_t, b_.m_t);
      const Eigen::VectorXd sd = Si.diagonal();
      const Eigen::VectorXd t = Si * ui;
      const double us = ui.dot(sd);
      const double ut = ui.dot(t);
      s2.segment(i * b_.m_t, b_.m_t) = (-0.5 * b_.slice_n(i) * ui.array() *
                                        ((sd.array() - us) - 2.0 * (t.array() - ut)))
                                           .matrix();
    }
    return s2;
  }

 private:
  Eigen::VectorXd apply(const State& s, const Eigen::VectorXd& v,
                        CurvatureMode mode) const {
    Eigen::VectorXd out(v.size());
    for (int i = 0; i < b_.m_x; ++i) {
      SoftmaxState block{s.u.segment(i * b_.m_t, b_.m_t), b_.slice_n(i)};
      out.segment(i * b_.m_t, b_.m_t) =
          curvature_apply(block, v.segment(i * b_.m_t, b_.m_t), mode);
    }
    return out;
  }

  RegressionBlocks b_;
};

}  // namespace lgp
