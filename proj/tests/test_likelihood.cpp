#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <random>

#include "lgp/likelihood.hpp"

using namespace lgp;

namespace {

Eigen::VectorXd random_vec(int m, unsigned seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd v(m);
  for (int i = 0; i < m; ++i) v(i) = nd(gen);
  return v;
}

Eigen::MatrixXd dense_W(const SoftmaxState& s) {
  return s.n * (Eigen::MatrixXd(s.u.asDiagonal()) - s.u * s.u.transpose());
}

}  // namespace

TEST_CASE("softmax basics") {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(5);
  CHECK((softmax(f) - Eigen::VectorXd::Constant(5, 0.2)).cwiseAbs().maxCoeff() <
        1e-15);

  Eigen::VectorXd f2(2);
  f2 << std::log(1.0), std::log(3.0);
  Eigen::VectorXd u2 = softmax(f2);
  CHECK(u2(0) == Catch::Approx(0.25));
  CHECK(u2(1) == Catch::Approx(0.75));

  Eigen::VectorXd f3 = random_vec(9, 3);
  Eigen::VectorXd shifted = f3.array() + 37.5;
  CHECK((softmax(f3) - softmax(shifted)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(softmax(f3).sum() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("log likelihood and gradient") {
  Eigen::VectorXd y(2), f = Eigen::VectorXd::Zero(2);
  y << 2.0, 1.0;
  auto [lp, grad] = log_lik_and_grad(y, f);
  CHECK(lp == Catch::Approx(-3.0 * std::log(2.0)));
  CHECK(grad(0) == Catch::Approx(0.5));
  CHECK(grad(1) == Catch::Approx(-0.5));

  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(4);
  auto [lp0, grad0] = log_lik_and_grad(y0, random_vec(4, 1));
  CHECK(lp0 == 0.0);
  CHECK(grad0.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("log likelihood gradient matches finite differences") {
  const int m = 15;
  std::mt19937_64 gen(17);
  std::uniform_int_distribution<int> cd(0, 6);
  Eigen::VectorXd y(m);
  for (int i = 0; i < m; ++i) y(i) = cd(gen);
  Eigen::VectorXd f = random_vec(m, 18);
  auto [lp, grad] = log_lik_and_grad(y, f);
  const double h = 1e-6;
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd fp = f, fm = f;
    fp(i) += h;
    fm(i) -= h;
    const double fd =
        (log_lik_and_grad(y, fp).first - log_lik_and_grad(y, fm).first) /
        (2.0 * h);
    CHECK(std::abs(grad(i) - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
  }
}

TEST_CASE("adding a constant leaves the likelihood unchanged") {
  Eigen::VectorXd y(6);
  y << 1, 0, 4, 2, 0, 3;
  Eigen::VectorXd f = random_vec(6, 2);
  const double a = log_lik_and_grad(y, f).first;
  const double b = log_lik_and_grad(y, Eigen::VectorXd(f.array() + 11.0)).first;
  CHECK(std::abs(a - b) < 1e-10);
}

TEST_CASE("curvature structure") {
  const int m = 50;
  SoftmaxState s = softmax_u(random_vec(m, 4), 23.0);

  // W annihilates constants exactly
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
  CHECK(curvature_apply(s, ones, CurvatureMode::W).cwiseAbs().maxCoeff() <
        1e-14);

  // R R^T v = W v
  for (unsigned seed : {5u, 6u, 7u}) {
    Eigen::VectorXd v = random_vec(m, seed);
    Eigen::VectorXd rrt = curvature_apply(
        s, curvature_apply(s, v, CurvatureMode::Rt), CurvatureMode::R);
    Eigen::VectorXd wv = curvature_apply(s, v, CurvatureMode::W);
    CHECK((rrt - wv).norm() / wv.norm() < 1e-10);
    CHECK(v.dot(wv) >= -1e-12);  // positive semidefinite
  }

  // dense eigencheck: one zero eigenvalue, rest non-negative
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_W(s));
  CHECK(es.eigenvalues().minCoeff() > -1e-10);
  CHECK(std::abs(es.eigenvalues()(0)) < 1e-10);
}

TEST_CASE("single-slice regression reduces to the grid likelihood") {
  Eigen::VectorXd y(5);
  y << 2, 0, 1, 3, 0;
  SlicedLikelihood sliced(make_regression_blocks(y, 1, 5));
  GridLikelihood grid(y);
  Eigen::VectorXd f = random_vec(5, 9);
  auto gs = grid.eval(f);
  auto ss = sliced.eval(f);
  CHECK(ss.loglik == Catch::Approx(gs.loglik));
  CHECK((ss.grad - gs.grad).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::VectorXd v = random_vec(5, 10);
  CHECK((sliced.apply_W(ss, v) - grid.apply_W(gs, v)).cwiseAbs().maxCoeff() <
        1e-14);
}

TEST_CASE("regression blocks: empty slices and dense oracle") {
  const int mx = 3, mt = 5, m = mx * mt;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  y(0) = 2;
  y(3) = 1;           // slice 0: n=3
  /* slice 1 empty */ // n=0
  y(11) = 4;          // slice 2: n=4
  SlicedLikelihood lik(make_regression_blocks(y, mx, mt));
  Eigen::VectorXd f = random_vec(m, 21);
  auto s = lik.eval(f);

  // empty slice contributes nothing
  Eigen::VectorXd f2 = f;
  f2.segment(mt, mt).array() += 2.3;
  CHECK(lik.eval(f2).loglik == Catch::Approx(s.loglik));

  // block-diagonal W against an explicitly assembled dense matrix
  Eigen::MatrixXd Wd = Eigen::MatrixXd::Zero(m, m);
  for (int b = 0; b < mx; ++b) {
    SoftmaxState bs{s.u.segment(b * mt, mt), lik.blocks().slice_n(b)};
    Wd.block(b * mt, b * mt, mt, mt) = dense_W(bs);
  }
  for (unsigned seed : {31u, 32u}) {
    Eigen::VectorXd v = random_vec(m, seed);
    Eigen::VectorXd wv = lik.apply_W(s, v);
    CHECK((wv - Wd * v).norm() / (Wd * v).norm() < 1e-10);
    Eigen::VectorXd rrt = lik.apply_R(s, lik.apply_Rt(s, v));
    CHECK((rrt - Wd * v).norm() / (Wd * v).norm() < 1e-10);
  }

  // per-slice constants are annihilated
  Eigen::VectorXd c(m);
  for (int b = 0; b < mx; ++b) c.segment(b * mt, mt).setConstant(b + 1.0);
  CHECK(lik.apply_W(s, c).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("structured matrix products match dense composition") {
  const int m = 12;
  Eigen::VectorXd y(m);
  std::mt19937_64 gen(40);
  std::uniform_int_distribution<int> cd(0, 4);
  for (int i = 0; i < m; ++i) y(i) = cd(gen);
  GridLikelihood lik(y);
  Eigen::VectorXd f = random_vec(m, 41);
  auto s = lik.eval(f);

  // dense R from columnwise application
  Eigen::MatrixXd Rd(m, m);
  for (int j = 0; j < m; ++j)
    Rd.col(j) = lik.apply_R(s, Eigen::VectorXd::Unit(m, j));
  Eigen::MatrixXd C = random_vec(m * m, 42).reshaped(m, m);
  C = (C * C.transpose()).eval();
  CHECK((lik.right_mult_R(s, C) - C * Rd).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((lik.left_mult_Rt(s, C) - Rd.transpose() * C).cwiseAbs().maxCoeff() <
        1e-10);
  Eigen::MatrixXd A_ref =
      Eigen::MatrixXd::Identity(m, m) + Rd.transpose() * C * Rd;
  CHECK((lik.form_A(s, C) - A_ref).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((lik.W_mat(s, C) - dense_W({s.u, lik.n()}) * C).cwiseAbs().maxCoeff() <
        1e-10);
}
