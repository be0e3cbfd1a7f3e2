#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <unsupported/Eigen/KroneckerProduct>

#include "lgp/grid.hpp"
#include "lgp/kernel.hpp"

using namespace lgp;

namespace {

Eigen::MatrixXd random_coords(int m, int d, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd X(m, d);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < d; ++k) X(i, k) = nd(gen);
  return X;
}

}  // namespace

TEST_CASE("squared exponential closed-form values") {
  Hyperparameters th = Hyperparameters::zeros(1);
  th.log_sigma2 = std::log(2.7);
  Eigen::MatrixXd X = random_coords(6, 1, 1);
  Eigen::MatrixXd K = sqexp_cov(X, th);
  for (int i = 0; i < 6; ++i) CHECK(K(i, i) == Catch::Approx(2.7));

  // sigma2 = 1, l = 1/2, |dx| = 1 -> exp(-2)
  Hyperparameters th2 = Hyperparameters::zeros(1);
  th2.log_lengthscales(0) = std::log(0.5);
  Eigen::MatrixXd X2(2, 1);
  X2 << 0.0, 1.0;
  Eigen::MatrixXd K2 = sqexp_cov(X2, th2);
  CHECK(K2(0, 1) == Catch::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("kernel gradients match central finite differences") {
  for (int d : {1, 2}) {
    Eigen::MatrixXd X = random_coords(8, d, 7 + d);
    Hyperparameters th = Hyperparameters::zeros(d);
    th.log_sigma2 = 0.3;
    for (int k = 0; k < d; ++k) th.log_lengthscales(k) = -0.2 + 0.1 * k;
    SqExpCov kc = sqexp_cov_and_grads(X, th);
    const double h = 1e-6;
    for (int j = 0; j < 1 + d; ++j) {
      Eigen::VectorXd v = th.to_vector();
      Eigen::VectorXd vp = v, vm = v;
      vp(j) += h;
      vm(j) -= h;
      Eigen::MatrixXd fd = (sqexp_cov(X, Hyperparameters::from_vector(vp)) -
                            sqexp_cov(X, Hyperparameters::from_vector(vm))) /
                           (2.0 * h);
      const double rel = (kc.dK[j] - fd).norm() / fd.norm();
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("kernel is symmetric with entries in (0, sigma2]") {
  Eigen::MatrixXd X = random_coords(12, 2, 3);
  Hyperparameters th = Hyperparameters::zeros(2);
  th.log_sigma2 = std::log(1.7);
  Eigen::MatrixXd K = sqexp_cov(X, th);
  CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(K.minCoeff() > 0.0);
  CHECK(K.maxCoeff() <= 1.7 + 1e-15);
}

TEST_CASE("regular 1D lattice gives a Toeplitz kernel") {
  Grid g = build_grid({{0.0, 2.0}}, {16});
  Hyperparameters th = Hyperparameters::zeros(1);
  Eigen::MatrixXd K = sqexp_cov(g.normalized_centers(), th);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      CHECK(K(i, j) == Catch::Approx(K(0, std::abs(i - j))).margin(1e-14));
}

TEST_CASE("separable kernel on a 2D lattice is a Kronecker product") {
  Grid g = build_grid({{0.0, 1.0}, {-1.0, 3.0}}, {4, 5});
  Hyperparameters th = Hyperparameters::zeros(2);
  th.log_sigma2 = std::log(1.3);
  th.log_lengthscales << -0.1, 0.4;
  Eigen::MatrixXd Xn = g.normalized_centers();
  Eigen::MatrixXd K = sqexp_cov(Xn, th);

  // unique per-dim coordinates: dim 0 varies slowest
  Eigen::VectorXd x1(4), x2(5);
  for (int i = 0; i < 4; ++i) x1(i) = Xn(i * 5, 0);
  for (int j = 0; j < 5; ++j) x2(j) = Xn(j, 1);
  Eigen::MatrixXd K1 = sqexp_factor(x1, th.log_lengthscales(0), th.sigma2());
  Eigen::MatrixXd K2 = sqexp_factor(x2, th.log_lengthscales(1), 1.0);
  Eigen::MatrixXd Kk = Eigen::kroneckerProduct(K1, K2);
  CHECK((K - Kk).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("basis matrix columns") {
  Eigen::MatrixXd x1(1, 1);
  x1 << 2.0;
  Eigen::MatrixXd H1 = basis_matrix(x1);
  CHECK(H1(0, 0) == 2.0);
  CHECK(H1(0, 1) == 4.0);

  Eigen::MatrixXd x2(1, 2);
  x2 << 1.0, -1.0;
  Eigen::MatrixXd H2 = basis_matrix(x2);
  CHECK(H2(0, 0) == 1.0);
  CHECK(H2(0, 1) == 1.0);
  CHECK(H2(0, 2) == -1.0);
  CHECK(H2(0, 3) == 1.0);
  CHECK(H2(0, 4) == -1.0);

  Eigen::MatrixXd x0 = Eigen::MatrixXd::Zero(1, 2);
  CHECK(basis_matrix(x0).cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd x3(1, 3);
  x3 << 1.0, 2.0, 3.0;
  CHECK_THROWS(basis_matrix(x3));
}

TEST_CASE("prior covariance handle") {
  Eigen::MatrixXd X = random_coords(10, 1, 11);
  Hyperparameters th = Hyperparameters::zeros(1);
  Eigen::MatrixXd K = sqexp_cov(X, th);
  K.diagonal().array() += 0.1;  // keep it comfortably positive definite

  BasisPrior empty;  // B = 0 case
  empty.H = Eigen::MatrixXd::Zero(10, 2);
  empty.b = Eigen::VectorXd::Zero(2);
  empty.B = Eigen::MatrixXd::Zero(2, 2);
  PriorCov c0 = prior_cov(K, empty, 0.0);
  CHECK((c0.dense() - K).cwiseAbs().maxCoeff() == 0.0);

  BasisPrior bp = make_basis_prior(X);
  PriorCov c = prior_cov(K, bp, 1e-8);
  CHECK((c.dense() - c.dense().transpose()).cwiseAbs().maxCoeff() == 0.0);

  // quadratic form through the cached factor vs an independent dense solve
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  Eigen::VectorXd f(10);
  for (int i = 0; i < 10; ++i) f(i) = nd(gen);
  const double q = c.quad(f);
  const double q_ref = f.dot(c.dense().fullPivLu().solve(f));
  CHECK(std::abs(q - q_ref) / std::abs(q_ref) < 1e-10);
}

TEST_CASE("half-Cauchy hyperprior") {
  HyperPrior prior = HyperPrior::defaults(1);
  const double s = prior.sigma.scale;
  CHECK(prior.sigma.log_density(0.0) == Catch::Approx(std::log(2.0 / (M_PI * s))));

  // density is monotone decreasing on (0, inf)
  double prev = prior.sigma.log_density(1e-6);
  for (double x : {0.5, 1.0, 2.0, 5.0, 50.0}) {
    const double cur = prior.sigma.log_density(x);
    CHECK(cur < prev);
    prev = cur;
  }

  // gradient in log-space matches finite differences
  Hyperparameters th = Hyperparameters::zeros(2);
  th.log_sigma2 = 0.7;
  th.log_lengthscales << -0.3, 0.2;
  HyperPrior p2 = HyperPrior::defaults(2);
  auto [lp, grad] = hyper_log_prior(th, p2);
  const double h = 1e-6;
  for (int j = 0; j < 3; ++j) {
    Eigen::VectorXd vp = th.to_vector(), vm = th.to_vector();
    vp(j) += h;
    vm(j) -= h;
    const double fd = (hyper_log_prior(Hyperparameters::from_vector(vp), p2).first -
                       hyper_log_prior(Hyperparameters::from_vector(vm), p2).first) /
                      (2.0 * h);
    CHECK(std::abs(grad(j) - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
  }
}
