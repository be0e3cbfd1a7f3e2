#include <catch2/catch_amalgamated.hpp>

#include "lgp/hyper.hpp"
#include "test_util.hpp"

using namespace lgp;
using test_util::make_problem_1d;

TEST_CASE("MAP optimization reaches a stationary point and ascends") {
  auto p = make_problem_1d(30, 50, 21);
  GridLikelihood lik(p.data.counts.cast<double>());
  HyperPrior prior = HyperPrior::defaults(1);
  Hyperparameters init = Hyperparameters::zeros(1);

  LaplaceObjective<GridLikelihood> obj(p.Xn, p.basis, lik, prior);
  Eigen::VectorXd g0(2);
  const double f0 = obj(init.to_vector(), &g0);

  auto map = map_optimize(p.Xn, p.basis, lik, prior, init);
  CHECK(map.converged);
  CHECK(-map.log_post <= f0 + 1e-12);  // objective did not get worse

  Eigen::VectorXd g(2);
  LaplaceObjective<GridLikelihood> check(p.Xn, p.basis, lik, prior);
  check(map.theta.to_vector(), &g);
  CHECK(g.lpNorm<Eigen::Infinity>() <= 1e-4);
}

TEST_CASE("two starting points agree on the optimum") {
  auto p = make_problem_1d(30, 50, 22);
  GridLikelihood lik(p.data.counts.cast<double>());
  HyperPrior prior = HyperPrior::defaults(1);

  Hyperparameters a = Hyperparameters::zeros(1);
  Hyperparameters b = Hyperparameters::zeros(1);
  b.log_sigma2 = 1.0;
  b.log_lengthscales(0) = -1.0;
  auto ra = map_optimize(p.Xn, p.basis, lik, prior, a);
  auto rb = map_optimize(p.Xn, p.basis, lik, prior, b);
  CHECK(std::abs(ra.log_post - rb.log_post) < 1e-3);
}

TEST_CASE("mismatched hyperparameters lower the marginal likelihood") {
  auto p = make_problem_1d(30, 80, 23);
  GridLikelihood lik(p.data.counts.cast<double>());
  HyperPrior prior = HyperPrior::defaults(1);
  auto map = map_optimize(p.Xn, p.basis, lik, prior, Hyperparameters::zeros(1));

  Hyperparameters bad = map.theta;
  bad.log_sigma2 += 5.0;
  bad.log_lengthscales(0) -= 4.0;
  PriorCov Cb = prior_cov(sqexp_cov(p.Xn, bad), p.basis,
                          default_jitter(bad.sigma2()));
  auto bad_fit = laplace_fit(Cb, lik);
  CHECK(bad_fit.log_marginal < map.fit.log_marginal);
}

TEST_CASE("CCD point counts") {
  CHECK(ccd_unit_points(2, 1.1).rows() == 9);
  CHECK(ccd_unit_points(3, 1.1).rows() == 15);
  // all non-center points on the sphere of radius f0 sqrt(k)
  for (int k : {2, 3}) {
    Eigen::MatrixXd z = ccd_unit_points(k, 1.1);
    for (int j = 1; j < z.rows(); ++j)
      CHECK(z.row(j).norm() == Catch::Approx(1.1 * std::sqrt(double(k))));
  }
}

TEST_CASE("CCD plan: exact for the matched Gaussian, collapse at tiny variance") {
  Eigen::VectorXd theta_star(2);
  theta_star << 0.3, -0.2;
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(2, 2) * 4.0;

  // posterior exactly Gaussian with the given Hessian: weights equal the
  // second-moment design weights
  auto gauss_post = [&](const Eigen::VectorXd& t) {
    return -0.5 * (t - theta_star).dot(H * (t - theta_star));
  };
  CcdPlan plan = make_ccd_plan(theta_star, H, gauss_post);
  REQUIRE(plan.thetas.rows() == 9);
  CHECK(!plan.fallback_map_only);
  CHECK(plan.mix_weights.sum() == Catch::Approx(1.0));
  CHECK(plan.mix_weights.minCoeff() > 0.0);
  CHECK(plan.mix_weights(0) == Catch::Approx(1.0 - 1.0 / 1.21));
  CHECK((plan.thetas.row(0).transpose() - theta_star).norm() == 0.0);

  // tiny posterior variance: the design numerically collapses onto the mode
  Eigen::MatrixXd Htiny = Eigen::MatrixXd::Identity(2, 2) * 1e14;
  CcdPlan tiny = make_ccd_plan(theta_star, Htiny, gauss_post);
  for (int j = 0; j < tiny.thetas.rows(); ++j)
    CHECK((tiny.thetas.row(j).transpose() - theta_star).lpNorm<Eigen::Infinity>() <
          1e-6);

  // non-PD Hessian falls back to the MAP point
  Eigen::MatrixXd bad = -Eigen::MatrixXd::Identity(2, 2);
  CcdPlan fb = make_ccd_plan(theta_star, bad, gauss_post);
  CHECK(fb.fallback_map_only);
  CHECK(fb.thetas.rows() == 1);
}

TEST_CASE("mixing a constant predictor returns the constant") {
  Eigen::VectorXd probs(4);
  probs << 0.1, 0.2, 0.3, 0.4;
  std::vector<DensityPosterior> parts(3);
  for (auto& part : parts) {
    part.probs = probs.replicate(1, 8);
    part.weights = Eigen::VectorXd::Constant(8, 1.0);
    part.finalize();
  }
  Eigen::VectorXd w(3);
  w << 0.5, 0.3, 0.2;
  DensityPosterior mixed = mix_posteriors(parts, w);
  CHECK((mixed.mean - probs).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(mixed.weights.sum() == Catch::Approx(1.0));
  CHECK(std::abs(mixed.mean.sum() - 1.0) < 1e-10);
}

TEST_CASE("finite-difference Hessian of a quadratic is exact") {
  Eigen::MatrixXd A(2, 2);
  A << 3.0, 0.7, 0.7, 2.0;
  auto grad_fn = [&](const Eigen::VectorXd& x) { return (A * x).eval(); };
  Eigen::MatrixXd H = fd_hessian(grad_fn, Eigen::VectorXd::Zero(2));
  CHECK((H - A).cwiseAbs().maxCoeff() < 1e-8);
}
