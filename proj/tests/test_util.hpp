// Shared fixtures for the test suite.
#pragma once

#include <random>

#include "lgp/grid.hpp"
#include "lgp/kernel.hpp"
#include "lgp/likelihood.hpp"

namespace test_util {

// Draws from 1/2 N(-2,1) + 1/2 N(2, 2^2), the running 1D example.
inline Eigen::MatrixXd gaussian_mixture_points(int n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud;
  Eigen::MatrixXd pts(n, 1);
  for (int i = 0; i < n; ++i)
    pts(i, 0) = (ud(gen) < 0.5) ? -2.0 + nd(gen) : 2.0 + 2.0 * nd(gen);
  return pts;
}

struct Problem1D {
  lgp::Grid grid;
  lgp::BinnedData data;
  Eigen::MatrixXd Xn;
  lgp::BasisPrior basis;
};

inline Problem1D make_problem_1d(int m, int n, unsigned seed,
                                 double lo = -8.0, double hi = 8.0) {
  Problem1D p;
  p.grid = lgp::build_grid({{lo, hi}}, {m});
  Eigen::MatrixXd pts = gaussian_mixture_points(n, seed);
  for (int i = 0; i < n; ++i)
    pts(i, 0) = std::clamp(pts(i, 0), lo + 1e-9, hi - 1e-9);
  p.data = lgp::bin_data(p.grid, pts);
  p.Xn = p.grid.normalized_centers();
  p.basis = lgp::make_basis_prior(p.Xn);
  return p;
}

inline lgp::PriorCov prior_at(const Problem1D& p, const lgp::Hyperparameters& th) {
  Eigen::MatrixXd K = lgp::sqexp_cov(p.Xn, th);
  return lgp::prior_cov(K, p.basis, lgp::default_jitter(th.sigma2()));
}

}  // namespace test_util
