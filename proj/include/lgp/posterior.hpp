// Posterior predictive machinery: Monte Carlo density samples on the grid,
// the continuous split-Gaussian importance proposal with self-normalized
// weights, the optional rising-tail rejection step (1D), and weighted
// mean/quantile summaries.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "lgp/laplace.hpp"
#include "lgp/likelihood.hpp"
#include "lgp/rng.hpp"

namespace lgp {

struct DensityPosterior {
  Eigen::MatrixXd probs;    // m x S cell probabilities, one column per sample
  Eigen::VectorXd weights;  // importance weights, normalized to sum one
  Eigen::VectorXd mean;     // weighted mean cell probabilities
  double ess = 0.0;         // Kong effective sample size of the weights
  int rejection_fallbacks = 0;  // samples kept after exhausting the retry cap
  bool weights_truncated = false;

  long size() const { return probs.cols(); }

  void finalize() {
    const double total = weights.sum();
    weights /= total;
    ess = 1.0 / weights.squaredNorm();
    mean = probs * weights;
  }
};

inline double kong_ess(const Eigen::VectorXd& w) {
  const double s = w.sum();
  return s * s / w.squaredNorm();
}

// Latent draws together with the proposal log-density (up to a constant
// shared by all samples, which self-normalized weights cancel).
struct LatentSamples {
  Eigen::MatrixXd F;          // m x S latent draws
  Eigen::VectorXd log_prop;   // proposal log-density per draw
  int rejection_fallbacks = 0;
};

// True when the cell probabilities never increase while moving outward from
// the occupied range [lo, hi] to either boundary.
inline bool tails_nonincreasing(const Eigen::VectorXd& probs, int lo, int hi) {
  for (int j = hi; j + 1 < probs.size(); ++j)
    if (probs(j + 1) > probs(j)) return false;
  for (int j = lo; j - 1 >= 0; --j)
    if (probs(j - 1) > probs(j)) return false;
  return true;
}

struct TailRejection {
  bool enabled = false;
  int lo = 0;  // outermost occupied cells
  int hi = 0;
  int cap = 50;

  static TailRejection from_counts(const Eigen::VectorXd& y, int cap = 50) {
    TailRejection r;
    r.cap = cap;
    int lo = -1, hi = -1;
    for (int i = 0; i < y.size(); ++i)
      if (y(i) > 0) {
        if (lo < 0) lo = i;
        hi = i;
      }
    if (lo >= 0) {
      r.enabled = true;
      r.lo = lo;
      r.hi = hi;
    }
    return r;
  }
};

// Factorized Gaussian proposal N(f_hat, Sigma) with per-axis split scales.
// Axes are the principal components of Sigma; the first `n_split` axes carry
// separate positive/negative scale factors fitted to the skewness of the
// target along that axis.
class SplitGaussianProposal {
 public:
  template <class L>
  SplitGaussianProposal(const LaplaceFit<L>& fit,
                        const std::function<double(const Eigen::VectorXd&)>&
                            log_target,
                        int max_split_axes = 50, bool force_unit = false) {
    if (!fit.sigma_ready)
      throw std::invalid_argument("SplitGaussianProposal: Sigma not prepared");
    f_hat_ = fit.mode.f_hat;
    const long m = f_hat_.size();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.Sigma);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("SplitGaussianProposal: eigendecomposition failed");
    // descending eigenvalue order
    V_.resize(m, m);
    sqrt_lam_.resize(m);
    for (long i = 0; i < m; ++i) {
      V_.col(i) = es.eigenvectors().col(m - 1 - i);
      sqrt_lam_(i) = std::sqrt(std::max(es.eigenvalues()(m - 1 - i), 0.0));
    }
    n_split_ = std::min<long>(max_split_axes, m);
    q_pos_ = Eigen::VectorXd::Ones(n_split_);
    q_neg_ = Eigen::VectorXd::Ones(n_split_);
    if (!force_unit) {
      const double l0 = log_target(f_hat_);
      for (long i = 0; i < n_split_; ++i) {
        if (sqrt_lam_(i) <= 0.0) continue;
        const Eigen::VectorXd dir = sqrt_lam_(i) * V_.col(i);
        q_pos_(i) = factor_from_drop(l0 - log_target(f_hat_ + dir));
        q_neg_(i) = factor_from_drop(l0 - log_target(f_hat_ - dir));
      }
    }
  }

  const Eigen::VectorXd& mode() const { return f_hat_; }
  const Eigen::VectorXd& split_pos() const { return q_pos_; }
  const Eigen::VectorXd& split_neg() const { return q_neg_; }

  // Draws S samples; per-sample RNG substreams keep the result independent of
  // batching and thread scheduling. Tail rejection, when enabled, retries a
  // draw up to `cap` times and then keeps the last one.
  LatentSamples draw(long count, std::uint64_t seed,
                     const TailRejection& reject = {}) const {
    const long m = f_hat_.size();
    LatentSamples out;
    out.F.resize(m, count);
    out.log_prop.resize(count);
    Eigen::VectorXd eps(m);
    for (long s = 0; s < count; ++s) {
      auto gen = substream(seed, static_cast<std::uint64_t>(s));
      std::normal_distribution<double> nd(0.0, 1.0);
      std::uniform_real_distribution<double> ud(0.0, 1.0);
      for (int attempt = 0;; ++attempt) {
        double lp = 0.0;
        for (long i = 0; i < m; ++i) {
          if (i < n_split_) {
            const double qp = q_pos_(i), qn = q_neg_(i);
            const bool pos = ud(gen) < qp / (qp + qn);
            const double q = pos ? qp : qn;
            const double z = std::abs(nd(gen));
            eps(i) = (pos ? 1.0 : -1.0) * q * z;
            lp += -0.5 * z * z - std::log(qp + qn);
          } else {
            eps(i) = nd(gen);
            lp += -0.5 * eps(i) * eps(i);
          }
        }
        Eigen::VectorXd f = f_hat_ + V_ * sqrt_lam_.cwiseProduct(eps);
        if (reject.enabled && attempt < reject.cap &&
            !tails_nonincreasing(softmax(f), reject.lo, reject.hi))
          continue;
        if (reject.enabled && attempt >= reject.cap) ++out.rejection_fallbacks;
        out.F.col(s) = f;
        out.log_prop(s) = lp;
        break;
      }
    }
    return out;
  }

  // Proposal log-density of an arbitrary point (up to the constant dropped in
  // draw()): transform back to axis coordinates.
  double log_density(const Eigen::VectorXd& f) const {
    Eigen::VectorXd eps = V_.transpose() * (f - f_hat_);
    double lp = 0.0;
    for (long i = 0; i < eps.size(); ++i) {
      const double sl = sqrt_lam_(i);
      const double e = (sl > 0.0) ? eps(i) / sl : 0.0;
      if (i < n_split_) {
        const double q = (e >= 0.0) ? q_pos_(i) : q_neg_(i);
        lp += -0.5 * (e / q) * (e / q) - std::log(q_pos_(i) + q_neg_(i));
      } else {
        lp += -0.5 * e * e;
      }
    }
    return lp;
  }

 private:
  static double factor_from_drop(double drop) {
    // Match a Gaussian whose log-density falls by `drop` one scaled standard
    // deviation from the mode (exactly 1/2 for the Gaussian itself).
    if (!(drop > 1e-8)) return 4.0;
    return std::clamp(1.0 / std::sqrt(2.0 * drop), 0.25, 4.0);
  }

  Eigen::VectorXd f_hat_;
  Eigen::MatrixXd V_;
  Eigen::VectorXd sqrt_lam_;
  Eigen::VectorXd q_pos_, q_neg_;
  long n_split_ = 0;
};

// Plain Gaussian draws from N(f_hat, Sigma) via the Cholesky factor of the
// inversion-lemma posterior covariance.
template <class L>
LatentSamples draw_gaussian_samples(const LaplaceFit<L>& fit, long count,
                                    std::uint64_t seed,
                                    const TailRejection& reject = {}) {
  if (!fit.sigma_ready)
    throw std::invalid_argument("draw_gaussian_samples: Sigma not prepared");
  const long m = fit.mode.f_hat.size();
  Eigen::MatrixXd S = fit.Sigma;
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  double j = 1e-12 * S.diagonal().mean();
  while (llt.info() != Eigen::Success) {
    S.diagonal().array() += j;
    j *= 10.0;
    if (j > S.diagonal().mean())
      throw std::runtime_error("draw_gaussian_samples: covariance factorization failed");
    llt.compute(S);
  }
  const Eigen::MatrixXd Lf = llt.matrixL();
  LatentSamples out;
  out.F.resize(m, count);
  out.log_prop.resize(count);
  for (long s = 0; s < count; ++s) {
    auto gen = substream(seed, static_cast<std::uint64_t>(s));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int attempt = 0;; ++attempt) {
      Eigen::VectorXd z(m);
      for (long i = 0; i < m; ++i) z(i) = nd(gen);
      Eigen::VectorXd f = fit.mode.f_hat + Lf * z;
      if (reject.enabled && attempt < reject.cap &&
          !tails_nonincreasing(softmax(f), reject.lo, reject.hi))
        continue;
      if (reject.enabled && attempt >= reject.cap) ++out.rejection_fallbacks;
      out.F.col(s) = f;
      out.log_prop(s) = -0.5 * z.squaredNorm();
      break;
    }
  }
  return out;
}

struct ImportanceConfig {
  double ess_threshold = 200.0;
  bool self_normalize = true;
};

// Self-normalized importance weights target/proposal. When the effective
// sample size drops below the threshold the weights are truncated at
// mean * sqrt(S) and renormalized.
inline DensityPosterior importance_correction(
    const std::function<double(const Eigen::VectorXd&)>& log_target,
    const LatentSamples& samples, const ImportanceConfig& cfg = {}) {
  const long S = samples.F.cols();
  DensityPosterior post;
  post.probs.resize(samples.F.rows(), S);
  Eigen::VectorXd logw(S);
  for (long s = 0; s < S; ++s) {
    const double lt = log_target(samples.F.col(s));
    if (!std::isfinite(lt))
      throw std::runtime_error("importance_correction: non-finite target log-density");
    logw(s) = lt - samples.log_prop(s);
    post.probs.col(s) = softmax(samples.F.col(s));
  }
  logw.array() -= logw.maxCoeff();
  post.weights = logw.array().exp();
  post.weights /= post.weights.sum();
  post.rejection_fallbacks = samples.rejection_fallbacks;
  post.ess = kong_ess(post.weights);
  if (post.ess < cfg.ess_threshold) {
    const double cap = post.weights.mean() * std::sqrt(static_cast<double>(S));
    post.weights = post.weights.cwiseMin(cap);
    post.weights_truncated = true;
  }
  post.finalize();
  return post;
}

// Uncorrected posterior: Gaussian draws with uniform weights.
template <class L>
DensityPosterior sample_posterior(const LaplaceFit<L>& fit, long count,
                                  std::uint64_t seed,
                                  const TailRejection& reject = {}) {
  LatentSamples ls = draw_gaussian_samples(fit, count, seed, reject);
  DensityPosterior post;
  post.probs.resize(ls.F.rows(), count);
  for (long s = 0; s < count; ++s) post.probs.col(s) = softmax(ls.F.col(s));
  post.weights = Eigen::VectorXd::Constant(count, 1.0);
  post.rejection_fallbacks = ls.rejection_fallbacks;
  post.finalize();
  return post;
}

inline double weighted_quantile(std::vector<std::pair<double, double>>& vw,
                                double p) {
  std::sort(vw.begin(), vw.end());
  double acc = 0.0;
  for (const auto& [v, w] : vw) {
    acc += w;
    if (acc >= p) return v;
  }
  return vw.back().first;
}

struct DensitySummary {
  Eigen::VectorXd mean;       // density per unit volume
  Eigen::MatrixXd quantiles;  // m x probs.size(), per unit volume
  std::vector<double> probs;
};

inline DensitySummary density_summary(const DensityPosterior& post,
                                      double cell_volume,
                                      std::vector<double> probs = {0.025,
                                                                   0.975}) {
  if (post.size() < 2)
    throw std::invalid_argument("density_summary: need at least 2 samples");
  DensitySummary out;
  out.probs = probs;
  out.mean = post.mean / cell_volume;
  const long m = post.probs.rows();
  out.quantiles.resize(m, static_cast<long>(probs.size()));
  std::vector<std::pair<double, double>> vw(post.size());
  for (long i = 0; i < m; ++i) {
    for (long s = 0; s < post.size(); ++s)
      vw[s] = {post.probs(i, s), post.weights(s)};
    // one sort per cell serves all requested quantiles
    std::sort(vw.begin(), vw.end());
    for (size_t pi = 0; pi < probs.size(); ++pi) {
      double acc = 0.0;
      double q = vw.back().first;
      for (const auto& [v, w] : vw) {
        acc += w;
        if (acc >= probs[pi]) {
          q = v;
          break;
        }
      }
      out.quantiles(i, static_cast<long>(pi)) = q / cell_volume;
    }
  }
  return out;
}

}  // namespace lgp
