// Fast symmetric-Toeplitz matrix-vector products through circulant embedding.
// A stationary kernel on an even 1D grid yields a Toeplitz covariance; the
// product K v becomes a convolution evaluated in the frequency domain, so only
// the first row of K is ever stored.
#pragma once

#include <unsupported/Eigen/FFT>

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>

namespace lgp {

class ToeplitzOp {
 public:
  explicit ToeplitzOp(const Eigen::VectorXd& first_row)
      : m_(first_row.size()) {
    if (m_ < 1) throw std::invalid_argument("ToeplitzOp: empty first row");
    nfft_ = 1;
    while (nfft_ < 2 * m_ - 1) nfft_ *= 2;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(nfft_);
    for (long j = 0; j < m_; ++j) c(j) = first_row(j);
    for (long j = 1; j < m_; ++j) c(nfft_ - j) = first_row(j);
    spectrum_.resize(nfft_);
    Eigen::FFT<double> fft;
    fft.fwd(spectrum_, c);
  }

  long size() const { return m_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    if (v.size() != m_)
      throw std::invalid_argument("ToeplitzOp: vector length does not match first row");
    Eigen::VectorXd padded = Eigen::VectorXd::Zero(nfft_);
    padded.head(m_) = v;
    Eigen::VectorXcd vf(nfft_);
    Eigen::FFT<double> fft;
    fft.fwd(vf, padded);
    vf = vf.cwiseProduct(spectrum_);
    Eigen::VectorXd conv(nfft_);
    fft.inv(conv, vf);
    return conv.head(m_);
  }

 private:
  long m_ = 0;
  long nfft_ = 0;
  Eigen::VectorXcd spectrum_;
};

}  // namespace lgp
