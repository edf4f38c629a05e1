#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "model.hpp"

// Shared numeric kernels for the forward and backward passes.
namespace haca::detail {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu_value(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_derivative(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

inline void layer_norm_forward(const Mat& x, const Vec& gamma, const Vec& beta, Mat& out,
                               Mat& xhat, Vec& rstd) {
  const auto t = x.rows();
  const auto d = x.cols();
  out.resize(t, d);
  xhat.resize(t, d);
  rstd.resize(t);
  for (Eigen::Index i = 0; i < t; ++i) {
    const double mu = x.row(i).mean();
    const Eigen::RowVectorXd centered = x.row(i).array() - mu;
    const double var = centered.array().square().mean();
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd(i) = r;
    xhat.row(i) = centered * r;
    out.row(i) = (xhat.row(i).array() * gamma.transpose().array() + beta.transpose().array()).matrix();
  }
}

// dx for y = xhat * gamma + beta, xhat = (x - mu) * rstd. Accumulates the
// gamma/beta gradients.
inline Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const Vec& gamma,
                               Vec& dgamma, Vec& dbeta) {
  const auto t = dy.rows();
  const auto d = dy.cols();
  Mat dx(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    dgamma += (dy.row(i).array() * xhat.row(i).array()).matrix().transpose();
    dbeta += dy.row(i).transpose();
    const Eigen::RowVectorXd dxhat = (dy.row(i).array() * gamma.transpose().array()).matrix();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat.array() * xhat.row(i).array()).mean();
    dx.row(i) = ((dxhat.array() - m1 - xhat.row(i).array() * m2) * rstd(i)).matrix();
  }
  return dx;
}

inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

}  // namespace haca::detail
