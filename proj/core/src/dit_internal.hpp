// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <span>

#include "storyweave/toy_dit.hpp"

namespace storyweave::detail {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

/// Row-wise layer norm; fills rstd with 1/sqrt(var + eps) per row.
inline Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, Vector* rstd) {
  Matrix out(x.rows(), x.cols());
  if (rstd) rstd->resize(x.rows());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    if (rstd) (*rstd)(r) = inv;
    out.row(r) = ((x.row(r).array() - mean) * inv * gain.transpose().array() + bias.transpose().array()).matrix();
  }
  return out;
}

/// Backward of layer_norm given its input and saved rstd.
inline Matrix layer_norm_backward(const Matrix& x, const Vector& gain, const Vector& rstd, const Matrix& dy) {
  Matrix dx(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const Eigen::ArrayXd xhat = (x.row(r).array() - mean).transpose() * rstd(r);
    const Eigen::ArrayXd dxhat = dy.row(r).transpose().array() * gain.array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xhat).mean();
    dx.row(r) = (rstd(r) * (dxhat - m1 - xhat * m2)).matrix().transpose();
  }
  return dx;
}

inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

inline double gelu_grad(double u) {
  const double th = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

/// x * w^T with rows [0, split) and [split, end) multiplied as separate blocks.
inline Matrix split_product(const Matrix& x, const Matrix& w, Eigen::Index split) {
  Matrix out(x.rows(), w.rows());
  const Eigen::Index tail = x.rows() - split;
  if (split > 0) {
    const Matrix head_rows = x.topRows(split);
    out.topRows(split) = head_rows * w.transpose();
  }
  if (tail > 0) {
    const Matrix tail_rows = x.bottomRows(tail);
    out.bottomRows(tail) = tail_rows * w.transpose();
  }
  return out;
}

/// Rows of z where mask is set, zero elsewhere.
inline Matrix masked_rows(const Matrix& z, std::span<const std::uint8_t> mask) {
  Matrix out = Matrix::Zero(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    if (mask[static_cast<std::size_t>(r)] != 0) out.row(r) = z.row(r);
  }
  return out;
}

}  // namespace storyweave::detail
