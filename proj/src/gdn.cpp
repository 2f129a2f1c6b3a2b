#include "cae/gdn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

namespace cae {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

// Products read owned (aligned) copies so their summation order cannot
// depend on where the caller's buffers live. Square roots stay scalar:
// Eigen's packet sqrt is not correctly rounded, so a vectorized loop would
// give alignment-dependent results.
RowMat owned(const double* data, Eigen::Index rows, Eigen::Index cols) { return ConstMap(data, rows, cols); }

void check_params(const Tensor& input, std::span<const double> gamma, std::span<const double> beta) {
  const std::size_t c = input.channels();
  if (gamma.size() != c * c) {
    throw ShapeError("gdn: gamma has " + std::to_string(gamma.size()) + " entries, expected channels^2 = " + std::to_string(c * c));
  }
  if (beta.size() != c) {
    throw ShapeError("gdn: beta has " + std::to_string(beta.size()) + " entries, expected channels = " + std::to_string(c));
  }
  for (double b : beta) {
    if (!(b >= 0.0)) throw std::invalid_argument("gdn: beta must be nonnegative");
  }
  for (double g : gamma) {
    if (!(g >= 0.0)) throw std::invalid_argument("gdn: gamma must be nonnegative");
  }
}

// norm[p][c] = beta_c + sum_k gamma[c][k] x[p][k]^2
RowMat normalizer(const Tensor& input, std::span<const double> gamma, std::span<const double> beta) {
  const auto P = static_cast<Eigen::Index>(input.height() * input.width());
  const auto C = static_cast<Eigen::Index>(input.channels());
  const RowMat X2 = owned(input.data(), P, C).array().square();
  const RowMat Gt = owned(gamma.data(), C, C).transpose();
  RowMat norm = X2 * Gt;
  Eigen::Map<const Eigen::RowVectorXd> B(beta.data(), C);
  norm.rowwise() += B;
  if ((norm.array() <= 0.0).any()) throw std::domain_error("gdn: zero normalizer (beta = 0 with zero input)");
  return norm;
}

}  // namespace

Tensor gdn(const Tensor& input, std::span<const double> gamma, std::span<const double> beta, bool inverse) {
  check_params(input, gamma, beta);
  const RowMat norm = normalizer(input, gamma, beta);
  Tensor out(input.shape());
  const auto P = static_cast<Eigen::Index>(input.height() * input.width());
  const auto C = static_cast<Eigen::Index>(input.channels());
  const double* x = input.data();
  const double* nm = norm.data();
  double* y = out.data();
  for (Eigen::Index i = 0; i < P * C; ++i) {
    const double root = std::sqrt(nm[i]);
    y[i] = inverse ? x[i] * root : x[i] / root;
  }
  return out;
}

Tensor gdn_backward(const Tensor& output_grad, const Tensor& input, std::span<const double> gamma,
                    std::span<const double> beta, bool inverse, std::span<double> grad_gamma,
                    std::span<double> grad_beta) {
  check_params(input, gamma, beta);
  require_same_shape(output_grad, input, "gdn_backward");
  const auto P = static_cast<Eigen::Index>(input.height() * input.width());
  const auto C = static_cast<Eigen::Index>(input.channels());
  const RowMat norm = normalizer(input, gamma, beta);
  const RowMat X = owned(input.data(), P, C);
  const RowMat Gout = owned(output_grad.data(), P, C);
  const RowMat Gam = owned(gamma.data(), C, C);

  // a[p][c] = d y_c / d norm_c * g_c
  RowMat a(P, C);
  RowMat direct(P, C);
  for (Eigen::Index i = 0; i < P * C; ++i) {
    const double root = std::sqrt(norm.data()[i]);
    const double g = Gout.data()[i], x = X.data()[i];
    if (inverse) {
      a.data()[i] = 0.5 * g * x / root;
      direct.data()[i] = g * root;
    } else {
      const double r = 1.0 / root;
      a.data()[i] = -0.5 * g * x * r / norm.data()[i];
      direct.data()[i] = g * r;
    }
  }
  Tensor grad_in(input.shape());
  const RowMat ag = a * Gam;
  for (Eigen::Index i = 0; i < P * C; ++i) grad_in.data()[i] = direct.data()[i] + 2.0 * X.data()[i] * ag.data()[i];

  const RowMat X2 = X.array().square();
  const RowMat at = a.transpose();
  const RowMat gg = at * X2;
  for (std::size_t i = 0; i < grad_gamma.size(); ++i) grad_gamma[i] += gg.data()[i];
  for (Eigen::Index c = 0; c < C; ++c) {
    double s = 0.0;
    for (Eigen::Index p = 0; p < P; ++p) s += a(p, c);
    grad_beta[static_cast<std::size_t>(c)] += s;
  }
  return grad_in;
}

void gdn_effective_params(std::span<const double> gamma_param, std::span<const double> beta_param,
                          std::span<double> gamma, std::span<double> beta) {
  for (std::size_t i = 0; i < gamma_param.size(); ++i) gamma[i] = gamma_param[i] * gamma_param[i];
  for (std::size_t i = 0; i < beta_param.size(); ++i) beta[i] = beta_param[i] * beta_param[i] + kGdnBetaMin;
}

}  // namespace cae
