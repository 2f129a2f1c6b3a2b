#pragma once

#include <span>

#include "cae/tensor.hpp"

namespace cae {

/// Generalized divisive normalization over channels:
///   y_c = x_c / sqrt(beta_c + sum_k gamma[c][k] * x_k^2)
/// or, with `inverse`, the same expression multiplied instead of divided.
///
/// `gamma` is channels x channels row-major and must be nonnegative; `beta`
/// must be nonnegative. A zero normalizer (beta_c = 0 with an all-zero pixel)
/// is rejected rather than producing a NaN.
Tensor gdn(const Tensor& input, std::span<const double> gamma, std::span<const double> beta, bool inverse);

/// Accumulates d/dgamma and d/dbeta into the given buffers and returns d/dx.
Tensor gdn_backward(const Tensor& output_grad, const Tensor& input, std::span<const double> gamma,
                    std::span<const double> beta, bool inverse, std::span<double> grad_gamma,
                    std::span<double> grad_beta);

/// Reparameterization used by trainable GDN layers: beta = p^2 + kGdnBetaMin,
/// gamma = p^2. Keeps both constraints without projection steps.
inline constexpr double kGdnBetaMin = 1e-6;
void gdn_effective_params(std::span<const double> gamma_param, std::span<const double> beta_param,
                          std::span<double> gamma, std::span<double> beta);

}  // namespace cae
