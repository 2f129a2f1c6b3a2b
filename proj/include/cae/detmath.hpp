#pragma once

namespace cae {

/// Selects the implementation of transcendental functions on paths that feed
/// the entropy coder. `deterministic` uses only IEEE +,-,*,/ in a fixed order
/// (the build disables FMA contraction), so encoder and decoder agree across
/// machines and C libraries. `native` calls the C library.
enum class MathMode { deterministic, native };

double det_exp(double x);
double det_erfc(double x);

inline constexpr double kExpInputCap = 40.0;

double exp_m(double x, MathMode mode);
double erfc_m(double x, MathMode mode);

}  // namespace cae
