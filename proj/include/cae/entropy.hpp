#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cae/detmath.hpp"
#include "cae/tensor.hpp"
#include "cae/transforms.hpp"

namespace cae {

inline constexpr double kSigmaFloor = 1e-6;        // estimator / rate floor
inline constexpr double kCoderSigmaFloor = 0.01;   // CDF construction floor
inline constexpr double kProbabilityFloor = 1.0 / 65536.0;
inline constexpr std::size_t kContextWindow = 4;

/// Integer-valued latent grid with declared bounds [v_min, v_max].
struct LatentGrid {
  Shape3 shape;
  std::vector<std::int32_t> values;
  int v_min = -128;
  int v_max = 127;

  LatentGrid() = default;
  LatentGrid(Shape3 s, int lo, int hi) : shape(s), values(s.size(), 0), v_min(lo), v_max(hi) {}

  std::int32_t& at(std::size_t y, std::size_t x, std::size_t c) { return values[(y * shape.w + x) * shape.c + c]; }
  std::int32_t at(std::size_t y, std::size_t x, std::size_t c) const { return values[(y * shape.w + x) * shape.c + c]; }
  Tensor to_tensor() const;
  bool within_bounds() const;
  bool operator==(const LatentGrid&) const = default;
};

struct QuantizeResult {
  LatentGrid grid;
  std::size_t clamp_count = 0;
};

/// Round half away from zero.
double round_half_away(double v);

/// Element-wise rounding with clamping into the bounds.
QuantizeResult quantize(const Tensor& y, int v_min = -128, int v_max = 127);

/// Same values as `quantize`, kept as a real tensor for training graphs.
Tensor quantize_values(const Tensor& y, int v_min, int v_max, std::size_t* clamp_count = nullptr);

/// Straight-through gradient: the rounding is treated as the identity.
inline Tensor quantize_backward(const Tensor& grad) { return grad; }

/// Uniform sample in [-1/2, 1/2) from 53 random bits.
double uniform_noise(std::mt19937_64& rng);

/// y + u with u ~ U(-1/2, 1/2) drawn i.i.d. in storage order.
Tensor add_uniform_noise(const Tensor& y, std::mt19937_64& rng);

/// Mass of N(mu, sigma^2) convolved with U(-1/2, 1/2) at `value`, i.e.
/// Phi((v + 1/2 - mu) / sigma) - Phi((v - 1/2 - mu) / sigma), evaluated on the
/// tail side via erfc so small masses keep their relative accuracy. Sigma
/// below kSigmaFloor is raised to the floor and counted.
double pmf_gaussian_uniform(double value, double mu, double sigma, MathMode math = MathMode::native);

struct PmfWithGrad {
  double p = 0.0;
  double d_value = 0.0;
  double d_mu = 0.0;
  double d_sigma = 0.0;
};
PmfWithGrad pmf_gaussian_uniform_grad(double value, double mu, double sigma);

/// Zero-mean variant used for the hyper-latent and the hybrid y2 part.
double pmf_zero_mean(double value, double sigma, MathMode math = MathMode::native);

/// Number of sigma-floor clamps since process start.
std::uint64_t pmf_sigma_clamp_count();

/// -log2 p with p floored at kProbabilityFloor.
double symbol_bits(double p);

/// Bit-consuming context window: columns k-2..k+1, rows l-3..l of c', all
/// channels. Output is 4 x 4 x C with (row offset, column offset) layout;
/// positions outside the grid are zero.
Tensor extract_ctx_prime(const Tensor& context, std::size_t k, std::size_t l);

/// Bit-free context window over the known latents with the causal mask: the
/// current position and the one to its right (row l, columns k and k+1)
/// are always zero, so the result never depends on raster-future values.
Tensor extract_ctx_known(const Tensor& known, std::size_t k, std::size_t l);
Tensor extract_ctx_known(const LatentGrid& known, std::size_t k, std::size_t l);

/// Adjoint of the extractors: adds a window gradient back onto the grid.
void scatter_ctx(Tensor& grid_grad, const Tensor& window_grad, std::size_t k, std::size_t l, bool causal_mask);

/// Per-position estimator output for all modeled channels.
struct PositionParams {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> log_sigma;  // raw estimator output
};

/// Runs the estimator f once for all channels at one spatial position.
PositionParams estimate_params_f(const Tensor& ctx_prime, const Tensor& ctx_known, const ModelWeights& w,
                                 StackTape* tape = nullptr, ConvBackend backend = ConvBackend::fast,
                                 MathMode math = MathMode::native);

struct WindowGrads {
  Tensor ctx_prime;
  Tensor ctx_known;
};
/// Backpropagates d/dmu and d/dsigma through f, accumulating into the model.
WindowGrads estimate_params_f_backward(ModelWeights& w, const StackTape& tape, const PositionParams& out,
                                       std::span<const double> d_mu, std::span<const double> d_sigma);

/// Mean / scale grids for every latent position.
struct EntropyParams {
  Tensor mu;
  Tensor sigma;
};

/// Evaluates f at every position from fully known latents (encoder side);
/// masks make this identical to the sequential decoder-side evaluation.
EntropyParams compute_entropy_params(const Tensor& context, const Tensor& y_modeled, const ModelWeights& w,
                                     ConvBackend backend = ConvBackend::fast, MathMode math = MathMode::native);

struct RateResult {
  double bits = 0.0;
  std::size_t floored = 0;  // symbols whose probability hit kProbabilityFloor
  RateResult& operator+=(const RateResult& o) {
    bits += o.bits;
    floored += o.floored;
    return *this;
  }
};

RateResult rate_estimate(const Tensor& values, const EntropyParams& params, MathMode math = MathMode::native);
RateResult rate_estimate_zero_mean(const Tensor& values, std::span<const double> sigma_per_channel,
                                   MathMode math = MathMode::native);
RateResult rate_estimate_scale(const Tensor& values, const Tensor& sigma, MathMode math = MathMode::native);

/// Lag-1 spatial statistics over horizontal and vertical neighbor pairs.
double lag1_covariance(std::span<const Tensor> grids, std::size_t channel);
double lag1_autocorrelation(std::span<const Tensor> grids, std::size_t channel);

struct NormalizationStats {
  std::size_t channel = 0;
  double raw_autocorr = 0.0;
  double norm_autocorr = 0.0;
};

/// Picks the channel whose neighbors covary most in y_hat and reports the
/// lag-1 autocorrelation of y_hat and of (y_hat - mu) / sigma there.
NormalizationStats normalization_diagnostic(std::span<const Tensor> y_hats, std::span<const EntropyParams> params);

}  // namespace cae
