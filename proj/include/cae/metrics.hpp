#pragma once

#include <span>
#include <string>
#include <vector>

#include "cae/image.hpp"
#include "cae/tensor.hpp"

namespace cae {

/// 10 log10(255^2 / MSE) over all pixels and channels; +inf for identical images.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);
double mse(const Image& a, const Image& b);

struct MsSsimResult {
  double value = 1.0;
  std::size_t scales = 5;
  bool reduced = false;  // fewer than five scales fit the image
};

inline constexpr std::size_t kMsSsimScales = 5;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Multi-scale SSIM on the 0..255 scale: 11x11 Gaussian window (sigma 1.5),
/// valid filtering, 2x2 average pooling between scales, standard five-scale
/// exponents. Computed per channel and averaged. Images too small for five
/// scales use as many as fit (smallest side >= 11) with renormalized exponents.
MsSsimResult ms_ssim(const Image& a, const Image& b);

/// Tensor form (values on the 0..255 scale). When `grad_b` is non-null it
/// receives d ms_ssim / d b.
MsSsimResult ms_ssim(const Tensor& a, const Tensor& b, Tensor* grad_b = nullptr);

/// -10 log10(1 - v); +inf at v = 1.
double ms_ssim_db(double v);

struct RdPoint {
  double bpp = 0.0;
  double quality = 0.0;
};

enum class BdMethod { pchip, polyfit };

struct BdRateResult {
  double percent = 0.0;
  BdMethod method = BdMethod::pchip;
};

/// Bjontegaard delta rate of `test` against `anchor` in percent (negative =
/// fewer bits). Log-rate is interpolated against quality with piecewise
/// cubic Hermite interpolation when both curves have >= 4 points, otherwise
/// with a least-squares polynomial of degree min(3, points - 1). Throws when
/// the quality ranges do not overlap.
BdRateResult bd_rate_detailed(std::span<const RdPoint> anchor, std::span<const RdPoint> test);
double bd_rate(std::span<const RdPoint> anchor, std::span<const RdPoint> test);

/// "inf" for infinities, otherwise fixed with `digits` decimals.
std::string format_metric(double v, int digits = 4);

}  // namespace cae
