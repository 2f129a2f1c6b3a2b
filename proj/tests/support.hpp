#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "cae/conv.hpp"
#include "cae/tensor.hpp"

namespace testing_support {

inline cae::Tensor random_tensor(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  cae::Tensor t(h, w, c);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline double rel_err(double a, double b, double abs_floor = 1e-8) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), abs_floor});
}

// Central difference of f with respect to *x.
inline double central_diff(const std::function<double()>& f, double* x, double h = 1e-5) {
  const double keep = *x;
  *x = keep + h;
  const double fp = f();
  *x = keep - h;
  const double fm = f();
  *x = keep;
  return (fp - fm) / (2.0 * h);
}

// Adaptive Simpson integration of the N(mu, sigma^2) density over [a, b].
inline double gaussian_density(double t, double mu, double sigma) {
  const double z = (t - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

inline double simpson_step(double a, double b, double fa, double fm, double fb, double whole, double tol, int depth,
                           double mu, double sigma) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = gaussian_density(lm, mu, sigma), frm = gaussian_density(rm, mu, sigma);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_step(a, m, fa, flm, fm, left, tol / 2.0, depth - 1, mu, sigma) +
         simpson_step(m, b, fm, frm, fb, right, tol / 2.0, depth - 1, mu, sigma);
}

inline double integrate_gaussian(double a, double b, double mu, double sigma, double tol = 1e-14) {
  // Split at the mean so the peak is never straddled by a coarse first panel.
  if (a < mu && mu < b) return integrate_gaussian(a, mu, mu, sigma, tol / 2) + integrate_gaussian(mu, b, mu, sigma, tol / 2);
  const double fa = gaussian_density(a, mu, sigma), fb = gaussian_density(b, mu, sigma);
  const double m = 0.5 * (a + b);
  const double fm = gaussian_density(m, mu, sigma);
  return simpson_step(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50, mu, sigma);
}

struct Pads {
  std::size_t big_h, big_w, small_h, small_w;
  long top, left;
};

// Independent restatement of the padding convention: TF-style "same"
// (small = ceil(big / s), extra padding on the bottom/right) or "valid".
inline Pads pads_for(const cae::ConvLayerSpec& s, std::size_t in_h, std::size_t in_w) {
  Pads p{};
  const bool down = s.direction == cae::Direction::down;
  if (s.padding == cae::Padding::valid) {
    if (down) {
      p.big_h = in_h, p.big_w = in_w;
      p.small_h = (in_h - s.filter_h) / s.stride + 1, p.small_w = (in_w - s.filter_w) / s.stride + 1;
    } else {
      p.small_h = in_h, p.small_w = in_w;
      p.big_h = (in_h - 1) * s.stride + s.filter_h, p.big_w = (in_w - 1) * s.stride + s.filter_w;
    }
    p.top = p.left = 0;
    return p;
  }
  if (down) {
    p.big_h = in_h, p.big_w = in_w;
    p.small_h = (in_h + s.stride - 1) / s.stride, p.small_w = (in_w + s.stride - 1) / s.stride;
  } else {
    p.small_h = in_h, p.small_w = in_w;
    p.big_h = in_h * s.stride, p.big_w = in_w * s.stride;
  }
  const long th = std::max<long>(0, static_cast<long>((p.small_h - 1) * s.stride + s.filter_h) - static_cast<long>(p.big_h));
  const long tw = std::max<long>(0, static_cast<long>((p.small_w - 1) * s.stride + s.filter_w) - static_cast<long>(p.big_w));
  p.top = th / 2;
  p.left = tw / 2;
  return p;
}

// Direct nested-loop convolution (down) or transposed convolution (up).
// Weight layout: [kh][kw][big channels][small channels].
inline cae::Tensor naive_conv(const cae::Tensor& in, const std::vector<double>& w, const std::vector<double>& b,
                              const cae::ConvLayerSpec& s) {
  const Pads p = pads_for(s, in.height(), in.width());
  const bool down = s.direction == cae::Direction::down;
  const std::size_t big_c = down ? in.channels() : s.filters;
  const std::size_t small_c = down ? s.filters : in.channels();
  auto W = [&](std::size_t ky, std::size_t kx, std::size_t bc, std::size_t sc) {
    return w[((ky * s.filter_w + kx) * big_c + bc) * small_c + sc];
  };
  cae::Tensor out = down ? cae::Tensor(p.small_h, p.small_w, s.filters) : cae::Tensor(p.big_h, p.big_w, s.filters);
  for (std::size_t y = 0; y < out.height(); ++y)
    for (std::size_t x = 0; x < out.width(); ++x)
      for (std::size_t f = 0; f < s.filters; ++f) out.at(y, x, f) = b[f];
  for (std::size_t oy = 0; oy < p.small_h; ++oy) {
    for (std::size_t ox = 0; ox < p.small_w; ++ox) {
      for (std::size_t ky = 0; ky < s.filter_h; ++ky) {
        for (std::size_t kx = 0; kx < s.filter_w; ++kx) {
          const long iy = static_cast<long>(oy * s.stride + ky) - p.top;
          const long ix = static_cast<long>(ox * s.stride + kx) - p.left;
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(p.big_h) || ix >= static_cast<long>(p.big_w)) continue;
          for (std::size_t bc = 0; bc < big_c; ++bc) {
            for (std::size_t sc = 0; sc < small_c; ++sc) {
              if (down) {
                out.at(oy, ox, sc) += W(ky, kx, bc, sc) * in.at(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), bc);
              } else {
                out.at(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), bc) += W(ky, kx, bc, sc) * in.at(oy, ox, sc);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace testing_support
