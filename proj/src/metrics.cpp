#include "cae/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace cae {

namespace {

constexpr std::array<double, kMsSsimScales> kScaleWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(std::size_t hh, std::size_t ww, double fill = 0.0) : h(hh), w(ww), v(hh * ww, fill) {}
  double& at(std::size_t y, std::size_t x) { return v[y * w + x]; }
  double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kSsimWindow / 2);
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& t : g) t /= sum;
  return g;
}

const std::array<double, kSsimWindow>& taps() {
  static const auto g = gaussian_taps();
  return g;
}

// Separable valid Gaussian filter.
Plane filter(const Plane& in) {
  const auto& g = taps();
  const std::size_t oh = in.h - kSsimWindow + 1, ow = in.w - kSsimWindow + 1;
  Plane rows(in.h, ow);
  for (std::size_t y = 0; y < in.h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < kSsimWindow; ++t) s += g[t] * in.at(y, x + t);
      rows.at(y, x) = s;
    }
  }
  Plane out(oh, ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < kSsimWindow; ++t) s += g[t] * rows.at(y + t, x);
      out.at(y, x) = s;
    }
  }
  return out;
}

// Adjoint of `filter`: maps a valid-size plane back to the input size.
Plane filter_adjoint(const Plane& g_out, std::size_t in_h, std::size_t in_w) {
  const auto& g = taps();
  Plane rows(in_h, g_out.w);
  for (std::size_t y = 0; y < g_out.h; ++y) {
    for (std::size_t x = 0; x < g_out.w; ++x) {
      const double v = g_out.at(y, x);
      for (std::size_t t = 0; t < kSsimWindow; ++t) rows.at(y + t, x) += g[t] * v;
    }
  }
  Plane out(in_h, in_w);
  for (std::size_t y = 0; y < in_h; ++y) {
    for (std::size_t x = 0; x < g_out.w; ++x) {
      const double v = rows.at(y, x);
      for (std::size_t t = 0; t < kSsimWindow; ++t) out.at(y, x + t) += g[t] * v;
    }
  }
  return out;
}

Plane pool(const Plane& p) {
  Plane out(p.h / 2, p.w / 2);
  for (std::size_t y = 0; y < out.h; ++y) {
    for (std::size_t x = 0; x < out.w; ++x) {
      out.at(y, x) = 0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
    }
  }
  return out;
}

Plane pool_adjoint(const Plane& g, std::size_t h, std::size_t w) {
  Plane out(h, w);
  for (std::size_t y = 0; y < g.h; ++y) {
    for (std::size_t x = 0; x < g.w; ++x) {
      const double v = 0.25 * g.at(y, x);
      out.at(2 * y, 2 * x) += v;
      out.at(2 * y, 2 * x + 1) += v;
      out.at(2 * y + 1, 2 * x) += v;
      out.at(2 * y + 1, 2 * x + 1) += v;
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out(a.h, a.w);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

struct ScaleStats {
  double value = 0.0;  // mean cs, or mean l*cs at the last scale
  Plane grad;          // d value / d b at this scale's resolution
};

ScaleStats scale_stats(const Plane& x, const Plane& y, bool last, bool want_grad) {
  const Plane mx = filter(x), my = filter(y);
  const Plane exx = filter(product(x, x)), eyy = filter(product(y, y)), exy = filter(product(x, y));
  const std::size_t n = mx.v.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  ScaleStats s;
  Plane a1, a2, a3;
  if (want_grad) a1 = a2 = a3 = Plane(mx.h, mx.w);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double sxx = exx.v[i] - ux * ux, syy = eyy.v[i] - uy * uy, sxy = exy.v[i] - ux * uy;
    const double d1 = ux * ux + uy * uy + kC1, d2 = sxx + syy + kC2;
    const double l = (2.0 * ux * uy + kC1) / d1;
    const double cs = (2.0 * sxy + kC2) / d2;
    sum += last ? l * cs : cs;
    if (!want_grad) continue;
    const double dcs_dmu = (2.0 * uy * cs - 2.0 * ux) / d2;
    if (last) {
      const double dl_dmu = (2.0 * ux - 2.0 * uy * l) / d1;
      a1.v[i] = (cs * dl_dmu + l * dcs_dmu) * inv_n;
      a2.v[i] = -l * cs / d2 * inv_n;
      a3.v[i] = 2.0 * l / d2 * inv_n;
    } else {
      a1.v[i] = dcs_dmu * inv_n;
      a2.v[i] = -cs / d2 * inv_n;
      a3.v[i] = 2.0 / d2 * inv_n;
    }
  }
  s.value = sum * inv_n;
  if (want_grad) {
    const Plane g1 = filter_adjoint(a1, x.h, x.w), g2 = filter_adjoint(a2, x.h, x.w), g3 = filter_adjoint(a3, x.h, x.w);
    s.grad = Plane(x.h, x.w);
    for (std::size_t i = 0; i < x.v.size(); ++i) s.grad.v[i] = g1.v[i] + 2.0 * y.v[i] * g2.v[i] + x.v[i] * g3.v[i];
  }
  return s;
}

std::size_t scales_that_fit(std::size_t h, std::size_t w) {
  std::size_t s = 0;
  while (s < kMsSsimScales && std::min(h, w) >= kSsimWindow) {
    ++s;
    h /= 2;
    w /= 2;
  }
  return s;
}

// MS-SSIM of one channel; fills `grad` (same size as y) when requested.
double channel_ms_ssim(const Plane& x0, const Plane& y0, std::size_t scales, Plane* grad) {
  double wsum = 0.0;
  for (std::size_t j = 0; j < scales; ++j) wsum += kScaleWeights[j];
  std::vector<Plane> xs{x0}, ys{y0};
  for (std::size_t j = 1; j < scales; ++j) {
    xs.push_back(pool(xs.back()));
    ys.push_back(pool(ys.back()));
  }
  std::vector<ScaleStats> st;
  std::vector<double> m(scales), e(scales);
  for (std::size_t j = 0; j < scales; ++j) {
    st.push_back(scale_stats(xs[j], ys[j], j + 1 == scales, grad != nullptr));
    m[j] = std::max(st[j].value, 0.0);
    e[j] = kScaleWeights[j] / wsum;
  }
  double total = 1.0;
  for (std::size_t j = 0; j < scales; ++j) total *= std::pow(m[j], e[j]);
  if (grad) {
    Plane acc;
    for (std::size_t j = scales; j-- > 0;) {
      double coeff = 0.0;
      if (st[j].value > 0.0) {
        coeff = e[j] * std::pow(m[j], e[j] - 1.0);
        for (std::size_t i = 0; i < scales; ++i) {
          if (i != j) coeff *= std::pow(m[i], e[i]);
        }
      }
      Plane g = st[j].grad;
      for (double& v : g.v) v *= coeff;
      if (!acc.v.empty()) {
        const Plane up = pool_adjoint(acc, g.h, g.w);
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += up.v[i];
      }
      acc = std::move(g);
    }
    *grad = std::move(acc);
  }
  return total;
}

Plane channel_plane(const Tensor& t, std::size_t c) {
  Plane p(t.height(), t.width());
  for (std::size_t y = 0; y < t.height(); ++y) {
    for (std::size_t x = 0; x < t.width(); ++x) p.at(y, x) = t.at(y, x, c);
  }
  return p;
}

Tensor image_plane_tensor(const Image& img) {
  Tensor t(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) t.data()[i] = img.rgb[i];
  return t;
}

void check_same_dims(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  }
  if (a.rgb.empty()) throw std::invalid_argument(std::string(what) + ": empty image");
}

// Least-squares polynomial (coefficients low to high) via normal equations.
std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, std::size_t degree) {
  const std::size_t k = degree + 1;
  std::vector<double> a(k * (k + 1), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> pw(2 * k, 1.0);
    for (std::size_t p = 1; p < 2 * k; ++p) pw[p] = pw[p - 1] * x[i];
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) a[r * (k + 1) + c] += pw[r + c];
      a[r * (k + 1) + k] += pw[r] * y[i];
    }
  }
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r) {
      if (std::fabs(a[r * (k + 1) + col]) > std::fabs(a[piv * (k + 1) + col])) piv = r;
    }
    for (std::size_t c = 0; c <= k; ++c) std::swap(a[col * (k + 1) + c], a[piv * (k + 1) + c]);
    const double d = a[col * (k + 1) + col];
    if (std::fabs(d) < 1e-300) throw std::invalid_argument("bd_rate: degenerate quality values");
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const double f = a[r * (k + 1) + col] / d;
      for (std::size_t c = col; c <= k; ++c) a[r * (k + 1) + c] -= f * a[col * (k + 1) + c];
    }
  }
  std::vector<double> coef(k);
  for (std::size_t r = 0; r < k; ++r) coef[r] = a[r * (k + 1) + k] / a[r * (k + 1) + r];
  return coef;
}

double poly_integral(const std::vector<double>& c, double lo, double hi) {
  double s = 0.0;
  for (std::size_t p = 0; p < c.size(); ++p) {
    const double e = static_cast<double>(p + 1);
    s += c[p] / e * (std::pow(hi, e) - std::pow(lo, e));
  }
  return s;
}

// Fritsch-Carlson monotone slopes (same rule as common pchip implementations).
std::vector<double> pchip_slopes(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> h(n - 1), delta(n - 1), d(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = x[i + 1] - x[i];
    delta[i] = (y[i + 1] - y[i]) / h[i];
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (delta[i - 1] * delta[i] > 0.0) {
      const double w1 = 2.0 * h[i] + h[i - 1], w2 = h[i] + 2.0 * h[i - 1];
      d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
  }
  auto end_slope = [](double h0, double h1, double m0, double m1) {
    double s = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (s * m0 <= 0.0) s = 0.0;
    else if (m0 * m1 <= 0.0 && std::fabs(s) > std::fabs(3.0 * m0)) s = 3.0 * m0;
    return s;
  };
  if (n == 2) {
    d[0] = d[1] = delta[0];
  } else {
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }
  return d;
}

// Integral of the Hermite interpolant over [lo, hi] within the data range.
double pchip_integral(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi) {
  const auto d = pchip_slopes(x, y);
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double a = std::max(lo, x[i]), b = std::min(hi, x[i + 1]);
    if (!(b > a)) continue;
    const double h = x[i + 1] - x[i];
    // Antiderivative of the cubic Hermite segment in t = (q - x_i) / h.
    auto F = [&](double q) {
      const double t = (q - x[i]) / h;
      const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
      const double h00 = t4 / 2.0 - t3 + t;
      const double h10 = t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0;
      const double h01 = -t4 / 2.0 + t3;
      const double h11 = t4 / 4.0 - t3 / 3.0;
      return h * (h00 * y[i] + h10 * h * d[i] + h01 * y[i + 1] + h11 * h * d[i + 1]);
    };
    s += F(b) - F(a);
  }
  return s;
}

struct Curve {
  std::vector<double> q, lr;
};

Curve prepare(std::span<const RdPoint> pts, const char* name) {
  if (pts.size() < 2) throw std::invalid_argument(std::string("bd_rate: ") + name + " curve needs at least 2 points");
  std::vector<RdPoint> s(pts.begin(), pts.end());
  std::sort(s.begin(), s.end(), [](const RdPoint& a, const RdPoint& b) { return a.quality < b.quality; });
  Curve c;
  for (const RdPoint& p : s) {
    if (!(p.bpp > 0.0) || !std::isfinite(p.quality)) {
      throw std::invalid_argument(std::string("bd_rate: ") + name + " curve has a non-positive rate or infinite quality");
    }
    if (!c.q.empty() && p.quality == c.q.back()) {
      throw std::invalid_argument(std::string("bd_rate: ") + name + " curve repeats a quality value");
    }
    c.q.push_back(p.quality);
    c.lr.push_back(std::log(p.bpp));
  }
  return c;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  check_same_dims(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.rgb.size());
}

double psnr_from_mse(double m) {
  if (m <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

MsSsimResult ms_ssim(const Tensor& a, const Tensor& b, Tensor* grad_b) {
  require_same_shape(a, b, "ms_ssim");
  MsSsimResult r;
  r.scales = scales_that_fit(a.height(), a.width());
  if (r.scales == 0) throw std::invalid_argument("ms_ssim: image smaller than the 11x11 window");
  r.reduced = r.scales < kMsSsimScales;
  if (grad_b) *grad_b = Tensor(b.shape());
  double sum = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c) {
    Plane g;
    sum += channel_ms_ssim(channel_plane(a, c), channel_plane(b, c), r.scales, grad_b ? &g : nullptr);
    if (grad_b) {
      const double inv_c = 1.0 / static_cast<double>(a.channels());
      for (std::size_t y = 0; y < b.height(); ++y) {
        for (std::size_t x = 0; x < b.width(); ++x) grad_b->at(y, x, c) = g.at(y, x) * inv_c;
      }
    }
  }
  r.value = std::clamp(sum / static_cast<double>(a.channels()), 0.0, 1.0);
  return r;
}

MsSsimResult ms_ssim(const Image& a, const Image& b) {
  check_same_dims(a, b, "ms_ssim");
  return ms_ssim(image_plane_tensor(a), image_plane_tensor(b));
}

double ms_ssim_db(double v) {
  if (v >= 1.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(1.0 - v);
}

BdRateResult bd_rate_detailed(std::span<const RdPoint> anchor, std::span<const RdPoint> test) {
  const Curve a = prepare(anchor, "anchor"), t = prepare(test, "test");
  const double lo = std::max(a.q.front(), t.q.front());
  const double hi = std::min(a.q.back(), t.q.back());
  if (!(hi > lo)) throw std::invalid_argument("bd_rate: quality ranges do not overlap");
  BdRateResult r;
  double ia = 0.0, it = 0.0;
  if (a.q.size() >= 4 && t.q.size() >= 4) {
    r.method = BdMethod::pchip;
    ia = pchip_integral(a.q, a.lr, lo, hi);
    it = pchip_integral(t.q, t.lr, lo, hi);
  } else {
    r.method = BdMethod::polyfit;
    ia = poly_integral(polyfit(a.q, a.lr, std::min<std::size_t>(3, a.q.size() - 1)), lo, hi);
    it = poly_integral(polyfit(t.q, t.lr, std::min<std::size_t>(3, t.q.size() - 1)), lo, hi);
  }
  r.percent = (std::exp((it - ia) / (hi - lo)) - 1.0) * 100.0;
  return r;
}

double bd_rate(std::span<const RdPoint> anchor, std::span<const RdPoint> test) {
  return bd_rate_detailed(anchor, test).percent;
}

std::string format_metric(double v, int digits) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace cae
