#include "cae/entropy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cae {

namespace {

std::atomic<std::uint64_t> g_sigma_clamps{0};

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Upper-tail probability Q(t) = P(N(0,1) > t).
double upper_tail(double t, MathMode math) { return 0.5 * erfc_m(t * kInvSqrt2, math); }

double std_normal_density(double t) { return kInvSqrt2Pi * std::exp(-0.5 * t * t); }

double floor_sigma(double sigma) {
  if (!(sigma >= kSigmaFloor)) {
    g_sigma_clamps.fetch_add(1, std::memory_order_relaxed);
    return kSigmaFloor;
  }
  return sigma;
}

Tensor extract_window(const Tensor& grid, std::size_t k, std::size_t l, bool causal_mask) {
  const std::size_t c = grid.channels();
  Tensor win(kContextWindow, kContextWindow, c);
  for (std::size_t r = 0; r < kContextWindow; ++r) {
    const auto row = static_cast<std::ptrdiff_t>(l) - 3 + static_cast<std::ptrdiff_t>(r);
    if (row < 0 || row >= static_cast<std::ptrdiff_t>(grid.height())) continue;
    for (std::size_t q = 0; q < kContextWindow; ++q) {
      if (causal_mask && r == 3 && q >= 2) continue;
      const auto col = static_cast<std::ptrdiff_t>(k) - 2 + static_cast<std::ptrdiff_t>(q);
      if (col < 0 || col >= static_cast<std::ptrdiff_t>(grid.width())) continue;
      auto src = grid.pixel(static_cast<std::size_t>(row), static_cast<std::size_t>(col));
      std::copy(src.begin(), src.end(), win.pixel(r, q).begin());
    }
  }
  return win;
}

void check_position(const Tensor& grid, std::size_t k, std::size_t l) {
  if (l >= grid.height() || k >= grid.width()) {
    throw std::out_of_range("context position (k=" + std::to_string(k) + ", l=" + std::to_string(l) +
                            ") outside " + grid.shape().str() + " grid");
  }
}

}  // namespace

Tensor LatentGrid::to_tensor() const {
  Tensor t(shape);
  for (std::size_t i = 0; i < values.size(); ++i) t.data()[i] = static_cast<double>(values[i]);
  return t;
}

bool LatentGrid::within_bounds() const {
  return std::all_of(values.begin(), values.end(), [&](std::int32_t v) { return v >= v_min && v <= v_max; });
}

double round_half_away(double v) { return std::round(v); }

QuantizeResult quantize(const Tensor& y, int v_min, int v_max) {
  QuantizeResult r{LatentGrid(y.shape(), v_min, v_max), 0};
  for (std::size_t i = 0; i < y.size(); ++i) {
    double q = round_half_away(y.data()[i]);
    if (q < v_min) {
      q = v_min;
      ++r.clamp_count;
    } else if (q > v_max) {
      q = v_max;
      ++r.clamp_count;
    }
    r.grid.values[i] = static_cast<std::int32_t>(q);
  }
  return r;
}

Tensor quantize_values(const Tensor& y, int v_min, int v_max, std::size_t* clamp_count) {
  Tensor out(y.shape());
  std::size_t clamps = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double q = round_half_away(y.data()[i]);
    const double c = std::clamp(q, static_cast<double>(v_min), static_cast<double>(v_max));
    clamps += c != q;
    out.data()[i] = c;
  }
  if (clamp_count) *clamp_count = clamps;
  return out;
}

double uniform_noise(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
}

Tensor add_uniform_noise(const Tensor& y, std::mt19937_64& rng) {
  Tensor out = y;
  for (double& v : out.values()) v += uniform_noise(rng);
  return out;
}

double pmf_gaussian_uniform(double value, double mu, double sigma, MathMode math) {
  sigma = floor_sigma(sigma);
  const double d = value - mu;
  const double upper = (d + 0.5) / sigma;
  const double lower = (d - 0.5) / sigma;
  // Difference of tail masses on the side away from the mean.
  const double p = d > 0.0 ? upper_tail(lower, math) - upper_tail(upper, math)
                           : upper_tail(-upper, math) - upper_tail(-lower, math);
  return std::max(p, 0.0);
}

PmfWithGrad pmf_gaussian_uniform_grad(double value, double mu, double sigma) {
  PmfWithGrad r;
  sigma = floor_sigma(sigma);
  r.p = pmf_gaussian_uniform(value, mu, sigma);
  const double a = (value - mu + 0.5) / sigma;
  const double b = (value - mu - 0.5) / sigma;
  const double pa = std_normal_density(a);
  const double pb = std_normal_density(b);
  r.d_value = (pa - pb) / sigma;
  r.d_mu = -r.d_value;
  r.d_sigma = (b * pb - a * pa) / sigma;
  return r;
}

double pmf_zero_mean(double value, double sigma, MathMode math) {
  return pmf_gaussian_uniform(value, 0.0, sigma, math);
}

std::uint64_t pmf_sigma_clamp_count() { return g_sigma_clamps.load(std::memory_order_relaxed); }

double symbol_bits(double p) { return -std::log2(std::max(p, kProbabilityFloor)); }

Tensor extract_ctx_prime(const Tensor& context, std::size_t k, std::size_t l) {
  check_position(context, k, l);
  return extract_window(context, k, l, false);
}

Tensor extract_ctx_known(const Tensor& known, std::size_t k, std::size_t l) {
  check_position(known, k, l);
  return extract_window(known, k, l, true);
}

Tensor extract_ctx_known(const LatentGrid& known, std::size_t k, std::size_t l) {
  if (l >= known.shape.h || k >= known.shape.w) {
    throw std::out_of_range("context position (k=" + std::to_string(k) + ", l=" + std::to_string(l) + ") outside " +
                            known.shape.str() + " grid");
  }
  const std::size_t c = known.shape.c;
  Tensor win(kContextWindow, kContextWindow, c);
  for (std::size_t r = 0; r < kContextWindow; ++r) {
    const auto row = static_cast<std::ptrdiff_t>(l) - 3 + static_cast<std::ptrdiff_t>(r);
    if (row < 0 || row >= static_cast<std::ptrdiff_t>(known.shape.h)) continue;
    for (std::size_t q = 0; q < kContextWindow; ++q) {
      if (r == 3 && q >= 2) continue;
      const auto col = static_cast<std::ptrdiff_t>(k) - 2 + static_cast<std::ptrdiff_t>(q);
      if (col < 0 || col >= static_cast<std::ptrdiff_t>(known.shape.w)) continue;
      auto dst = win.pixel(r, q);
      for (std::size_t ch = 0; ch < c; ++ch) {
        dst[ch] = static_cast<double>(known.at(static_cast<std::size_t>(row), static_cast<std::size_t>(col), ch));
      }
    }
  }
  return win;
}

void scatter_ctx(Tensor& grid_grad, const Tensor& window_grad, std::size_t k, std::size_t l, bool causal_mask) {
  for (std::size_t r = 0; r < kContextWindow; ++r) {
    const auto row = static_cast<std::ptrdiff_t>(l) - 3 + static_cast<std::ptrdiff_t>(r);
    if (row < 0 || row >= static_cast<std::ptrdiff_t>(grid_grad.height())) continue;
    for (std::size_t q = 0; q < kContextWindow; ++q) {
      if (causal_mask && r == 3 && q >= 2) continue;
      const auto col = static_cast<std::ptrdiff_t>(k) - 2 + static_cast<std::ptrdiff_t>(q);
      if (col < 0 || col >= static_cast<std::ptrdiff_t>(grid_grad.width())) continue;
      auto dst = grid_grad.pixel(static_cast<std::size_t>(row), static_cast<std::size_t>(col));
      auto src = window_grad.pixel(r, q);
      for (std::size_t ch = 0; ch < dst.size(); ++ch) dst[ch] += src[ch];
    }
  }
}

PositionParams estimate_params_f(const Tensor& ctx_prime, const Tensor& ctx_known, const ModelWeights& w,
                                 StackTape* tape, ConvBackend backend, MathMode math) {
  const ArchConfig& c = w.config();
  const std::size_t m = c.modeled_channels();
  if (ctx_prime.channels() != c.context_channels()) {
    throw ShapeError("estimate_params_f: c' window has " + std::to_string(ctx_prime.channels()) + " channels, expected " +
                     std::to_string(c.context_channels()));
  }
  if (ctx_known.channels() != m) {
    throw ShapeError("estimate_params_f: c'' window has " + std::to_string(ctx_known.channels()) + " channels, expected " +
                     std::to_string(m));
  }
  const Tensor input = concat_channels(ctx_prime, ctx_known);
  const Tensor out = w.f().forward(w.params(), input, tape, backend, math);
  if (out.size() != 2 * m) throw ShapeError("estimate_params_f: estimator produced " + std::to_string(out.size()) + " values");
  PositionParams p;
  p.mu.assign(out.data(), out.data() + m);
  p.log_sigma.assign(out.data() + m, out.data() + 2 * m);
  p.sigma.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    p.sigma[i] = std::max(exp_m(std::min(p.log_sigma[i], kExpInputCap), math), kSigmaFloor);
  }
  return p;
}

WindowGrads estimate_params_f_backward(ModelWeights& w, const StackTape& tape, const PositionParams& out,
                                       std::span<const double> d_mu, std::span<const double> d_sigma) {
  const ArchConfig& c = w.config();
  const std::size_t m = c.modeled_channels();
  Tensor g(1, 1, 2 * m);
  for (std::size_t i = 0; i < m; ++i) {
    g.data()[i] = d_mu[i];
    const double ls = out.log_sigma[i];
    const bool active = ls < kExpInputCap && std::exp(ls) > kSigmaFloor;
    g.data()[m + i] = active ? d_sigma[i] * out.sigma[i] : 0.0;
  }
  const Tensor gin = w.f().backward(w.params(), tape, g);
  return WindowGrads{slice_channels(gin, 0, c.context_channels()), slice_channels(gin, c.context_channels(), m)};
}

EntropyParams compute_entropy_params(const Tensor& context, const Tensor& y_modeled, const ModelWeights& w,
                                     ConvBackend backend, MathMode math) {
  const std::size_t m = w.config().modeled_channels();
  if (context.height() != y_modeled.height() || context.width() != y_modeled.width()) {
    throw ShapeError("compute_entropy_params: context " + context.shape().str() + " vs latents " + y_modeled.shape().str());
  }
  EntropyParams ep{Tensor(y_modeled.height(), y_modeled.width(), m), Tensor(y_modeled.height(), y_modeled.width(), m)};
  for (std::size_t l = 0; l < y_modeled.height(); ++l) {
    for (std::size_t k = 0; k < y_modeled.width(); ++k) {
      const PositionParams p = estimate_params_f(extract_ctx_prime(context, k, l), extract_ctx_known(y_modeled, k, l), w,
                                                 nullptr, backend, math);
      std::copy(p.mu.begin(), p.mu.end(), ep.mu.pixel(l, k).begin());
      std::copy(p.sigma.begin(), p.sigma.end(), ep.sigma.pixel(l, k).begin());
    }
  }
  return ep;
}

RateResult rate_estimate(const Tensor& values, const EntropyParams& params, MathMode math) {
  require_same_shape(values, params.mu, "rate_estimate (mu)");
  require_same_shape(values, params.sigma, "rate_estimate (sigma)");
  RateResult r;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double p = pmf_gaussian_uniform(values.data()[i], params.mu.data()[i], params.sigma.data()[i], math);
    r.floored += p < kProbabilityFloor;
    r.bits += symbol_bits(p);
  }
  return r;
}

RateResult rate_estimate_zero_mean(const Tensor& values, std::span<const double> sigma_per_channel, MathMode math) {
  if (sigma_per_channel.size() != values.channels()) {
    throw ShapeError("rate_estimate_zero_mean: " + std::to_string(sigma_per_channel.size()) + " scales for " +
                     std::to_string(values.channels()) + " channels");
  }
  RateResult r;
  const std::size_t c = values.channels();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double p = pmf_zero_mean(values.data()[i], sigma_per_channel[i % c], math);
    r.floored += p < kProbabilityFloor;
    r.bits += symbol_bits(p);
  }
  return r;
}

RateResult rate_estimate_scale(const Tensor& values, const Tensor& sigma, MathMode math) {
  require_same_shape(values, sigma, "rate_estimate_scale");
  RateResult r;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double p = pmf_zero_mean(values.data()[i], sigma.data()[i], math);
    r.floored += p < kProbabilityFloor;
    r.bits += symbol_bits(p);
  }
  return r;
}

namespace {

template <typename Visit>
void for_each_neighbor_pair(const Tensor& g, std::size_t ch, Visit&& visit) {
  for (std::size_t y = 0; y < g.height(); ++y) {
    for (std::size_t x = 0; x < g.width(); ++x) {
      if (x + 1 < g.width()) visit(g.at(y, x, ch), g.at(y, x + 1, ch));
      if (y + 1 < g.height()) visit(g.at(y, x, ch), g.at(y + 1, x, ch));
    }
  }
}

struct PairMoments {
  double n = 0, sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  void add(double a, double b) {
    n += 1;
    sa += a;
    sb += b;
    saa += a * a;
    sbb += b * b;
    sab += a * b;
  }
  double cov() const { return n > 0 ? sab / n - (sa / n) * (sb / n) : 0.0; }
  double corr() const {
    if (n == 0) return 0.0;
    const double va = saa / n - (sa / n) * (sa / n);
    const double vb = sbb / n - (sb / n) * (sb / n);
    if (va <= 1e-15 || vb <= 1e-15) return 0.0;
    return cov() / std::sqrt(va * vb);
  }
};

PairMoments moments(std::span<const Tensor> grids, std::size_t channel) {
  PairMoments pm;
  for (const Tensor& g : grids) for_each_neighbor_pair(g, channel, [&](double a, double b) { pm.add(a, b); });
  return pm;
}

}  // namespace

double lag1_covariance(std::span<const Tensor> grids, std::size_t channel) { return moments(grids, channel).cov(); }

double lag1_autocorrelation(std::span<const Tensor> grids, std::size_t channel) { return moments(grids, channel).corr(); }

NormalizationStats normalization_diagnostic(std::span<const Tensor> y_hats, std::span<const EntropyParams> params) {
  if (y_hats.empty() || y_hats.size() != params.size()) throw std::invalid_argument("normalization_diagnostic: need matching latents and params");
  const std::size_t channels = y_hats.front().channels();
  NormalizationStats s;
  double best = -1.0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double cov = lag1_covariance(y_hats, c);
    if (cov > best) {
      best = cov;
      s.channel = c;
    }
  }
  std::vector<Tensor> normalized;
  for (std::size_t i = 0; i < y_hats.size(); ++i) {
    require_same_shape(y_hats[i], params[i].mu, "normalization_diagnostic");
    Tensor n(y_hats[i].shape());
    for (std::size_t k = 0; k < n.size(); ++k) {
      n.data()[k] = (y_hats[i].data()[k] - params[i].mu.data()[k]) / params[i].sigma.data()[k];
    }
    normalized.push_back(std::move(n));
  }
  s.raw_autocorr = lag1_autocorrelation(y_hats, s.channel);
  s.norm_autocorr = lag1_autocorrelation(normalized, s.channel);
  return s;
}

}  // namespace cae
