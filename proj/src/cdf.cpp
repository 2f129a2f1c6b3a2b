#include "cae/cdf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cae/entropy.hpp"

namespace cae {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
// Beyond this many standard deviations every bin mass is below 1e-300.
constexpr double kNegligibleSigmas = 38.0;
}  // namespace

bool QuantizedCdf::valid() const {
  if (cumulative.size() < 2 || cumulative.front() != 0 || cumulative.back() != kCdfTotal) return false;
  for (std::size_t i = 1; i < cumulative.size(); ++i) {
    if (cumulative[i] <= cumulative[i - 1]) return false;
  }
  return true;
}

std::vector<std::uint32_t> quantize_masses(std::span<const double> masses, std::uint32_t total) {
  const std::size_t n = masses.size();
  if (n == 0 || n > total) throw std::invalid_argument("quantize_masses: bad bin count");
  double sum = 0.0;
  for (double p : masses) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("quantize_masses: masses must be finite and nonnegative");
    sum += p;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("quantize_masses: zero total mass");
  const double scale = static_cast<double>(total - n);
  std::vector<std::uint32_t> freq(n);
  std::vector<double> frac(n);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = masses[i] / sum * scale;
    const double fl = std::floor(x);
    freq[i] = 1 + static_cast<std::uint32_t>(fl);
    frac[i] = x - fl;
    assigned += freq[i];
  }
  if (assigned > total) throw std::logic_error("quantize_masses: over-assigned frequencies");
  std::uint64_t remaining = total - assigned;
  if (remaining > n) throw std::logic_error("quantize_masses: remainder exceeds bin count");
  // Each bin gains at most one count, largest fraction first.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto k = static_cast<std::ptrdiff_t>(remaining);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t a, std::size_t b) {
    return frac[a] != frac[b] ? frac[a] > frac[b] : a < b;
  });
  for (std::ptrdiff_t i = 0; i < k; ++i) ++freq[order[static_cast<std::size_t>(i)]];
  return freq;
}

QuantizedCdf build_cdf(double mu, double sigma, int v_min, int v_max, MathMode math) {
  if (v_min > v_max) throw std::invalid_argument("build_cdf: empty alphabet");
  if (!std::isfinite(mu) || !std::isfinite(sigma)) throw std::invalid_argument("build_cdf: non-finite parameters");
  sigma = std::max(sigma, kCoderSigmaFloor);
  const std::size_t symbols = static_cast<std::size_t>(v_max - v_min + 1);
  std::vector<double> masses(symbols + 2, 0.0);
  auto tail_above = [&](double t) { return 0.5 * erfc_m(t * kInvSqrt2, math); };
  // Edge j is the lower edge of value v_min + j; each edge tail is evaluated
  // once, on the side of the mean that keeps it small.
  auto edge = [&](std::size_t j) { return (static_cast<double>(v_min) - 0.5 + static_cast<double>(j) - mu) / sigma; };
  const double t_lo = edge(0), t_hi = edge(symbols);
  masses.front() = t_lo < -kNegligibleSigmas ? 0.0 : tail_above(-t_lo);
  masses.back() = t_hi > kNegligibleSigmas ? 0.0 : tail_above(t_hi);
  const double reach = kNegligibleSigmas * sigma + 1.0;
  std::size_t cached_edge = symbols + 1;
  bool cached_right = false;
  double cached = 0.0;
  auto side_tail = [&](std::size_t j, bool right) {
    if (j == cached_edge && right == cached_right) return cached;
    cached_edge = j;
    cached_right = right;
    cached = right ? tail_above(edge(j)) : tail_above(-edge(j));
    return cached;
  };
  for (std::size_t i = 0; i < symbols; ++i) {
    const double v = static_cast<double>(v_min) + static_cast<double>(i);
    if (std::fabs(v - mu) > reach) continue;
    double p;
    if (v - mu > 0.0) {
      const double a = side_tail(i, true);
      p = a - side_tail(i + 1, true);
    } else {
      const double a = side_tail(i, false);
      p = side_tail(i + 1, false) - a;
    }
    masses[i + 1] = std::max(p, 0.0);
  }
  const auto freq = quantize_masses(masses);
  QuantizedCdf cdf;
  cdf.v_min = v_min;
  cdf.v_max = v_max;
  cdf.cumulative.resize(freq.size() + 1, 0);
  for (std::size_t i = 0; i < freq.size(); ++i) cdf.cumulative[i + 1] = cdf.cumulative[i] + freq[i];
  return cdf;
}

std::uint64_t cdf_checksum(std::uint64_t seed, std::span<const std::uint32_t> cumulative) {
  std::uint64_t h = seed;
  for (std::uint32_t v : cumulative) {
    for (int b = 0; b < 4; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

}  // namespace cae
