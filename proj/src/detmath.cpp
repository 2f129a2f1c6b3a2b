#include "cae/detmath.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace cae {

namespace {
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;
constexpr double kLog2e = 1.44269504088896338700e+00;
constexpr double kInvSqrtPi = 0.56418958354775628695;
constexpr double kTwoOverSqrtPi = 1.12837916709551257390;

constexpr int kSeriesTerms = 128;
// 1 / (2n + 1), rounded once at compile time.
constexpr auto kInvOdd = [] {
  std::array<double, kSeriesTerms> t{};
  for (int n = 0; n < kSeriesTerms; ++n) t[static_cast<std::size_t>(n)] = 1.0 / static_cast<double>(2 * n + 1);
  return t;
}();
}  // namespace

double det_exp(double x) {
  if (std::isnan(x)) return x;
  if (x > 709.78) return std::numeric_limits<double>::infinity();
  if (x < -745.2) return 0.0;
  // x = k ln2 + r with |r| <= ln2 / 2; k ln2_hi is exact for |k| < 2^11.
  const double k = std::floor(x * kLog2e + 0.5);
  const double r = (x - k * kLn2Hi) - k * kLn2Lo;
  double p = 1.0 / 6227020800.0;  // 1/13!
  constexpr double kInvFact[] = {1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0, 1.0 / 362880.0,
                                 1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,     1.0 / 120.0,
                                 1.0 / 24.0,        1.0 / 6.0,        0.5,             1.0,
                                 1.0};
  for (double c : kInvFact) p = p * r + c;
  return std::ldexp(p, static_cast<int>(k));
}

double det_erfc(double x) {
  if (std::isnan(x)) return x;
  if (x < 0.0) return 2.0 - det_erfc(-x);
  if (x > 27.3) return 0.0;
  const double x2 = x * x;
  if (x < 2.5) {
    // erf(x) = 2x/sqrt(pi) e^{-x^2} sum_n (2x^2)^n / (1*3*...*(2n+1)); all terms positive.
    const double q = 2.0 * x2;
    double term = 1.0;
    double sum = 1.0;
    for (int n = 1; n < kSeriesTerms; ++n) {
      term *= q * kInvOdd[static_cast<std::size_t>(n)];
      sum += term;
      if (term < sum * 1e-18) break;
    }
    const double erf = kTwoOverSqrtPi * x * det_exp(-x2) * sum;
    return 1.0 - erf;
  }
  // Continued fraction erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))).
  // Term counts leave a wide margin over what double precision needs.
  const int terms = x < 3.0 ? 64 : x < 4.0 ? 44 : x < 6.0 ? 30 : 20;
  double f = x;
  for (int n = terms; n >= 1; --n) f = x + (0.5 * n) / f;
  return kInvSqrtPi * det_exp(-x2) / f;
}

double exp_m(double x, MathMode mode) {
  return mode == MathMode::deterministic ? det_exp(x) : std::exp(x);
}

double erfc_m(double x, MathMode mode) {
  return mode == MathMode::deterministic ? det_erfc(x) : std::erfc(x);
}

}  // namespace cae
