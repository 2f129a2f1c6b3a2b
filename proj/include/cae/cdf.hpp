#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cae/detmath.hpp"

namespace cae {

inline constexpr std::uint32_t kCdfPrecisionBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecisionBits;

/// Integer cumulative-frequency table over [v_min, v_max] plus one tail bin
/// on each side. Bin 0 is the lower tail, bin (v - v_min + 1) holds value v,
/// and the last bin is the upper tail. cumulative.front() = 0,
/// cumulative.back() = kCdfTotal, and every bin has frequency >= 1.
struct QuantizedCdf {
  int v_min = 0;
  int v_max = 0;
  std::vector<std::uint32_t> cumulative;

  std::size_t bins() const { return cumulative.size() - 1; }
  std::uint32_t frequency(std::size_t bin) const { return cumulative[bin + 1] - cumulative[bin]; }
  std::size_t bin_of(int value) const { return static_cast<std::size_t>(value - v_min + 1); }
  int value_of(std::size_t bin) const { return static_cast<int>(bin) - 1 + v_min; }
  bool valid() const;
};

/// Discretizes N(mu, sigma^2) * U(-1/2, 1/2) onto the alphabet. Sigma is
/// raised to the coder floor (0.01). Frequencies are 1 + floor(p * (T - bins))
/// with the remaining counts assigned by largest fractional part (ties to
/// the lower bin), so the table is a pure function of the inputs.
QuantizedCdf build_cdf(double mu, double sigma, int v_min, int v_max, MathMode math = MathMode::deterministic);

/// Same renormalization rule applied to arbitrary bin masses.
std::vector<std::uint32_t> quantize_masses(std::span<const double> masses, std::uint32_t total = kCdfTotal);

/// Folds a table into a running FNV-1a hash (for encoder/decoder agreement checks).
std::uint64_t cdf_checksum(std::uint64_t seed, std::span<const std::uint32_t> cumulative);
inline constexpr std::uint64_t kChecksumSeed = 0xcbf29ce484222325ull;

}  // namespace cae
