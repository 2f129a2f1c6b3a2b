#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cae/entropy.hpp"
#include "cae/image.hpp"
#include "cae/transforms.hpp"

namespace cae {

inline constexpr char kStreamMagic[4] = {'C', 'A', 'E', '1'};
inline constexpr std::uint16_t kStreamVersion = 1;
inline constexpr std::uint8_t kFlagHybrid = 1u << 0;
inline constexpr std::uint8_t kFlagChecksum = 1u << 1;
inline constexpr std::uint8_t kFlagDeterministicMath = 1u << 2;
inline constexpr std::size_t kHeaderBytes = 36;

/// Fixed-size little-endian stream header. Lengths are payload byte counts.
struct StreamHeader {
  std::uint16_t version = kStreamVersion;
  std::uint8_t profile_id = 0;
  std::uint8_t flags = 0;
  std::uint32_t width = 0;   // original (unpadded) image size
  std::uint32_t height = 0;
  std::uint16_t lambda_id = 0;
  std::uint16_t n = 0;
  std::uint16_t m = 0;
  std::uint16_t m1 = 0;
  std::uint32_t z_len = 0;
  std::uint32_t y1_len = 0;
  std::uint32_t y2_len = 0;

  bool hybrid() const { return flags & kFlagHybrid; }
  bool has_checksum() const { return flags & kFlagChecksum; }
  bool deterministic_math() const { return flags & kFlagDeterministicMath; }
  std::size_t payload_bytes() const { return std::size_t{z_len} + y1_len + y2_len; }
};

std::vector<unsigned char> write_header(const StreamHeader& h);
StreamHeader read_header(std::span<const unsigned char> bytes);

/// lambda * 10000, rounded; identifies the rate point a model was trained for.
std::uint16_t lambda_id(double lambda);

struct CodecOptions {
  bool deterministic_math = true;  // reference convolutions + portable exp/erfc for h_s and f
  bool checksum = false;           // embed a hash of every CDF for agreement checks
};

/// Wall time per pipeline stage in seconds.
struct StageTimes {
  double transforms = 0.0;  // g_a, h_a, h_s, g_s
  double context = 0.0;     // window extraction and the estimator f
  double cdf = 0.0;         // building quantized tables
  double coder = 0.0;       // arithmetic coding
  double total() const { return transforms + context + cdf + coder; }
  StageTimes& operator+=(const StageTimes& o);
};

struct EncodeResult {
  std::vector<unsigned char> bytes;
  StreamHeader header;
  LatentGrid y_hat;
  LatentGrid z_hat;
  Tensor x_hat;              // encoder-side reconstruction, padded size
  double est_bits = 0.0;     // sum of -log2 p over y_hat and z_hat under the model
  double est_bits_z = 0.0;
  std::size_t real_bits = 0; // entropy-coded payload bits (header excluded)
  std::size_t clamp_count = 0;
  std::size_t latent_count = 0;
  double bpp = 0.0;          // whole file, original dimensions
  bool clamp_warning() const { return latent_count > 0 && clamp_count * 100 > latent_count; }
};

struct DecodeResult {
  StreamHeader header;
  LatentGrid y_hat;
  LatentGrid z_hat;
  Tensor x_hat;  // padded size, unclipped
  Image image;   // clipped, rescaled and cropped
};

EncodeResult encode_image(const Image& img, const ModelWeights& w, const CodecOptions& opt = {},
                          StageTimes* times = nullptr);
EncodeResult encode_tensor(const Tensor& x, std::size_t width, std::size_t height, const ModelWeights& w,
                           const CodecOptions& opt = {}, StageTimes* times = nullptr);
DecodeResult decode_image(std::span<const unsigned char> bytes, const ModelWeights& w, StageTimes* times = nullptr);

/// bits per pixel of a whole stream relative to the dimensions in its header.
double stream_bpp(std::span<const unsigned char> bytes);

}  // namespace cae
