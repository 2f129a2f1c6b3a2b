#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cae/tensor.hpp"

namespace cae {

/// 8-bit interleaved RGB image.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255). Comments in the header are accepted.
Image decode_ppm(std::span<const unsigned char> bytes);
std::vector<unsigned char> encode_ppm(const Image& img);
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

/// Maps 0..255 to [-1, 1] and replicates edges up to multiples of `multiple`.
Tensor image_to_tensor(const Image& img, std::size_t multiple = 1);

/// Clips to [-1, 1], rescales to 0..255 with rounding and crops to w x h.
Image tensor_to_image(const Tensor& t, std::size_t width, std::size_t height);

std::size_t round_up(std::size_t v, std::size_t multiple);

}  // namespace cae
