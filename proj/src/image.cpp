#include "cae/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cae/fileutil.hpp"

namespace cae {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const unsigned char> b) : b_(b) {}

  std::size_t number() {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_++] - '0');
      if (++digits > 9) throw std::runtime_error("ppm: header number too large");
    }
    if (digits == 0) throw std::runtime_error("ppm: malformed header");
    return v;
  }
  void single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw std::runtime_error("ppm: missing whitespace after header");
    ++pos_;
  }
  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }
  std::span<const unsigned char> b_;
  std::size_t pos_ = 2;
};

}  // namespace

Image decode_ppm(std::span<const unsigned char> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw std::runtime_error("ppm: not a binary P6 file");
  HeaderReader hr(bytes);
  const std::size_t w = hr.number();
  const std::size_t h = hr.number();
  const std::size_t maxval = hr.number();
  hr.single_whitespace();
  if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 is supported");
  if (w == 0 || h == 0) throw std::runtime_error("ppm: empty image");
  const std::size_t need = w * h * 3;
  if (bytes.size() - hr.pos() < need) throw std::runtime_error("ppm: pixel data truncated");
  Image img(w, h);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(hr.pos()), need, img.rgb.begin());
  return img;
}

std::vector<unsigned char> encode_ppm(const Image& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

Image read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

void write_ppm(const std::filesystem::path& path, const Image& img) { write_file_atomic(path, encode_ppm(img)); }

std::size_t round_up(std::size_t v, std::size_t multiple) { return (v + multiple - 1) / multiple * multiple; }

Tensor image_to_tensor(const Image& img, std::size_t multiple) {
  const std::size_t H = round_up(img.height, multiple);
  const std::size_t W = round_up(img.width, multiple);
  Tensor t(H, W, 3);
  for (std::size_t y = 0; y < H; ++y) {
    const std::size_t sy = std::min(y, img.height - 1);
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t sx = std::min(x, img.width - 1);
      for (std::size_t c = 0; c < 3; ++c) t.at(y, x, c) = img.at(sy, sx, c) / 127.5 - 1.0;
    }
  }
  return t;
}

Image tensor_to_image(const Tensor& t, std::size_t width, std::size_t height) {
  if (t.channels() != 3 || t.width() < width || t.height() < height) {
    throw ShapeError("tensor_to_image: " + t.shape().str() + " cannot hold " + std::to_string(width) + "x" + std::to_string(height));
  }
  Image img(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (std::clamp(t.at(y, x, c), -1.0, 1.0) + 1.0) * 127.5;
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return img;
}

}  // namespace cae
