#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cae {

/// Spatial-major shape of a dense grid: height x width x channels.
struct Shape3 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  std::size_t size() const { return h * w * c; }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
};

/// Dense 3-D real grid stored row-major as (row, column, channel).
///
/// Carries images, latents, contexts and their gradients. Channel values of
/// one pixel are contiguous, so a pixel is a span of `channels()` doubles.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : shape_{h, w, c}, data_(h * w * c, fill) {}
  explicit Tensor(Shape3 s, double fill = 0.0) : Tensor(s.h, s.w, s.c, fill) {}
  Tensor(Shape3 s, std::vector<double> values);

  const Shape3& shape() const { return shape_; }
  std::size_t height() const { return shape_.h; }
  std::size_t width() const { return shape_.w; }
  std::size_t channels() const { return shape_.c; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t ch) {
    return data_[(y * shape_.w + x) * shape_.c + ch];
  }
  double at(std::size_t y, std::size_t x, std::size_t ch) const {
    return data_[(y * shape_.w + x) * shape_.c + ch];
  }
  std::span<double> pixel(std::size_t y, std::size_t x) {
    return {data_.data() + (y * shape_.w + x) * shape_.c, shape_.c};
  }
  std::span<const double> pixel(std::size_t y, std::size_t x) const {
    return {data_.data() + (y * shape_.w + x) * shape_.c, shape_.c};
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

 private:
  Shape3 shape_;
  std::vector<double> data_;
};

/// Thrown when tensor shapes disagree; the message names the dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double dot(const Tensor& a, const Tensor& b);

/// Channel-wise concatenation of two grids with equal spatial size.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Copies channels [first, first + count) into a new grid.
Tensor slice_channels(const Tensor& t, std::size_t first, std::size_t count);

/// Adds `src` into channels [first, first + src.channels()) of `dst`.
void accumulate_channels(Tensor& dst, const Tensor& src, std::size_t first);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace cae
