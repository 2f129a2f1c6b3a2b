#include "cae/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace cae {

std::string Shape3::str() const {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

Tensor::Tensor(Shape3 s, std::vector<double> values) : shape_(s), data_(std::move(values)) {
  if (data_.size() != s.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + s.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  const Shape3& x = a.shape();
  const Shape3& y = b.shape();
  if (x.h != y.h) throw ShapeError(std::string(what) + ": height " + std::to_string(x.h) + " vs " + std::to_string(y.h));
  if (x.w != y.w) throw ShapeError(std::string(what) + ": width " + std::to_string(x.w) + " vs " + std::to_string(y.w));
  if (x.c != y.c) throw ShapeError(std::string(what) + ": channels " + std::to_string(x.c) + " vs " + std::to_string(y.c));
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.height() != b.height()) throw ShapeError("concat_channels: height " + std::to_string(a.height()) + " vs " + std::to_string(b.height()));
  if (a.width() != b.width()) throw ShapeError("concat_channels: width " + std::to_string(a.width()) + " vs " + std::to_string(b.width()));
  Tensor out(a.height(), a.width(), a.channels() + b.channels());
  for (std::size_t y = 0; y < a.height(); ++y) {
    for (std::size_t x = 0; x < a.width(); ++x) {
      auto dst = out.pixel(y, x);
      auto pa = a.pixel(y, x);
      auto pb = b.pixel(y, x);
      std::copy(pa.begin(), pa.end(), dst.begin());
      std::copy(pb.begin(), pb.end(), dst.begin() + static_cast<std::ptrdiff_t>(pa.size()));
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& t, std::size_t first, std::size_t count) {
  if (first + count > t.channels()) {
    throw ShapeError("slice_channels: channels [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") exceed " + std::to_string(t.channels()));
  }
  Tensor out(t.height(), t.width(), count);
  for (std::size_t y = 0; y < t.height(); ++y) {
    for (std::size_t x = 0; x < t.width(); ++x) {
      auto src = t.pixel(y, x);
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(first), count, out.pixel(y, x).begin());
    }
  }
  return out;
}

void accumulate_channels(Tensor& dst, const Tensor& src, std::size_t first) {
  if (dst.height() != src.height() || dst.width() != src.width() || first + src.channels() > dst.channels()) {
    throw ShapeError("accumulate_channels: " + src.shape().str() + " into " + dst.shape().str());
  }
  for (std::size_t y = 0; y < dst.height(); ++y) {
    for (std::size_t x = 0; x < dst.width(); ++x) {
      auto s = src.pixel(y, x);
      auto d = dst.pixel(y, x);
      for (std::size_t c = 0; c < s.size(); ++c) d[first + c] += s[c];
    }
  }
}

}  // namespace cae
