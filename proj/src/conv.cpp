#include "cae/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <string>

namespace cae {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

constexpr std::size_t kRowBlock = 2048;

// Eigen picks kernels by operand alignment, so mapping caller memory directly
// would make results depend on where the heap placed it. Every GEMM operand
// and result is therefore an owned (aligned) matrix.
RowMat owned(const double* data, std::size_t rows, std::size_t cols) {
  return ConstMap(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void store(const RowMat& m, double* dst) { std::copy(m.data(), m.data() + m.size(), dst); }

void accumulate(const RowMat& m, std::span<double> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += m.data()[i];
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::size_t big_channels(const ConvLayerSpec& spec, std::size_t in_channels) {
  return spec.direction == Direction::down ? in_channels : spec.filters;
}
std::size_t small_channels(const ConvLayerSpec& spec, std::size_t in_channels) {
  return spec.direction == Direction::down ? spec.filters : in_channels;
}

// Gathers receptive fields of small positions [p0, p1) from the big grid.
void im2col(const Tensor& big, const ConvGeometry& g, std::size_t p0, std::size_t p1, RowMat& cols) {
  const std::size_t bc = big.channels();
  cols.resize(static_cast<Eigen::Index>(p1 - p0), static_cast<Eigen::Index>(g.kh * g.kw * bc));
  cols.setZero();
  for (std::size_t p = p0; p < p1; ++p) {
    const std::size_t oy = p / g.small_w;
    const std::size_t ox = p % g.small_w;
    double* row = cols.data() + (p - p0) * static_cast<std::size_t>(cols.cols());
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.big_h)) continue;
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.big_w)) continue;
        auto src = big.pixel(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
        std::copy(src.begin(), src.end(), row + (ky * g.kw + kx) * bc);
      }
    }
  }
}

// Scatter-adds receptive fields back into the big grid (adjoint of im2col).
void col2im(const RowMat& cols, const ConvGeometry& g, std::size_t p0, std::size_t p1, Tensor& big) {
  const std::size_t bc = big.channels();
  for (std::size_t p = p0; p < p1; ++p) {
    const std::size_t oy = p / g.small_w;
    const std::size_t ox = p % g.small_w;
    const double* row = cols.data() + (p - p0) * static_cast<std::size_t>(cols.cols());
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.big_h)) continue;
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.big_w)) continue;
        auto dst = big.pixel(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
        const double* src = row + (ky * g.kw + kx) * bc;
        for (std::size_t c = 0; c < bc; ++c) dst[c] += src[c];
      }
    }
  }
}

void add_bias(Tensor& t, std::span<const double> bias) {
  const std::size_t c = t.channels();
  double* d = t.data();
  for (std::size_t i = 0; i < t.size(); i += c) {
    for (std::size_t k = 0; k < c; ++k) d[i + k] += bias[k];
  }
}

Tensor down_reference(const Tensor& in, std::span<const double> w, std::span<const double> bias,
                      const ConvGeometry& g, std::size_t filters) {
  const std::size_t bc = in.channels();
  Tensor out(g.small_h, g.small_w, filters);
  std::vector<double> acc(filters);
  for (std::size_t oy = 0; oy < g.small_h; ++oy) {
    for (std::size_t ox = 0; ox < g.small_w; ++ox) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.big_h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.big_w)) continue;
          auto px = in.pixel(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
          const double* wk = w.data() + (ky * g.kw + kx) * bc * filters;
          for (std::size_t ci = 0; ci < bc; ++ci) {
            const double v = px[ci];
            const double* wr = wk + ci * filters;
            for (std::size_t co = 0; co < filters; ++co) acc[co] += v * wr[co];
          }
        }
      }
      auto dst = out.pixel(oy, ox);
      for (std::size_t co = 0; co < filters; ++co) dst[co] = acc[co] + bias[co];
    }
  }
  return out;
}

Tensor up_reference(const Tensor& in, std::span<const double> w, std::span<const double> bias,
                    const ConvGeometry& g, std::size_t filters) {
  const std::size_t sc = in.channels();
  Tensor out(g.big_h, g.big_w, filters);
  std::vector<double> acc(filters);
  for (std::size_t iy = 0; iy < g.big_h; ++iy) {
    for (std::size_t ix = 0; ix < g.big_w; ++ix) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto ny = static_cast<std::ptrdiff_t>(iy + g.pad_top) - static_cast<std::ptrdiff_t>(ky);
        if (ny < 0 || ny % static_cast<std::ptrdiff_t>(g.stride) != 0) continue;
        const auto oy = static_cast<std::size_t>(ny) / g.stride;
        if (oy >= g.small_h) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto nx = static_cast<std::ptrdiff_t>(ix + g.pad_left) - static_cast<std::ptrdiff_t>(kx);
          if (nx < 0 || nx % static_cast<std::ptrdiff_t>(g.stride) != 0) continue;
          const auto ox = static_cast<std::size_t>(nx) / g.stride;
          if (ox >= g.small_w) continue;
          auto px = in.pixel(oy, ox);
          const double* wk = w.data() + (ky * g.kw + kx) * filters * sc;
          for (std::size_t cb = 0; cb < filters; ++cb) {
            const double* wr = wk + cb * sc;
            double s = 0.0;
            for (std::size_t cs = 0; cs < sc; ++cs) s += wr[cs] * px[cs];
            acc[cb] += s;
          }
        }
      }
      auto dst = out.pixel(iy, ix);
      for (std::size_t cb = 0; cb < filters; ++cb) dst[cb] = acc[cb] + bias[cb];
    }
  }
  return out;
}

}  // namespace

void ConvLayerSpec::validate() const {
  if (stride < 1) throw std::invalid_argument("conv layer: stride must be >= 1");
  if (filters < 1) throw std::invalid_argument("conv layer: filter count must be >= 1");
  if (filter_h < 1 || filter_w < 1) throw std::invalid_argument("conv layer: filter dims must be >= 1");
}

ConvGeometry conv_geometry(const ConvLayerSpec& spec, std::size_t in_h, std::size_t in_w) {
  spec.validate();
  ConvGeometry g;
  g.kh = spec.filter_h;
  g.kw = spec.filter_w;
  g.stride = spec.stride;
  if (spec.direction == Direction::down) {
    g.big_h = in_h;
    g.big_w = in_w;
    if (spec.padding == Padding::same) {
      g.small_h = ceil_div(in_h, spec.stride);
      g.small_w = ceil_div(in_w, spec.stride);
    } else {
      if (in_h < spec.filter_h) throw ShapeError("conv2d valid: height " + std::to_string(in_h) + " smaller than filter");
      if (in_w < spec.filter_w) throw ShapeError("conv2d valid: width " + std::to_string(in_w) + " smaller than filter");
      g.small_h = (in_h - spec.filter_h) / spec.stride + 1;
      g.small_w = (in_w - spec.filter_w) / spec.stride + 1;
    }
  } else {
    g.small_h = in_h;
    g.small_w = in_w;
    if (spec.padding == Padding::same) {
      g.big_h = in_h * spec.stride;
      g.big_w = in_w * spec.stride;
    } else {
      g.big_h = (in_h - 1) * spec.stride + spec.filter_h;
      g.big_w = (in_w - 1) * spec.stride + spec.filter_w;
    }
  }
  if (spec.padding == Padding::same) {
    const auto total_h = static_cast<std::ptrdiff_t>((g.small_h - 1) * g.stride + g.kh) - static_cast<std::ptrdiff_t>(g.big_h);
    const auto total_w = static_cast<std::ptrdiff_t>((g.small_w - 1) * g.stride + g.kw) - static_cast<std::ptrdiff_t>(g.big_w);
    g.pad_top = static_cast<std::size_t>(std::max<std::ptrdiff_t>(total_h, 0)) / 2;
    g.pad_left = static_cast<std::size_t>(std::max<std::ptrdiff_t>(total_w, 0)) / 2;
  }
  return g;
}

Shape3 conv_output_shape(const ConvLayerSpec& spec, const Shape3& in) {
  const ConvGeometry g = conv_geometry(spec, in.h, in.w);
  if (spec.direction == Direction::down) return {g.small_h, g.small_w, spec.filters};
  return {g.big_h, g.big_w, spec.filters};
}

std::size_t conv_weight_count(const ConvLayerSpec& spec, std::size_t in_channels) {
  return spec.filter_h * spec.filter_w * in_channels * spec.filters;
}

Tensor conv2d(const Tensor& input, std::span<const double> weights, std::span<const double> bias,
              const ConvLayerSpec& spec, ConvBackend backend) {
  spec.validate();
  const std::size_t cin = input.channels();
  if (weights.size() != conv_weight_count(spec, cin)) {
    throw ShapeError("conv2d: input channels " + std::to_string(cin) + " do not match weight count " +
                     std::to_string(weights.size()) + " for " + std::to_string(spec.filter_h) + "x" +
                     std::to_string(spec.filter_w) + "x" + std::to_string(spec.filters) + " filters");
  }
  if (bias.size() != spec.filters) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " vs filters " + std::to_string(spec.filters));
  }
  const ConvGeometry g = conv_geometry(spec, input.height(), input.width());
  const std::size_t bc = big_channels(spec, cin);
  const std::size_t sc = small_channels(spec, cin);
  const auto K = static_cast<Eigen::Index>(g.kh * g.kw * bc);
  const std::size_t positions = g.small_h * g.small_w;

  if (backend == ConvBackend::reference) {
    return spec.direction == Direction::down ? down_reference(input, weights, bias, g, spec.filters)
                                             : up_reference(input, weights, bias, g, spec.filters);
  }

  const RowMat W = owned(weights.data(), static_cast<std::size_t>(K), sc);
  RowMat cols, prod;
  if (spec.direction == Direction::down) {
    Tensor out(g.small_h, g.small_w, sc);
    for (std::size_t p0 = 0; p0 < positions; p0 += kRowBlock) {
      const std::size_t p1 = std::min(positions, p0 + kRowBlock);
      im2col(input, g, p0, p1, cols);
      prod.noalias() = cols * W;
      store(prod, out.data() + p0 * sc);
    }
    add_bias(out, bias);
    return out;
  }
  Tensor out(g.big_h, g.big_w, bc);
  for (std::size_t p0 = 0; p0 < positions; p0 += kRowBlock) {
    const std::size_t p1 = std::min(positions, p0 + kRowBlock);
    const RowMat Y = owned(input.data() + p0 * sc, p1 - p0, sc);
    cols.noalias() = Y * W.transpose();
    col2im(cols, g, p0, p1, out);
  }
  add_bias(out, bias);
  return out;
}

void conv2d_backward(const Tensor& output_grad, const Tensor& input, std::span<const double> weights,
                     const ConvLayerSpec& spec, Tensor* grad_input, std::span<double> grad_weights,
                     std::span<double> grad_bias) {
  const std::size_t cin = input.channels();
  const Shape3 expected = conv_output_shape(spec, input.shape());
  if (!(output_grad.shape() == expected)) {
    throw ShapeError("conv2d_backward: output gradient " + output_grad.shape().str() + " vs forward output " + expected.str());
  }
  if (weights.size() != conv_weight_count(spec, cin) || grad_weights.size() != weights.size()) {
    throw ShapeError("conv2d_backward: weight count mismatch");
  }
  const ConvGeometry g = conv_geometry(spec, input.height(), input.width());
  const std::size_t bc = big_channels(spec, cin);
  const std::size_t sc = small_channels(spec, cin);
  const auto K = static_cast<Eigen::Index>(g.kh * g.kw * bc);
  const std::size_t positions = g.small_h * g.small_w;
  const RowMat W = owned(weights.data(), static_cast<std::size_t>(K), sc);
  RowMat GW = RowMat::Zero(K, static_cast<Eigen::Index>(sc));

  {
    const std::size_t fc = spec.filters;
    const double* d = output_grad.data();
    for (std::size_t i = 0; i < output_grad.size(); i += fc) {
      for (std::size_t k = 0; k < fc; ++k) grad_bias[k] += d[i + k];
    }
  }

  RowMat cols, prod;
  if (spec.direction == Direction::down) {
    if (grad_input) *grad_input = Tensor(input.shape());
    for (std::size_t p0 = 0; p0 < positions; p0 += kRowBlock) {
      const std::size_t p1 = std::min(positions, p0 + kRowBlock);
      const RowMat G = owned(output_grad.data() + p0 * sc, p1 - p0, sc);
      im2col(input, g, p0, p1, cols);
      GW.noalias() += cols.transpose() * G;
      if (grad_input) {
        cols.noalias() = G * W.transpose();
        col2im(cols, g, p0, p1, *grad_input);
      }
    }
    accumulate(GW, grad_weights);
    return;
  }
  if (grad_input) *grad_input = Tensor(input.shape());
  for (std::size_t p0 = 0; p0 < positions; p0 += kRowBlock) {
    const std::size_t p1 = std::min(positions, p0 + kRowBlock);
    im2col(output_grad, g, p0, p1, cols);
    const RowMat Y = owned(input.data() + p0 * sc, p1 - p0, sc);
    GW.noalias() += cols.transpose() * Y;
    if (grad_input) {
      prod.noalias() = cols * W;
      store(prod, grad_input->data() + p0 * sc);
    }
  }
  accumulate(GW, grad_weights);
}

}  // namespace cae
