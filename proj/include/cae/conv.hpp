#pragma once

#include <cstddef>
#include <span>

#include "cae/tensor.hpp"

namespace cae {

enum class Direction { down, up };
enum class Activation { gdn, igdn, relu, exp, linear };
enum class Padding { same, valid };

/// One convolutional layer: filters x filter_h x filter_w / stride, with the
/// direction selecting a strided convolution (down) or its transpose (up).
struct ConvLayerSpec {
  std::size_t filters = 1;
  std::size_t filter_h = 1;
  std::size_t filter_w = 1;
  std::size_t stride = 1;
  Direction direction = Direction::down;
  Activation activation = Activation::linear;
  Padding padding = Padding::same;

  void validate() const;
};

/// Which implementation computes the convolution.
///
/// `fast` runs im2col + GEMM; `reference` runs fixed-order loops whose result
/// depends only on IEEE double arithmetic, for paths that must agree between
/// encoder and decoder across machines.
enum class ConvBackend { fast, reference };

/// Index mapping between the high-resolution ("big") grid and the strided
/// ("small") grid of a layer. Down layers read big and write small; up
/// layers are the exact adjoint and read small, write big.
struct ConvGeometry {
  std::size_t big_h = 0, big_w = 0;
  std::size_t small_h = 0, small_w = 0;
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t kh = 0, kw = 0, stride = 1;
};

ConvGeometry conv_geometry(const ConvLayerSpec& spec, std::size_t in_h, std::size_t in_w);
Shape3 conv_output_shape(const ConvLayerSpec& spec, const Shape3& in);

/// Number of weights for a layer with `in_channels` inputs. Layout is
/// [kh][kw][big_channels][small_channels] for both directions, so a down layer
/// and an up layer with swapped channel counts share one weight array.
std::size_t conv_weight_count(const ConvLayerSpec& spec, std::size_t in_channels);

/// Linear part of a layer (no activation). Bias has `spec.filters` entries.
Tensor conv2d(const Tensor& input, std::span<const double> weights, std::span<const double> bias,
              const ConvLayerSpec& spec, ConvBackend backend = ConvBackend::fast);

/// Accumulates weight and bias gradients and, when `grad_input` is non-null,
/// writes the gradient with respect to the input.
void conv2d_backward(const Tensor& output_grad, const Tensor& input, std::span<const double> weights,
                     const ConvLayerSpec& spec, Tensor* grad_input, std::span<double> grad_weights,
                     std::span<double> grad_bias);

}  // namespace cae
