#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "cae/conv.hpp"
#include "cae/detmath.hpp"
#include "cae/params.hpp"
#include "cae/tensor.hpp"

namespace cae {

/// Values recorded by a forward pass so the same pass can be differentiated.
struct StackTape {
  std::vector<Tensor> inputs;  // input of each layer
  std::vector<Tensor> pre;     // conv output before the activation
  std::vector<Tensor> post;    // activation output
  bool recorded() const { return !inputs.empty(); }
};

/// A fixed chain of conv + activation layers whose parameters live in a
/// ParamStore. This is the whole "graph" the codec needs: each transform is
/// one Stack, and the model wires stacks together explicitly.
class Stack {
 public:
  struct Layer {
    ConvLayerSpec spec;
    std::size_t in_channels = 0;
    std::size_t weight = 0;
    std::size_t bias = 0;
    std::size_t gamma = 0;  // GDN/IGDN only
    std::size_t beta = 0;
  };

  void add_layer(ParamStore& store, const std::string& name, const ConvLayerSpec& spec, std::size_t in_channels);

  /// Random initialization: uniform weights with variance gain^2 / fan_in,
  /// zero bias, GDN beta = 1 and gamma = 0.1 I (plus a small off-diagonal).
  void initialize(ParamStore& store, std::mt19937_64& rng, double gain = 1.0) const;

  Tensor forward(const ParamStore& store, const Tensor& x, StackTape* tape = nullptr,
                 ConvBackend backend = ConvBackend::fast, MathMode math = MathMode::native) const;

  /// Accumulates parameter gradients into `store` and returns d/dinput.
  Tensor backward(ParamStore& store, const StackTape& tape, const Tensor& output_grad) const;

  Shape3 output_shape(Shape3 in) const;
  std::size_t in_channels() const { return layers_.front().in_channels; }
  std::size_t out_channels() const { return layers_.back().spec.filters; }
  const std::vector<Layer>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<Layer> layers_;
};

Tensor relu(const Tensor& x);
Tensor capped_exp(const Tensor& x, MathMode math = MathMode::native);

}  // namespace cae
