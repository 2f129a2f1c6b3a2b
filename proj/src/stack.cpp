#include "cae/stack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cae/gdn.hpp"

namespace cae {

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor capped_exp(const Tensor& x, MathMode math) {
  Tensor out = x;
  for (double& v : out.values()) v = exp_m(std::min(v, kExpInputCap), math);
  return out;
}

void Stack::add_layer(ParamStore& store, const std::string& name, const ConvLayerSpec& spec, std::size_t in_channels) {
  spec.validate();
  if (!layers_.empty() && layers_.back().spec.filters != in_channels) {
    throw ShapeError("stack '" + name + "': input channels " + std::to_string(in_channels) +
                     " do not follow previous layer's " + std::to_string(layers_.back().spec.filters));
  }
  Layer layer;
  layer.spec = spec;
  layer.in_channels = in_channels;
  const std::size_t big = spec.direction == Direction::down ? in_channels : spec.filters;
  const std::size_t small = spec.direction == Direction::down ? spec.filters : in_channels;
  layer.weight = store.add(name + ".w", {spec.filter_h, spec.filter_w, big, small});
  layer.bias = store.add(name + ".b", {spec.filters});
  if (spec.activation == Activation::gdn || spec.activation == Activation::igdn) {
    layer.gamma = store.add(name + ".gamma", {spec.filters, spec.filters});
    layer.beta = store.add(name + ".beta", {spec.filters});
  }
  layers_.push_back(layer);
}

void Stack::initialize(ParamStore& store, std::mt19937_64& rng, double gain) const {
  for (const Layer& l : layers_) {
    const auto& s = l.spec;
    double fan_in = static_cast<double>(s.filter_h * s.filter_w * l.in_channels);
    if (s.direction == Direction::up) fan_in /= static_cast<double>(s.stride * s.stride);
    const double limit = gain * std::sqrt(3.0 / std::max(fan_in, 1.0));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : store[l.weight].value) v = dist(rng);
    std::fill(store[l.bias].value.begin(), store[l.bias].value.end(), 0.0);
    if (s.activation == Activation::gdn || s.activation == Activation::igdn) {
      const std::size_t c = s.filters;
      auto& g = store[l.gamma].value;
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t k = 0; k < c; ++k) g[i * c + k] = i == k ? std::sqrt(0.1) : 0.01;
      }
      std::fill(store[l.beta].value.begin(), store[l.beta].value.end(), std::sqrt(1.0 - kGdnBetaMin));
    }
  }
}

Tensor Stack::forward(const ParamStore& store, const Tensor& x, StackTape* tape, ConvBackend backend,
                      MathMode math) const {
  if (layers_.empty()) throw std::logic_error("stack: no layers");
  if (tape) *tape = StackTape{};
  Tensor cur = x;
  for (const Layer& l : layers_) {
    if (cur.channels() != l.in_channels) {
      throw ShapeError("stack: input channels " + std::to_string(cur.channels()) + " vs expected " +
                       std::to_string(l.in_channels));
    }
    Tensor pre = conv2d(cur, store[l.weight].value, store[l.bias].value, l.spec, backend);
    Tensor post;
    switch (l.spec.activation) {
      case Activation::linear:
        post = pre;
        break;
      case Activation::relu:
        post = relu(pre);
        break;
      case Activation::exp:
        post = capped_exp(pre, math);
        break;
      case Activation::gdn:
      case Activation::igdn: {
        std::vector<double> gamma(store[l.gamma].size());
        std::vector<double> beta(store[l.beta].size());
        gdn_effective_params(store[l.gamma].value, store[l.beta].value, gamma, beta);
        post = gdn(pre, gamma, beta, l.spec.activation == Activation::igdn);
        break;
      }
    }
    if (tape) {
      tape->inputs.push_back(std::move(cur));
      tape->pre.push_back(std::move(pre));
      tape->post.push_back(post);
    }
    cur = std::move(post);
  }
  return cur;
}

Tensor Stack::backward(ParamStore& store, const StackTape& tape, const Tensor& output_grad) const {
  if (!tape.recorded() || tape.inputs.size() != layers_.size()) {
    throw std::logic_error("stack: backward called before a recorded forward pass");
  }
  Tensor grad = output_grad;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Layer& l = layers_[i];
    const Tensor& pre = tape.pre[i];
    require_same_shape(grad, pre, "stack backward");
    switch (l.spec.activation) {
      case Activation::linear:
        break;
      case Activation::relu:
        for (std::size_t k = 0; k < grad.size(); ++k) {
          if (!(pre.data()[k] > 0.0)) grad.data()[k] = 0.0;
        }
        break;
      case Activation::exp:
        for (std::size_t k = 0; k < grad.size(); ++k) {
          grad.data()[k] = pre.data()[k] < kExpInputCap ? grad.data()[k] * tape.post[i].data()[k] : 0.0;
        }
        break;
      case Activation::gdn:
      case Activation::igdn: {
        Param& pg = store[l.gamma];
        Param& pb = store[l.beta];
        std::vector<double> gamma(pg.size()), beta(pb.size());
        gdn_effective_params(pg.value, pb.value, gamma, beta);
        std::vector<double> dgamma(pg.size(), 0.0), dbeta(pb.size(), 0.0);
        grad = gdn_backward(grad, pre, gamma, beta, l.spec.activation == Activation::igdn, dgamma, dbeta);
        for (std::size_t k = 0; k < pg.size(); ++k) pg.grad[k] += 2.0 * pg.value[k] * dgamma[k];
        for (std::size_t k = 0; k < pb.size(); ++k) pb.grad[k] += 2.0 * pb.value[k] * dbeta[k];
        break;
      }
    }
    Tensor grad_in;
    conv2d_backward(grad, tape.inputs[i], store[l.weight].value, l.spec, &grad_in, store[l.weight].grad,
                    store[l.bias].grad);
    grad = std::move(grad_in);
  }
  return grad;
}

Shape3 Stack::output_shape(Shape3 in) const {
  for (const Layer& l : layers_) {
    if (in.c != l.in_channels) throw ShapeError("stack: channels " + std::to_string(in.c) + " vs " + std::to_string(l.in_channels));
    in = conv_output_shape(l.spec, in);
  }
  return in;
}

}  // namespace cae
