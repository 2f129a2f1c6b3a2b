#include "cae/transforms.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cae/fileutil.hpp"

namespace cae {

namespace {

ConvLayerSpec layer(std::size_t filters, std::size_t k, std::size_t stride, Direction dir, Activation act,
                    Padding pad = Padding::same) {
  return ConvLayerSpec{filters, k, k, stride, dir, act, pad};
}

void check_downscale(const Shape3& in, const Shape3& out, std::size_t factor, const char* what) {
  if (out.h * factor != in.h || out.w * factor != in.w) {
    throw ShapeError(std::string(what) + ": " + in.str() + " -> " + out.str() + " is not a " +
                     std::to_string(factor) + "x spatial reduction");
  }
}

std::size_t parse_size(const std::string& v, const std::string& key) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("config: bad value for " + key + ": " + v);
  return out;
}

int parse_int(const std::string& v, const std::string& key) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("config: bad value for " + key + ": " + v);
  return out;
}

}  // namespace

void ArchConfig::validate() const {
  if (n == 0 || m == 0) throw std::invalid_argument("arch: N and M must be positive");
  if (hybrid) {
    if (m1 == 0 || m2 == 0) throw std::invalid_argument("arch: hybrid requires M1, M2 > 0");
    if (m1 + m2 != m) throw std::invalid_argument("arch: hybrid requires M = M1 + M2");
  }
  if (ga_kernel == 0 || h_kernel == 0 || h_unit_kernel == 0 || f_hidden == 0) {
    throw std::invalid_argument("arch: kernel sizes and f width must be positive");
  }
  if (!(v_min <= 0 && 0 <= v_max)) throw std::invalid_argument("arch: latent bounds must satisfy v_min <= 0 <= v_max");
  if (metric != "mse" && metric != "msssim") throw std::invalid_argument("arch: metric must be mse or msssim");
}

std::uint8_t ArchConfig::profile_id() const {
  if (profile == "tiny") return 1;
  if (profile == "base") return 2;
  if (profile == "hybrid-320") return 3;
  if (profile == "hybrid-400") return 4;
  return 0;
}

std::string ArchConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "profile=" << profile << "\n"
      << "N=" << n << "\n"
      << "M=" << m << "\n"
      << "hybrid=" << (hybrid ? 1 : 0) << "\n"
      << "M1=" << m1 << "\n"
      << "M2=" << m2 << "\n"
      << "ga_kernel=" << ga_kernel << "\n"
      << "h_kernel=" << h_kernel << "\n"
      << "h_unit_kernel=" << h_unit_kernel << "\n"
      << "f_hidden=" << f_hidden << "\n"
      << "v_min=" << v_min << "\n"
      << "v_max=" << v_max << "\n"
      << "lambda=" << lambda << "\n"
      << "metric=" << metric << "\n";
  return out.str();
}

ArchConfig ArchConfig::from_text(std::string_view text) {
  ArchConfig c;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "profile") c.profile = value;
    else if (key == "N") c.n = parse_size(value, key);
    else if (key == "M") c.m = parse_size(value, key);
    else if (key == "hybrid") c.hybrid = parse_size(value, key) != 0;
    else if (key == "M1") c.m1 = parse_size(value, key);
    else if (key == "M2") c.m2 = parse_size(value, key);
    else if (key == "ga_kernel") c.ga_kernel = parse_size(value, key);
    else if (key == "h_kernel") c.h_kernel = parse_size(value, key);
    else if (key == "h_unit_kernel") c.h_unit_kernel = parse_size(value, key);
    else if (key == "f_hidden") c.f_hidden = parse_size(value, key);
    else if (key == "v_min") c.v_min = parse_int(value, key);
    else if (key == "v_max") c.v_max = parse_int(value, key);
    else if (key == "lambda") c.lambda = std::stod(value);
    else if (key == "metric") c.metric = value;
    else throw std::invalid_argument("config: unknown architecture key '" + key + "'");
  }
  c.validate();
  return c;
}

ArchConfig ArchConfig::from_profile(std::string_view name) {
  ArchConfig c;
  c.profile = std::string(name);
  if (name == "tiny") {
    c.n = 32;
    c.m = 48;
    c.f_hidden = 48;
  } else if (name == "base") {
    c.n = 128;
    c.m = 192;
    c.f_hidden = 192;
  } else if (name == "hybrid-320" || name == "hybrid-400") {
    c.hybrid = true;
    c.n = name == "hybrid-320" ? 320 : 400;
    c.m1 = 192;
    c.m2 = name == "hybrid-320" ? 228 : 408;
    c.m = c.m1 + c.m2;
    c.f_hidden = 192;
  } else {
    throw std::invalid_argument("unknown profile '" + std::string(name) + "' (expected tiny, base, hybrid-320, hybrid-400)");
  }
  c.validate();
  return c;
}

ModelWeights::ModelWeights(ArchConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const std::size_t n = c.n, m = c.m, k = c.ga_kernel;
  // Analysis / synthesis: four stride-2 stages with GDN / IGDN between them.
  ga_.add_layer(params_, "ga.0", layer(n, k, 2, Direction::down, Activation::gdn), 3);
  ga_.add_layer(params_, "ga.1", layer(n, k, 2, Direction::down, Activation::gdn), n);
  ga_.add_layer(params_, "ga.2", layer(n, k, 2, Direction::down, Activation::gdn), n);
  ga_.add_layer(params_, "ga.3", layer(m, k, 2, Direction::down, Activation::linear), n);

  gs_.add_layer(params_, "gs.0", layer(n, k, 2, Direction::up, Activation::igdn), m);
  gs_.add_layer(params_, "gs.1", layer(n, k, 2, Direction::up, Activation::igdn), n);
  gs_.add_layer(params_, "gs.2", layer(n, k, 2, Direction::up, Activation::igdn), n);
  gs_.add_layer(params_, "gs.3", layer(3, k, 2, Direction::up, Activation::linear), n);

  ha_.add_layer(params_, "ha.0", layer(n, c.h_unit_kernel, 1, Direction::down, Activation::relu), m);
  ha_.add_layer(params_, "ha.1", layer(n, c.h_kernel, 2, Direction::down, Activation::relu), n);
  ha_.add_layer(params_, "ha.2", layer(n, c.h_kernel, 2, Direction::down, Activation::linear), n);

  // h_s ends in an exponentiation; for hybrid only the sigma2 part is
  // exponentiated, which hs_forward applies after the channel split.
  hs_.add_layer(params_, "hs.0", layer(n, c.h_kernel, 2, Direction::up, Activation::relu), n);
  hs_.add_layer(params_, "hs.1", layer(n, c.h_kernel, 2, Direction::up, Activation::relu), n);
  hs_.add_layer(params_, "hs.2",
                layer(c.hs_channels(), c.h_unit_kernel, 1, Direction::up, c.hybrid ? Activation::linear : Activation::exp), n);

  // Estimator: three valid 2x2 convolutions over the 4x4 window (4 -> 3 -> 2 -> 1).
  const std::size_t f_in = c.context_channels() + c.modeled_channels();
  f_.add_layer(params_, "f.0", layer(c.f_hidden, 2, 1, Direction::down, Activation::relu, Padding::valid), f_in);
  f_.add_layer(params_, "f.1", layer(c.f_hidden, 2, 1, Direction::down, Activation::relu, Padding::valid), c.f_hidden);
  f_.add_layer(params_, "f.2", layer(2 * c.modeled_channels(), 2, 1, Direction::down, Activation::linear, Padding::valid),
               c.f_hidden);

  log_sigma_z_ = params_.add("sigma_z.log", {n}, 0.0);
}

void ModelWeights::initialize(std::uint64_t seed, double latent_gain) {
  std::mt19937_64 rng(seed);
  ga_.initialize(params_, rng);
  gs_.initialize(params_, rng);
  ha_.initialize(params_, rng);
  hs_.initialize(params_, rng);
  f_.initialize(params_, rng);
  if (latent_gain != 1.0) {
    for (double& v : params_[ga_.layers().back().weight].value) v *= latent_gain;
  }
  // Start the estimator near (mu = 0, log sigma = 0).
  for (double& v : params_[f_.layers().back().weight].value) v *= 0.1;
  std::fill(params_[log_sigma_z_].value.begin(), params_[log_sigma_z_].value.end(), 0.0);
}

std::vector<double> ModelWeights::sigma_z() const {
  std::vector<double> s = params_[log_sigma_z_].value;
  for (double& v : s) v = std::exp(std::min(v, kExpInputCap));
  return s;
}

std::vector<std::size_t> ModelWeights::entropy_param_indices() const {
  std::vector<std::size_t> out;
  for (const Stack* s : {&ha_, &hs_, &f_}) {
    for (const auto& l : s->layers()) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
  }
  out.push_back(log_sigma_z_);
  return out;
}

WeightFile ModelWeights::to_weight_file() const {
  WeightFile wf;
  wf.config_text = config_.to_text();
  for (const Param& p : params_.all()) wf.entries.push_back(Param{p.name, p.shape, p.value, {}});
  return wf;
}

ModelWeights ModelWeights::from_weight_file(const WeightFile& wf) {
  ModelWeights w(ArchConfig::from_text(wf.config_text));
  if (wf.entries.size() != w.params_.size()) {
    throw std::runtime_error("weights: " + std::to_string(wf.entries.size()) + " entries, architecture expects " +
                             std::to_string(w.params_.size()));
  }
  for (std::size_t i = 0; i < wf.entries.size(); ++i) {
    const Param& src = wf.entries[i];
    Param& dst = w.params_[i];
    if (src.name != dst.name) throw std::runtime_error("weights: entry '" + src.name + "' where '" + dst.name + "' expected");
    if (src.shape != dst.shape) throw std::runtime_error("weights: shape mismatch for '" + src.name + "'");
    dst.value = src.value;
  }
  if (!w.params_.all_finite()) throw std::runtime_error("weights: non-finite parameter values");
  return w;
}

void ModelWeights::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize_weights(to_weight_file()));
}

ModelWeights ModelWeights::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return from_weight_file(deserialize_weights(bytes));
}

Tensor ga_forward(const Tensor& x, const ModelWeights& w, StackTape* tape) {
  if (x.channels() != 3) throw ShapeError("ga_forward: expected 3 channels, got " + std::to_string(x.channels()));
  if (x.height() % kImageMultiple != 0) throw ShapeError("ga_forward: height " + std::to_string(x.height()) + " not a multiple of 64");
  if (x.width() % kImageMultiple != 0) throw ShapeError("ga_forward: width " + std::to_string(x.width()) + " not a multiple of 64");
  Tensor y = w.ga().forward(w.params(), x, tape);
  check_downscale(x.shape(), y.shape(), kLatentDownscale, "ga_forward");
  return y;
}

Tensor gs_forward(const Tensor& y_hat, const ModelWeights& w, StackTape* tape) {
  if (y_hat.channels() != w.config().m) {
    throw ShapeError("gs_forward: latent channels " + std::to_string(y_hat.channels()) + " vs M = " + std::to_string(w.config().m));
  }
  Tensor x = w.gs().forward(w.params(), y_hat, tape);
  check_downscale(x.shape(), y_hat.shape(), kLatentDownscale, "gs_forward");
  return x;
}

Tensor ha_forward(const Tensor& y_hat, const ModelWeights& w, StackTape* tape) {
  if (y_hat.channels() != w.config().m) {
    throw ShapeError("ha_forward: latent channels " + std::to_string(y_hat.channels()) + " vs M = " + std::to_string(w.config().m));
  }
  Tensor z = w.ha().forward(w.params(), y_hat, tape);
  check_downscale(y_hat.shape(), z.shape(), kHyperDownscale, "ha_forward");
  return z;
}

HsOutput hs_forward(const Tensor& z_hat, const ModelWeights& w, StackTape* tape, ConvBackend backend, MathMode math) {
  const ArchConfig& c = w.config();
  if (z_hat.channels() != c.n) {
    throw ShapeError("hs_forward: hyper-latent channels " + std::to_string(z_hat.channels()) + " vs N = " + std::to_string(c.n));
  }
  if (w.hs().out_channels() != c.hs_channels()) {
    throw ShapeError("hs_forward: weights produce " + std::to_string(w.hs().out_channels()) + " channels, config expects " +
                     std::to_string(c.hs_channels()));
  }
  Tensor out = w.hs().forward(w.params(), z_hat, tape, backend, math);
  check_downscale(out.shape(), z_hat.shape(), kHyperDownscale, "hs_forward");
  if (!c.hybrid) return HsOutput{std::move(out), Tensor{}};
  return HsOutput{slice_channels(out, 0, c.m1), capped_exp(slice_channels(out, c.m1, c.m2), math)};
}

Tensor hs_backward(ModelWeights& w, const StackTape& tape, const Tensor& grad_context, const Tensor* grad_sigma2) {
  const ArchConfig& c = w.config();
  if (!tape.recorded()) throw std::logic_error("hs_backward: no recorded forward pass");
  if (!c.hybrid) return w.hs().backward(w.params(), tape, grad_context);
  const Tensor& raw = tape.post.back();
  Tensor grad(raw.shape());
  accumulate_channels(grad, grad_context, 0);
  if (grad_sigma2) {
    Tensor gs = *grad_sigma2;
    const Tensor raw_s = slice_channels(raw, c.m1, c.m2);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      const double pre = raw_s.data()[i];
      gs.data()[i] = pre < kExpInputCap ? gs.data()[i] * std::exp(pre) : 0.0;
    }
    accumulate_channels(grad, gs, c.m1);
  }
  return w.hs().backward(w.params(), tape, grad);
}

std::pair<Tensor, Tensor> hybrid_split(const Tensor& y, const ArchConfig& config) {
  if (!config.hybrid) throw std::invalid_argument("hybrid_split: configuration is not hybrid");
  if (y.channels() != config.m1 + config.m2) {
    throw ShapeError("hybrid_split: tensor has " + std::to_string(y.channels()) + " channels, expected M1 + M2 = " +
                     std::to_string(config.m1 + config.m2));
  }
  return {slice_channels(y, 0, config.m1), slice_channels(y, config.m1, config.m2)};
}

}  // namespace cae
