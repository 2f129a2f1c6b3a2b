#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>

#include "cae/params.hpp"
#include "cae/stack.hpp"
#include "cae/tensor.hpp"

namespace cae {

/// Architecture of one codec model. Serialized as key=value text inside the
/// weight container; the text is the single source of truth for layer sizes.
struct ArchConfig {
  std::string profile = "custom";
  std::size_t n = 0;          // hyper-latent channels
  std::size_t m = 0;          // total latent channels
  bool hybrid = false;
  std::size_t m1 = 0;         // context-modeled channels (hybrid)
  std::size_t m2 = 0;         // scale-only channels (hybrid)
  std::size_t ga_kernel = 5;  // g_a / g_s filter size
  std::size_t h_kernel = 5;   // strided layers of h_a / h_s
  std::size_t h_unit_kernel = 3;  // stride-1 layer of h_a / h_s
  std::size_t f_hidden = 0;   // width of the estimator's hidden layers
  int v_min = -128;
  int v_max = 127;
  double lambda = 0.0;
  std::string metric = "mse";

  /// Channels of y coded with the context model (M, or M1 for hybrid).
  std::size_t modeled_channels() const { return hybrid ? m1 : m; }
  /// Channels of the bit-consuming context c'.
  std::size_t context_channels() const { return hybrid ? m1 : m; }
  /// Channels produced by h_s (c' plus sigma2 for hybrid).
  std::size_t hs_channels() const { return hybrid ? m1 + m2 : m; }

  void validate() const;
  std::uint8_t profile_id() const;
  std::string to_text() const;
  static ArchConfig from_text(std::string_view text);
  static ArchConfig from_profile(std::string_view name);
};

inline constexpr std::size_t kLatentDownscale = 16;  // x -> y
inline constexpr std::size_t kHyperDownscale = 4;    // y -> z
inline constexpr std::size_t kImageMultiple = kLatentDownscale * kHyperDownscale;

struct HsOutput {
  Tensor context;  // c' (M or M1 channels)
  Tensor sigma2;   // hybrid only: positive scales for y2
};

/// All trainable parameters of the codec plus its architecture.
class ModelWeights {
 public:
  explicit ModelWeights(ArchConfig config);

  /// Random initialization. `latent_gain` scales the last analysis layer so
  /// tests can exercise wide latent ranges.
  void initialize(std::uint64_t seed, double latent_gain = 1.0);

  const ArchConfig& config() const { return config_; }
  ArchConfig& mutable_config() { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  const Stack& ga() const { return ga_; }
  const Stack& gs() const { return gs_; }
  const Stack& ha() const { return ha_; }
  const Stack& hs() const { return hs_; }
  const Stack& f() const { return f_; }
  std::size_t log_sigma_z_index() const { return log_sigma_z_; }
  std::vector<double> sigma_z() const;

  /// Indices of parameters belonging to the entropy model (h_a, h_s, f,
  /// sigma_z); the rest belong to g_a / g_s.
  std::vector<std::size_t> entropy_param_indices() const;

  WeightFile to_weight_file() const;
  static ModelWeights from_weight_file(const WeightFile& wf);
  void save(const std::filesystem::path& path) const;
  static ModelWeights load(const std::filesystem::path& path);

 private:
  ArchConfig config_;
  ParamStore params_;
  Stack ga_, gs_, ha_, hs_, f_;
  std::size_t log_sigma_z_ = 0;
};

Tensor ga_forward(const Tensor& x, const ModelWeights& w, StackTape* tape = nullptr);
Tensor gs_forward(const Tensor& y_hat, const ModelWeights& w, StackTape* tape = nullptr);
Tensor ha_forward(const Tensor& y_hat, const ModelWeights& w, StackTape* tape = nullptr);
HsOutput hs_forward(const Tensor& z_hat, const ModelWeights& w, StackTape* tape = nullptr,
                    ConvBackend backend = ConvBackend::fast, MathMode math = MathMode::native);

/// Backward through h_s given gradients for c' and (hybrid) sigma2.
Tensor hs_backward(ModelWeights& w, const StackTape& tape, const Tensor& grad_context, const Tensor* grad_sigma2);

/// Channel split of y into (y1, y2) with M1 and M2 channels.
std::pair<Tensor, Tensor> hybrid_split(const Tensor& y, const ArchConfig& config);

}  // namespace cae
