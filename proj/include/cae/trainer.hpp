#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cae/adam.hpp"
#include "cae/image.hpp"
#include "cae/transforms.hpp"

namespace cae {

enum class Conditioning { discrete, noisy };
enum class Metric { mse, msssim };

Conditioning parse_conditioning(const std::string& s);
Metric parse_metric(const std::string& s);
std::string to_string(Conditioning c);
std::string to_string(Metric m);

struct TrainConfig {
  double lambda = 0.02;
  Metric metric = Metric::mse;
  std::size_t batch = 4;
  std::size_t iterations = 2000;
  std::size_t crop = 64;
  double learning_rate = 1e-4;
  std::size_t decay_start = 1200;  // first halving
  std::size_t decay_every = 200;
  std::size_t max_halvings = 4;
  std::size_t pretrain_iterations = 0;  // phase 1 at constant lr; the schedule restarts afterwards
  std::size_t rate_points = 0;          // 0: 32 (base) or 16 (hybrid), capped at the latent positions
  Conditioning conditioning = Conditioning::discrete;
  std::uint64_t seed = 1;
  bool allow_any_lambda = false;
  bool audit_noise = false;  // check the discrete/noisy routing of every step
  std::size_t divergence_window = 1000;
  double divergence_factor = 10.0;

  /// Desk-scale defaults: lr 1e-4, four halvings spread over the last 40%.
  static TrainConfig desk(std::size_t iterations = 2000);
  /// 1M iterations, lr 5e-5, halving every 50k over the last 200k.
  static TrainConfig full_scale();
  void validate() const;
  double lr_at(std::size_t iter) const;

  /// key=value text (same keys as the CLI flags, underscores for dashes).
  static TrainConfig from_text(std::string_view text, TrainConfig base);
  static TrainConfig from_text(std::string_view text) { return from_text(text, desk()); }
  std::string to_text() const;
};

struct LossParts {
  double loss = 0.0;
  double rate_bits = 0.0;  // R: estimated bits for y (rescaled when sampled) and z
  double rate_y = 0.0;
  double rate_z = 0.0;
  double distortion = 0.0;  // D: MSE on 0..255, or 3000 (1 - MS-SSIM)
  double mse = 0.0;         // 0..255 scale
  double bpp = 0.0;         // R / pixels
};

/// L = lambda / (W_y H_y 256) R + (1 - lambda) / 1000 D.
double loss_total(double lambda, std::size_t wy, std::size_t hy, double rate_bits, double distortion);

/// Uniform sample of `count` distinct positions of an h x w grid (row-major indices).
std::vector<std::size_t> sample_rate_points(std::size_t h, std::size_t w, std::size_t count, std::mt19937_64& rng);

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Which values fed each consumer in one training step, read back from the
/// recorded tapes.
struct NoiseAudit {
  bool gs_input_discrete = false;
  bool ha_input_discrete = false;
  bool hs_input_discrete = false;
  bool ctx_known_discrete = false;
  bool pmf_y_noisy = false;
  bool pmf_z_noisy = false;
  /// True when the routing matches `mode`.
  bool consistent(Conditioning mode) const;
};

/// Loss of one batch under a fixed random stream (noise and rate points are
/// drawn from `rng` in a fixed order). With `with_grad`, parameter gradients
/// averaged over the batch are accumulated into the model.
LossParts batch_loss(ModelWeights& w, std::span<const Tensor> batch, const TrainConfig& cfg, std::mt19937_64& rng,
                     bool with_grad, NoiseAudit* audit = nullptr);

/// Deterministic held-out loss through the discrete pipeline: PMFs are
/// evaluated at the quantized latents and the rate covers every position.
LossParts eval_loss(const ModelWeights& w, std::span<const Tensor> images, double lambda, Metric metric);

struct LogRecord {
  std::size_t iter = 0;
  double loss = 0.0;
  double rate_bits = 0.0;
  double distortion = 0.0;
  double bpp = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<LogRecord> log;
  double smoothed_initial = 0.0;  // mean loss of the first window
  double smoothed_final = 0.0;    // mean loss of the last window
};

/// Mean of the first / last `window` losses of a trajectory.
double smoothed_head(const std::vector<LogRecord>& log, std::size_t window = 100);
double smoothed_tail(const std::vector<LogRecord>& log, std::size_t window = 100);

using LogSink = std::function<void(const LogRecord&)>;

/// Adam training on random crops of `corpus`. The model must already be
/// initialized; its lambda and metric are overwritten from `cfg`.
TrainResult train(ModelWeights& w, const std::vector<Image>& corpus, const TrainConfig& cfg,
                  const LogSink& sink = nullptr);

/// One line-delimited JSON record per log entry.
std::string log_record_json(const LogRecord& r);

struct AblationResult {
  TrainResult discrete;
  TrainResult noisy;
  double discrete_eval_loss = 0.0;
  double noisy_eval_loss = 0.0;
  /// (noisy - discrete) / noisy, positive when discrete conditioning wins.
  double relative_delta() const { return (noisy_eval_loss - discrete_eval_loss) / noisy_eval_loss; }
};

/// Trains the same initialization twice, once per conditioning mode, and
/// evaluates both on `heldout` with eval_loss.
AblationResult ablate_conditioning(const ArchConfig& arch, const std::vector<Image>& corpus,
                                   const std::vector<Image>& heldout, TrainConfig cfg);

}  // namespace cae
