#include "cae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cae/entropy.hpp"
#include "cae/fileutil.hpp"
#include "cae/metrics.hpp"
#include "cae/synthetic.hpp"

namespace cae {

namespace {

constexpr double kPixelScale = 127.5;  // [-1, 1] -> 0..255 spread
constexpr double kMsSsimFactor = 3000.0;

std::size_t auto_rate_points(const ArchConfig& c) { return c.hybrid ? 16 : 32; }

bool is_integer_valued(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return v == std::round(v); });
}

bool same_values(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && a.values() == b.values(); }

// d(-log2 max(p, floor)) / dp, with the floor passed through to the gradient.
double bits_slope(double p) { return -1.0 / (std::numbers::ln2 * std::max(p, kProbabilityFloor)); }

struct Distortion {
  double d = 0.0;
  double mse = 0.0;
  Tensor grad;  // dD / dx_hat
};

Distortion distortion(const Tensor& x, const Tensor& x_hat, Metric metric, bool with_grad) {
  require_same_shape(x, x_hat, "distortion");
  Distortion r;
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = x_hat.data()[i] - x.data()[i];
    s += e * e;
  }
  r.mse = s / n * kPixelScale * kPixelScale;
  if (metric == Metric::mse) {
    r.d = r.mse;
    if (with_grad) {
      r.grad = Tensor(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        r.grad.data()[i] = 2.0 * (x_hat.data()[i] - x.data()[i]) / n * kPixelScale * kPixelScale;
      }
    }
    return r;
  }
  Tensor a(x.shape()), b(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    a.data()[i] = (x.data()[i] + 1.0) * kPixelScale;
    b.data()[i] = (x_hat.data()[i] + 1.0) * kPixelScale;
  }
  Tensor g;
  const MsSsimResult m = ms_ssim(a, b, with_grad ? &g : nullptr);
  r.d = kMsSsimFactor * (1.0 - m.value);
  if (with_grad) {
    r.grad = std::move(g);
    r.grad *= -kMsSsimFactor * kPixelScale;
  }
  return r;
}

void check_finite(const LossParts& p) {
  if (!std::isfinite(p.rate_y)) throw NonFiniteLoss("non-finite loss: rate term R_y");
  if (!std::isfinite(p.rate_z)) throw NonFiniteLoss("non-finite loss: rate term R_z");
  if (!std::isfinite(p.distortion)) throw NonFiniteLoss("non-finite loss: distortion term D");
  if (!std::isfinite(p.loss)) throw NonFiniteLoss("non-finite loss: total L");
}

LossParts element_loss(ModelWeights& w, const Tensor& x, const TrainConfig& cfg, std::mt19937_64& rng, bool with_grad,
                       double weight, NoiseAudit* audit) {
  const ArchConfig& c = w.config();
  const bool discrete = cfg.conditioning == Conditioning::discrete;
  StackTape ga_t, ha_t, hs_t, gs_t;
  StackTape* tg = with_grad || audit ? &ga_t : nullptr;

  const Tensor y = ga_forward(x, w, tg);
  const Tensor y_q = quantize_values(y, c.v_min, c.v_max);
  const Tensor y_n = add_uniform_noise(y, rng);
  const Tensor& y_in = discrete ? y_q : y_n;

  const Tensor z = ha_forward(y_in, w, with_grad || audit ? &ha_t : nullptr);
  const Tensor z_q = quantize_values(z, c.v_min, c.v_max);
  const Tensor z_n = add_uniform_noise(z, rng);
  const Tensor& z_in = discrete ? z_q : z_n;

  const HsOutput hs = hs_forward(z_in, w, with_grad || audit ? &hs_t : nullptr);
  const Tensor x_hat = gs_forward(y_in, w, with_grad || audit ? &gs_t : nullptr);

  const std::size_t hy = y.height(), wy = y.width();
  const std::size_t mm = c.modeled_channels();
  const Tensor y_src = c.hybrid ? slice_channels(y_in, 0, mm) : y_in;  // feeds c''
  const Tensor y_val = c.hybrid ? slice_channels(y_n, 0, mm) : y_n;   // PMF arguments

  const std::size_t positions = hy * wy;
  const std::size_t count = std::min(cfg.rate_points ? cfg.rate_points : auto_rate_points(c), positions);
  const auto points = sample_rate_points(hy, wy, count, rng);
  const double scale = static_cast<double>(positions) / static_cast<double>(count);

  const double ra = cfg.lambda / (static_cast<double>(wy * hy) * 256.0) * weight;
  const double db = (1.0 - cfg.lambda) / 1000.0 * weight;

  LossParts parts;
  Tensor g_yn(y.shape()), g_ysrc(y_src.shape()), g_ctx(hs.context.shape()), g_sigma2, g_zn(z.shape());

  // Context-modeled latents at the sampled positions.
  double bits_y = 0.0;
  std::vector<double> d_mu(mm), d_sigma(mm);
  for (std::size_t idx : points) {
    const std::size_t l = idx / wy, k = idx % wy;
    StackTape ft;
    const PositionParams p = estimate_params_f(extract_ctx_prime(hs.context, k, l), extract_ctx_known(y_src, k, l), w,
                                               with_grad ? &ft : nullptr);
    for (std::size_t ch = 0; ch < mm; ++ch) {
      const PmfWithGrad g = pmf_gaussian_uniform_grad(y_val.at(l, k, ch), p.mu[ch], p.sigma[ch]);
      bits_y += symbol_bits(g.p);
      const double s = ra * scale * bits_slope(g.p);
      d_mu[ch] = s * g.d_mu;
      d_sigma[ch] = s * g.d_sigma;
      g_yn.at(l, k, ch) += s * g.d_value;
    }
    if (with_grad) {
      const WindowGrads wg = estimate_params_f_backward(w, ft, p, d_mu, d_sigma);
      scatter_ctx(g_ctx, wg.ctx_prime, k, l, false);
      scatter_ctx(g_ysrc, wg.ctx_known, k, l, true);
    }
  }
  parts.rate_y = bits_y * scale;

  // Scale-only part of the hybrid model: every position.
  if (c.hybrid) {
    const Tensor y2 = slice_channels(y_n, mm, c.m2);
    g_sigma2 = Tensor(y2.shape());
    for (std::size_t i = 0; i < y2.size(); ++i) {
      const PmfWithGrad g = pmf_gaussian_uniform_grad(y2.data()[i], 0.0, hs.sigma2.data()[i]);
      parts.rate_y += symbol_bits(g.p);
      const double s = ra * bits_slope(g.p);
      g_sigma2.data()[i] = s * g.d_sigma;
      const std::size_t pix = i / c.m2, ch = i % c.m2;
      g_yn.data()[pix * c.m + mm + ch] += s * g.d_value;
    }
  }

  // Hyper-latent with the trainable per-channel scale.
  const auto sz = w.sigma_z();
  std::vector<double> g_logsz(c.n, 0.0);
  for (std::size_t i = 0; i < z_n.size(); ++i) {
    const std::size_t ch = i % c.n;
    const PmfWithGrad g = pmf_gaussian_uniform_grad(z_n.data()[i], 0.0, sz[ch]);
    parts.rate_z += symbol_bits(g.p);
    const double s = ra * bits_slope(g.p);
    g_zn.data()[i] = s * g.d_value;
    g_logsz[ch] += s * g.d_sigma * sz[ch];
  }

  const Distortion dist = distortion(x, x_hat, cfg.metric, with_grad);
  parts.distortion = dist.d;
  parts.mse = dist.mse;
  parts.rate_bits = parts.rate_y + parts.rate_z;
  parts.loss = loss_total(cfg.lambda, wy, hy, parts.rate_bits, parts.distortion);
  parts.bpp = parts.rate_bits / static_cast<double>(x.height() * x.width());
  check_finite(parts);

  if (audit) {
    audit->gs_input_discrete = is_integer_valued(gs_t.inputs.front()) && same_values(gs_t.inputs.front(), y_q);
    audit->ha_input_discrete = is_integer_valued(ha_t.inputs.front()) && same_values(ha_t.inputs.front(), y_q);
    audit->hs_input_discrete = is_integer_valued(hs_t.inputs.front()) && same_values(hs_t.inputs.front(), z_q);
    audit->ctx_known_discrete = is_integer_valued(y_src);
    audit->pmf_y_noisy = !is_integer_valued(y_val);
    audit->pmf_z_noisy = !is_integer_valued(z_n);
  }

  if (!with_grad) return parts;

  auto& lsz = w.params()[w.log_sigma_z_index()].grad;
  for (std::size_t ch = 0; ch < c.n; ++ch) lsz[ch] += g_logsz[ch];

  Tensor g_xhat = dist.grad;
  g_xhat *= db;
  Tensor g_yin = w.gs().backward(w.params(), gs_t, g_xhat);
  accumulate_channels(g_yin, g_ysrc, 0);
  Tensor g_z = hs_backward(w, hs_t, g_ctx, c.hybrid ? &g_sigma2 : nullptr);
  g_z += g_zn;  // both z_hat (straight-through) and z_tilde are identity in z
  g_yin += w.ha().backward(w.params(), ha_t, g_z);
  g_yin += g_yn;
  w.ga().backward(w.params(), ga_t, g_yin);
  return parts;
}

TrainConfig rescaled_desk(TrainConfig c) {
  c.decay_start = c.iterations * 6 / 10;
  c.decay_every = std::max<std::size_t>(1, c.iterations / 10);
  return c;
}

}  // namespace

Conditioning parse_conditioning(const std::string& s) {
  if (s == "discrete") return Conditioning::discrete;
  if (s == "noisy") return Conditioning::noisy;
  throw std::invalid_argument("conditioning must be discrete or noisy, got '" + s + "'");
}

Metric parse_metric(const std::string& s) {
  if (s == "mse") return Metric::mse;
  if (s == "msssim") return Metric::msssim;
  throw std::invalid_argument("metric must be mse or msssim, got '" + s + "'");
}

std::string to_string(Conditioning c) { return c == Conditioning::discrete ? "discrete" : "noisy"; }
std::string to_string(Metric m) { return m == Metric::mse ? "mse" : "msssim"; }

TrainConfig TrainConfig::desk(std::size_t iterations) {
  TrainConfig c;
  c.iterations = iterations;
  return rescaled_desk(c);
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.batch = 8;
  c.crop = 256;
  c.iterations = 1'000'000;
  c.learning_rate = 5e-5;
  c.decay_start = 800'000;
  c.decay_every = 50'000;
  c.max_halvings = 4;
  return c;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (!allow_any_lambda && !(lambda >= 0.01 && lambda <= 0.5)) {
    throw std::invalid_argument("lambda " + std::to_string(lambda) + " outside [0.01, 0.5] (use allow_any_lambda to override)");
  }
  if (batch == 0 || iterations == 0) throw std::invalid_argument("batch and iterations must be positive");
  if (crop == 0 || crop % kImageMultiple != 0) throw std::invalid_argument("crop must be a positive multiple of 64");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (decay_every == 0) throw std::invalid_argument("decay_every must be positive");
}

double TrainConfig::lr_at(std::size_t iter) const {
  if (iter < pretrain_iterations) return learning_rate;
  const std::size_t i = iter - pretrain_iterations;
  if (i < decay_start) return learning_rate;
  const std::size_t halvings = std::min(max_halvings, (i - decay_start) / decay_every + 1);
  return learning_rate * std::ldexp(1.0, -static_cast<int>(halvings));
}

TrainConfig TrainConfig::from_text(std::string_view text, TrainConfig c) {
  bool schedule_given = false, iterations_given = false;
  auto num = [](const std::string& k, const std::string& v) {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("config: bad value for " + k + ": " + v);
    return d;
  };
  auto count = [&](const std::string& k, const std::string& v) {
    const double d = num(k, v);
    if (d < 0 || d != std::floor(d)) throw std::invalid_argument("config: " + k + " must be a nonnegative integer");
    return static_cast<std::size_t>(d);
  };
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k == "lambda") c.lambda = num(k, v);
    else if (k == "metric") c.metric = parse_metric(v);
    else if (k == "batch") c.batch = count(k, v);
    else if (k == "iterations") c.iterations = count(k, v), iterations_given = true;
    else if (k == "crop") c.crop = count(k, v);
    else if (k == "lr") c.learning_rate = num(k, v);
    else if (k == "decay_start") c.decay_start = count(k, v), schedule_given = true;
    else if (k == "decay_every") c.decay_every = count(k, v), schedule_given = true;
    else if (k == "max_halvings") c.max_halvings = count(k, v);
    else if (k == "pretrain_iterations") c.pretrain_iterations = count(k, v);
    else if (k == "rate_points") c.rate_points = count(k, v);
    else if (k == "conditioning") c.conditioning = parse_conditioning(v);
    else if (k == "seed") c.seed = count(k, v);
    else if (k == "allow_any_lambda") c.allow_any_lambda = v == "1" || v == "true";
    else if (k == "audit_noise") c.audit_noise = v == "1" || v == "true";
    else if (k == "divergence_window") c.divergence_window = count(k, v);
    else if (k == "divergence_factor") c.divergence_factor = num(k, v);
    else if (k == "profile" || k == "weights" || k == "data" || k == "out") continue;  // consumed by the CLI
    else throw std::invalid_argument("config: unknown training key '" + k + "'");
  }
  if (iterations_given && !schedule_given) c = rescaled_desk(c);
  return c;
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o.precision(17);
  o << "lambda=" << lambda << "\nmetric=" << to_string(metric) << "\nbatch=" << batch << "\niterations=" << iterations
    << "\ncrop=" << crop << "\nlr=" << learning_rate << "\ndecay_start=" << decay_start << "\ndecay_every=" << decay_every
    << "\nmax_halvings=" << max_halvings << "\npretrain_iterations=" << pretrain_iterations
    << "\nrate_points=" << rate_points << "\nconditioning=" << to_string(conditioning) << "\nseed=" << seed << "\n";
  return o.str();
}

double loss_total(double lambda, std::size_t wy, std::size_t hy, double rate_bits, double distortion) {
  return lambda / (static_cast<double>(wy) * static_cast<double>(hy) * 256.0) * rate_bits +
         (1.0 - lambda) / 1000.0 * distortion;
}

std::vector<std::size_t> sample_rate_points(std::size_t h, std::size_t w, std::size_t count, std::mt19937_64& rng) {
  const std::size_t n = h * w;
  if (count > n) throw std::invalid_argument("sample_rate_points: more points than positions");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

bool NoiseAudit::consistent(Conditioning mode) const {
  const bool discrete_inputs = mode == Conditioning::discrete;
  return gs_input_discrete == discrete_inputs && ha_input_discrete == discrete_inputs &&
         hs_input_discrete == discrete_inputs && ctx_known_discrete == discrete_inputs && pmf_y_noisy && pmf_z_noisy;
}

LossParts batch_loss(ModelWeights& w, std::span<const Tensor> batch, const TrainConfig& cfg, std::mt19937_64& rng,
                     bool with_grad, NoiseAudit* audit) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const double weight = 1.0 / static_cast<double>(batch.size());
  LossParts total;
  for (const Tensor& x : batch) {
    NoiseAudit a;
    const LossParts p = element_loss(w, x, cfg, rng, with_grad, weight, audit ? &a : nullptr);
    if (audit) {
      if (&x == &batch.front()) {
        *audit = a;
      } else {
        audit->gs_input_discrete &= a.gs_input_discrete;
        audit->ha_input_discrete &= a.ha_input_discrete;
        audit->hs_input_discrete &= a.hs_input_discrete;
        audit->ctx_known_discrete &= a.ctx_known_discrete;
        audit->pmf_y_noisy &= a.pmf_y_noisy;
        audit->pmf_z_noisy &= a.pmf_z_noisy;
      }
    }
    total.loss += p.loss * weight;
    total.rate_bits += p.rate_bits * weight;
    total.rate_y += p.rate_y * weight;
    total.rate_z += p.rate_z * weight;
    total.distortion += p.distortion * weight;
    total.mse += p.mse * weight;
    total.bpp += p.bpp * weight;
  }
  return total;
}

LossParts eval_loss(const ModelWeights& w, std::span<const Tensor> images, double lambda, Metric metric) {
  if (images.empty()) throw std::invalid_argument("eval_loss: no images");
  const ArchConfig& c = w.config();
  const double weight = 1.0 / static_cast<double>(images.size());
  LossParts total;
  for (const Tensor& x : images) {
    const Tensor y_q = quantize_values(ga_forward(x, w), c.v_min, c.v_max);
    const Tensor z_q = quantize_values(ha_forward(y_q, w), c.v_min, c.v_max);
    const HsOutput hs = hs_forward(z_q, w);
    LossParts p;
    if (c.hybrid) {
      auto [y1, y2] = hybrid_split(y_q, c);
      p.rate_y = rate_estimate(y1, compute_entropy_params(hs.context, y1, w)).bits;
      p.rate_y += rate_estimate_scale(y2, hs.sigma2).bits;
    } else {
      p.rate_y = rate_estimate(y_q, compute_entropy_params(hs.context, y_q, w)).bits;
    }
    p.rate_z = rate_estimate_zero_mean(z_q, w.sigma_z()).bits;
    const Distortion d = distortion(x, gs_forward(y_q, w), metric, false);
    p.distortion = d.d;
    p.mse = d.mse;
    p.rate_bits = p.rate_y + p.rate_z;
    p.loss = loss_total(lambda, y_q.width(), y_q.height(), p.rate_bits, p.distortion);
    p.bpp = p.rate_bits / static_cast<double>(x.height() * x.width());
    total.loss += p.loss * weight;
    total.rate_bits += p.rate_bits * weight;
    total.rate_y += p.rate_y * weight;
    total.rate_z += p.rate_z * weight;
    total.distortion += p.distortion * weight;
    total.mse += p.mse * weight;
    total.bpp += p.bpp * weight;
  }
  return total;
}

double smoothed_head(const std::vector<LogRecord>& log, std::size_t window) {
  const std::size_t n = std::min(window, log.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += log[i].loss;
  return s / static_cast<double>(n);
}

double smoothed_tail(const std::vector<LogRecord>& log, std::size_t window) {
  const std::size_t n = std::min(window, log.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].loss;
  return s / static_cast<double>(n);
}

std::string log_record_json(const LogRecord& r) {
  nlohmann::json j;
  j["iter"] = r.iter;
  j["L"] = r.loss;
  j["R_bits"] = r.rate_bits;
  j["D"] = r.distortion;
  j["bpp_estimate"] = r.bpp;
  j["lr"] = r.lr;
  return j.dump();
}

TrainResult train(ModelWeights& w, const std::vector<Image>& corpus, const TrainConfig& cfg, const LogSink& sink) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  w.mutable_config().lambda = cfg.lambda;
  w.mutable_config().metric = to_string(cfg.metric);
  AdamState adam;
  adam.attach(w.params());
  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  const std::size_t total_iters = cfg.pretrain_iterations + cfg.iterations;
  double initial = 0.0;
  std::size_t above = 0;
  std::vector<Tensor> batch(cfg.batch);
  for (std::size_t it = 0; it < total_iters; ++it) {
    for (Tensor& t : batch) {
      std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
      t = random_crop(corpus[pick(rng)], cfg.crop, rng);
    }
    w.params().zero_grad();
    NoiseAudit audit;
    const LossParts p = batch_loss(w, batch, cfg, rng, true, cfg.audit_noise ? &audit : nullptr);
    if (cfg.audit_noise && !audit.consistent(cfg.conditioning)) {
      throw std::logic_error("noise routing violated at iteration " + std::to_string(it));
    }
    adam.learning_rate = cfg.lr_at(it);
    adam_step(w.params(), adam);
    LogRecord rec{it, p.loss, p.rate_bits, p.distortion, p.bpp, adam.learning_rate};
    result.log.push_back(rec);
    if (sink) sink(rec);
    if (it == 0) initial = p.loss;
    above = p.loss > cfg.divergence_factor * initial ? above + 1 : 0;
    if (above >= cfg.divergence_window) {
      throw TrainingDiverged("training diverged: loss above " + std::to_string(cfg.divergence_factor) +
                             "x its initial value for " + std::to_string(above) + " iterations (iteration " +
                             std::to_string(it) + ")");
    }
  }
  result.smoothed_initial = smoothed_head(result.log);
  result.smoothed_final = smoothed_tail(result.log);
  return result;
}

AblationResult ablate_conditioning(const ArchConfig& arch, const std::vector<Image>& corpus,
                                   const std::vector<Image>& heldout, TrainConfig cfg) {
  ModelWeights init(arch);
  init.initialize(cfg.seed);
  std::vector<Tensor> eval_set;
  for (const Image& img : heldout) eval_set.push_back(image_to_tensor(img, kImageMultiple));
  AblationResult r;
  ModelWeights wd = init;
  cfg.conditioning = Conditioning::discrete;
  r.discrete = train(wd, corpus, cfg);
  r.discrete_eval_loss = eval_loss(wd, eval_set, cfg.lambda, cfg.metric).loss;
  ModelWeights wn = init;
  cfg.conditioning = Conditioning::noisy;
  r.noisy = train(wn, corpus, cfg);
  r.noisy_eval_loss = eval_loss(wn, eval_set, cfg.lambda, cfg.metric).loss;
  return r;
}

}  // namespace cae
