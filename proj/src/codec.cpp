#include "cae/codec.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "cae/arith.hpp"
#include "cae/bytes.hpp"
#include "cae/cdf.hpp"

namespace cae {

namespace {

using Clock = std::chrono::steady_clock;

class StageClock {
 public:
  explicit StageClock(double* slot) : slot_(slot), start_(Clock::now()) {}
  ~StageClock() {
    if (slot_) *slot_ += std::chrono::duration<double>(Clock::now() - start_).count();
  }

 private:
  double* slot_;
  Clock::time_point start_;
};

double* slot(StageTimes* t, double StageTimes::*member) { return t ? &(t->*member) : nullptr; }

struct CodingSetup {
  ConvBackend backend = ConvBackend::fast;
  MathMode math = MathMode::native;
};

CodingSetup setup_for(bool deterministic) {
  return deterministic ? CodingSetup{ConvBackend::reference, MathMode::deterministic}
                       : CodingSetup{ConvBackend::fast, MathMode::native};
}

LatentGrid slice_grid(const LatentGrid& g, std::size_t first, std::size_t count) {
  LatentGrid out(Shape3{g.shape.h, g.shape.w, count}, g.v_min, g.v_max);
  for (std::size_t y = 0; y < g.shape.h; ++y) {
    for (std::size_t x = 0; x < g.shape.w; ++x) {
      for (std::size_t c = 0; c < count; ++c) out.at(y, x, c) = g.at(y, x, first + c);
    }
  }
  return out;
}

void place_grid(LatentGrid& dst, const LatentGrid& src, std::size_t first) {
  for (std::size_t y = 0; y < src.shape.h; ++y) {
    for (std::size_t x = 0; x < src.shape.w; ++x) {
      for (std::size_t c = 0; c < src.shape.c; ++c) dst.at(y, x, first + c) = src.at(y, x, c);
    }
  }
}

std::vector<QuantizedCdf> z_tables(const ModelWeights& w, MathMode math) {
  std::vector<QuantizedCdf> t;
  for (double s : w.sigma_z()) t.push_back(build_cdf(0.0, s, w.config().v_min, w.config().v_max, math));
  return t;
}

// Visits the context-modeled latents in raster order (position, then
// channel). `grid` must hold every symbol before the current position; the
// callback codes (or decodes into `grid`) one symbol with its table.
using SymbolFn = std::function<void(const QuantizedCdf&, std::size_t l, std::size_t k, std::size_t ch, double mu,
                                    double sigma)>;

void walk_modeled(LatentGrid& grid, const Tensor& context, const ModelWeights& w, const CodingSetup& cs,
                  StageTimes* times, const SymbolFn& fn) {
  const ArchConfig& c = w.config();
  for (std::size_t l = 0; l < grid.shape.h; ++l) {
    for (std::size_t k = 0; k < grid.shape.w; ++k) {
      PositionParams p;
      {
        StageClock sc(slot(times, &StageTimes::context));
        p = estimate_params_f(extract_ctx_prime(context, k, l), extract_ctx_known(grid, k, l), w, nullptr, cs.backend,
                              cs.math);
      }
      for (std::size_t ch = 0; ch < grid.shape.c; ++ch) {
        QuantizedCdf cdf;
        {
          StageClock sc(slot(times, &StageTimes::cdf));
          cdf = build_cdf(p.mu[ch], p.sigma[ch], c.v_min, c.v_max, cs.math);
        }
        fn(cdf, l, k, ch, p.mu[ch], p.sigma[ch]);
      }
    }
  }
}

void check_weights(const StreamHeader& h, const ArchConfig& c) {
  auto fail = [](const std::string& what) { throw std::runtime_error("stream/weights mismatch: " + what); };
  if (h.profile_id != c.profile_id()) {
    fail("stream profile id " + std::to_string(h.profile_id) + ", weights profile '" + c.profile + "' (id " +
         std::to_string(c.profile_id()) + ")");
  }
  if (h.hybrid() != c.hybrid) fail("hybrid flag");
  if (h.n != c.n || h.m != c.m || h.m1 != (c.hybrid ? c.m1 : 0)) fail("channel counts");
  if (h.lambda_id != lambda_id(c.lambda)) {
    fail("stream lambda id " + std::to_string(h.lambda_id) + ", weights lambda id " + std::to_string(lambda_id(c.lambda)));
  }
  if (!c.hybrid && h.y2_len != 0) fail("y2 payload present for a non-hybrid model");
}

std::uint16_t checked_u16(std::size_t v, const char* what) {
  if (v > 0xffff) throw std::invalid_argument(std::string("stream header: ") + what + " exceeds 65535");
  return static_cast<std::uint16_t>(v);
}

}  // namespace

StageTimes& StageTimes::operator+=(const StageTimes& o) {
  transforms += o.transforms;
  context += o.context;
  cdf += o.cdf;
  coder += o.coder;
  return *this;
}

std::uint16_t lambda_id(double lambda) {
  const double v = std::round(lambda * 10000.0);
  if (!(v >= 0.0 && v <= 65535.0)) throw std::invalid_argument("lambda out of range for the stream header");
  return static_cast<std::uint16_t>(v);
}

std::vector<unsigned char> write_header(const StreamHeader& h) {
  ByteWriter bw;
  bw.raw(kStreamMagic, 4);
  bw.u16(h.version);
  bw.u8(h.profile_id);
  bw.u8(h.flags);
  bw.u32(h.width);
  bw.u32(h.height);
  bw.u16(h.lambda_id);
  bw.u16(h.n);
  bw.u16(h.m);
  bw.u16(h.m1);
  bw.u32(h.z_len);
  bw.u32(h.y1_len);
  bw.u32(h.y2_len);
  return bw.take();
}

StreamHeader read_header(std::span<const unsigned char> bytes) {
  if (bytes.size() < kHeaderBytes) throw std::runtime_error("stream truncated: header needs 36 bytes");
  ByteReader br(bytes);
  char magic[4];
  br.raw(magic, 4);
  if (!std::equal(magic, magic + 4, kStreamMagic)) throw std::runtime_error("not a CAE1 stream (bad magic)");
  StreamHeader h;
  h.version = br.u16();
  if (h.version != kStreamVersion) throw std::runtime_error("unsupported stream version " + std::to_string(h.version));
  h.profile_id = br.u8();
  h.flags = br.u8();
  if (h.flags & ~(kFlagHybrid | kFlagChecksum | kFlagDeterministicMath)) throw std::runtime_error("unknown stream flags");
  h.width = br.u32();
  h.height = br.u32();
  h.lambda_id = br.u16();
  h.n = br.u16();
  h.m = br.u16();
  h.m1 = br.u16();
  h.z_len = br.u32();
  h.y1_len = br.u32();
  h.y2_len = br.u32();
  if (h.width == 0 || h.height == 0) throw std::runtime_error("stream header: zero image size");
  const std::size_t need = kHeaderBytes + h.payload_bytes() + (h.has_checksum() ? 8 : 0);
  if (bytes.size() < need) {
    throw std::runtime_error("stream truncated: " + std::to_string(bytes.size()) + " bytes, header declares " +
                             std::to_string(need));
  }
  if (bytes.size() > need) throw std::runtime_error("stream has " + std::to_string(bytes.size() - need) + " trailing bytes");
  return h;
}

double stream_bpp(std::span<const unsigned char> bytes) {
  const StreamHeader h = read_header(bytes);
  return static_cast<double>(bytes.size()) * 8.0 / (static_cast<double>(h.width) * static_cast<double>(h.height));
}

EncodeResult encode_image(const Image& img, const ModelWeights& w, const CodecOptions& opt, StageTimes* times) {
  return encode_tensor(image_to_tensor(img, kImageMultiple), img.width, img.height, w, opt, times);
}

EncodeResult encode_tensor(const Tensor& x, std::size_t width, std::size_t height, const ModelWeights& w,
                           const CodecOptions& opt, StageTimes* times) {
  const ArchConfig& c = w.config();
  const CodingSetup cs = setup_for(opt.deterministic_math);
  if (width == 0 || height == 0 || width > x.width() || height > x.height()) {
    throw std::invalid_argument("encode: original size does not fit the padded tensor");
  }
  EncodeResult r;
  Tensor y, y_hat_t, z_hat_t;
  HsOutput hs;
  {
    StageClock sc(slot(times, &StageTimes::transforms));
    y = ga_forward(x, w);
    auto qy = quantize(y, c.v_min, c.v_max);
    r.y_hat = std::move(qy.grid);
    y_hat_t = r.y_hat.to_tensor();
    const Tensor z = ha_forward(y_hat_t, w);
    auto qz = quantize(z, c.v_min, c.v_max);
    r.z_hat = std::move(qz.grid);
    z_hat_t = r.z_hat.to_tensor();
    r.clamp_count = qy.clamp_count + qz.clamp_count;
    r.latent_count = y.size() + z.size();
    hs = hs_forward(z_hat_t, w, nullptr, cs.backend, cs.math);
  }

  std::uint64_t checksum = kChecksumSeed;
  auto note = [&](const QuantizedCdf& cdf) {
    if (opt.checksum) checksum = cdf_checksum(checksum, cdf.cumulative);
  };

  // Hyper-latent: zero-mean, per-channel trainable scale.
  std::vector<unsigned char> z_bytes;
  {
    std::vector<QuantizedCdf> zt;
    {
      StageClock sc(slot(times, &StageTimes::cdf));
      zt = z_tables(w, cs.math);
    }
    const auto sz = w.sigma_z();
    StageClock sc(slot(times, &StageTimes::coder));
    ArithmeticEncoder enc;
    for (std::size_t i = 0; i < r.z_hat.values.size(); ++i) {
      const std::size_t ch = i % c.n;
      note(zt[ch]);
      enc.encode(zt[ch], r.z_hat.values[i]);
      r.est_bits_z += symbol_bits(pmf_zero_mean(r.z_hat.values[i], sz[ch], cs.math));
    }
    z_bytes = enc.finish();
  }
  r.est_bits = r.est_bits_z;

  LatentGrid modeled = c.hybrid ? slice_grid(r.y_hat, 0, c.m1) : r.y_hat;
  std::vector<unsigned char> y1_bytes, y2_bytes;
  {
    ArithmeticEncoder enc;
    walk_modeled(modeled, hs.context, w, cs, times,
                 [&](const QuantizedCdf& cdf, std::size_t l, std::size_t k, std::size_t ch, double mu, double sigma) {
                   const int v = modeled.at(l, k, ch);
                   note(cdf);
                   r.est_bits += symbol_bits(pmf_gaussian_uniform(v, mu, sigma, cs.math));
                   StageClock sc(slot(times, &StageTimes::coder));
                   enc.encode(cdf, v);
                 });
    StageClock sc(slot(times, &StageTimes::coder));
    y1_bytes = enc.finish();
  }
  if (c.hybrid) {
    const LatentGrid y2 = slice_grid(r.y_hat, c.m1, c.m2);
    ArithmeticEncoder enc;
    for (std::size_t i = 0; i < y2.values.size(); ++i) {
      const double s = hs.sigma2.data()[i];
      QuantizedCdf cdf;
      {
        StageClock sc(slot(times, &StageTimes::cdf));
        cdf = build_cdf(0.0, s, c.v_min, c.v_max, cs.math);
      }
      note(cdf);
      r.est_bits += symbol_bits(pmf_zero_mean(y2.values[i], s, cs.math));
      StageClock sc(slot(times, &StageTimes::coder));
      enc.encode(cdf, y2.values[i]);
    }
    y2_bytes = enc.finish();
  }

  {
    StageClock sc(slot(times, &StageTimes::transforms));
    r.x_hat = gs_forward(y_hat_t, w);
  }

  StreamHeader& h = r.header;
  h.profile_id = c.profile_id();
  h.flags = static_cast<std::uint8_t>((c.hybrid ? kFlagHybrid : 0) | (opt.checksum ? kFlagChecksum : 0) |
                                      (opt.deterministic_math ? kFlagDeterministicMath : 0));
  h.width = static_cast<std::uint32_t>(width);
  h.height = static_cast<std::uint32_t>(height);
  h.lambda_id = lambda_id(c.lambda);
  h.n = checked_u16(c.n, "N");
  h.m = checked_u16(c.m, "M");
  h.m1 = checked_u16(c.hybrid ? c.m1 : 0, "M1");
  h.z_len = static_cast<std::uint32_t>(z_bytes.size());
  h.y1_len = static_cast<std::uint32_t>(y1_bytes.size());
  h.y2_len = static_cast<std::uint32_t>(y2_bytes.size());

  r.bytes = write_header(h);
  r.bytes.insert(r.bytes.end(), z_bytes.begin(), z_bytes.end());
  r.bytes.insert(r.bytes.end(), y1_bytes.begin(), y1_bytes.end());
  r.bytes.insert(r.bytes.end(), y2_bytes.begin(), y2_bytes.end());
  if (opt.checksum) {
    ByteWriter bw;
    bw.u64(checksum);
    const auto tail = bw.take();
    r.bytes.insert(r.bytes.end(), tail.begin(), tail.end());
  }
  r.real_bits = h.payload_bytes() * 8;
  r.bpp = static_cast<double>(r.bytes.size()) * 8.0 / (static_cast<double>(width) * static_cast<double>(height));
  return r;
}

DecodeResult decode_image(std::span<const unsigned char> bytes, const ModelWeights& w, StageTimes* times) {
  DecodeResult r;
  r.header = read_header(bytes);
  const StreamHeader& h = r.header;
  const ArchConfig& c = w.config();
  check_weights(h, c);
  const CodingSetup cs = setup_for(h.deterministic_math());

  const std::size_t H = round_up(h.height, kImageMultiple);
  const std::size_t W = round_up(h.width, kImageMultiple);
  const Shape3 y_shape{H / kLatentDownscale, W / kLatentDownscale, c.m};
  const Shape3 z_shape{y_shape.h / kHyperDownscale, y_shape.w / kHyperDownscale, c.n};

  auto payload = bytes.subspan(kHeaderBytes);
  const auto z_span = payload.subspan(0, h.z_len);
  const auto y1_span = payload.subspan(h.z_len, h.y1_len);
  const auto y2_span = payload.subspan(std::size_t{h.z_len} + h.y1_len, h.y2_len);

  std::uint64_t checksum = kChecksumSeed;
  auto note = [&](const QuantizedCdf& cdf) {
    if (h.has_checksum()) checksum = cdf_checksum(checksum, cdf.cumulative);
  };
  auto stream_error = [](const char* part, const std::exception& e) {
    return std::runtime_error(std::string("corrupt ") + part + " payload: " + e.what());
  };

  r.z_hat = LatentGrid(z_shape, c.v_min, c.v_max);
  try {
    std::vector<QuantizedCdf> zt;
    {
      StageClock sc(slot(times, &StageTimes::cdf));
      zt = z_tables(w, cs.math);
    }
    StageClock sc(slot(times, &StageTimes::coder));
    ArithmeticDecoder dec(z_span);
    for (std::size_t i = 0; i < r.z_hat.values.size(); ++i) {
      note(zt[i % c.n]);
      r.z_hat.values[i] = dec.decode(zt[i % c.n]);
    }
  } catch (const std::runtime_error& e) {
    throw stream_error("z", e);
  }

  HsOutput hs;
  {
    StageClock sc(slot(times, &StageTimes::transforms));
    hs = hs_forward(r.z_hat.to_tensor(), w, nullptr, cs.backend, cs.math);
  }

  LatentGrid modeled(Shape3{y_shape.h, y_shape.w, c.modeled_channels()}, c.v_min, c.v_max);
  try {
    ArithmeticDecoder dec(y1_span);
    walk_modeled(modeled, hs.context, w, cs, times,
                 [&](const QuantizedCdf& cdf, std::size_t l, std::size_t k, std::size_t ch, double, double) {
                   note(cdf);
                   StageClock sc(slot(times, &StageTimes::coder));
                   modeled.at(l, k, ch) = dec.decode(cdf);
                 });
  } catch (const std::runtime_error& e) {
    throw stream_error("y1", e);
  }

  r.y_hat = LatentGrid(y_shape, c.v_min, c.v_max);
  place_grid(r.y_hat, modeled, 0);
  if (c.hybrid) {
    LatentGrid y2(Shape3{y_shape.h, y_shape.w, c.m2}, c.v_min, c.v_max);
    try {
      ArithmeticDecoder dec(y2_span);
      for (std::size_t i = 0; i < y2.values.size(); ++i) {
        QuantizedCdf cdf;
        {
          StageClock sc(slot(times, &StageTimes::cdf));
          cdf = build_cdf(0.0, hs.sigma2.data()[i], c.v_min, c.v_max, cs.math);
        }
        note(cdf);
        StageClock sc(slot(times, &StageTimes::coder));
        y2.values[i] = dec.decode(cdf);
      }
    } catch (const std::runtime_error& e) {
      throw stream_error("y2", e);
    }
    place_grid(r.y_hat, y2, c.m1);
  }

  if (h.has_checksum()) {
    ByteReader br(bytes.subspan(kHeaderBytes + h.payload_bytes()));
    const std::uint64_t expected = br.u64();
    if (expected != checksum) throw std::runtime_error("CDF checksum mismatch: decoder tables differ from encoder tables");
  }

  {
    StageClock sc(slot(times, &StageTimes::transforms));
    r.x_hat = gs_forward(r.y_hat.to_tensor(), w);
  }
  r.image = tensor_to_image(r.x_hat, h.width, h.height);
  return r;
}

}  // namespace cae
