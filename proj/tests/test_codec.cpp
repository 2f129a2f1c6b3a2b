#include <doctest.h>

#include <chrono>
#include <cmath>

#include "cae/arith.hpp"
#include "cae/bench.hpp"
#include "cae/cdf.hpp"
#include "cae/codec.hpp"
#include "cae/entropy.hpp"
#include "cae/image.hpp"
#include "cae/synthetic.hpp"
#include "support.hpp"

using namespace cae;
using namespace testing_support;

namespace {

Image noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(w, h);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

// KL(exact || quantized) in bits over all bins including the two tails.
double cdf_kl_bits(double mu, double sigma) {
  const QuantizedCdf cdf = build_cdf(mu, sigma, -128, 127, MathMode::native);
  const double s = std::max(sigma, kCoderSigmaFloor);
  std::vector<double> exact;
  exact.push_back(0.5 * std::erfc((mu + 128.5) / (s * std::sqrt(2.0))));
  for (int v = -128; v <= 127; ++v) exact.push_back(pmf_gaussian_uniform(v, mu, s));
  exact.push_back(0.5 * std::erfc((127.5 - mu) / (s * std::sqrt(2.0))));
  double kl = 0.0;
  for (std::size_t b = 0; b < exact.size(); ++b) {
    if (exact[b] <= 0.0) continue;
    const double q = static_cast<double>(cdf.frequency(b)) / kCdfTotal;
    kl += exact[b] * std::log2(exact[b] / q);
  }
  return kl;
}

std::vector<std::uint32_t> to_cumulative(const std::vector<std::uint32_t>& freq) {
  std::vector<std::uint32_t> c{0};
  for (auto f : freq) c.push_back(c.back() + f);
  return c;
}

}  // namespace

TEST_CASE("quantized cdf rules") {
  for (double mu : {-8.0, -0.3, 0.0, 2.5, 100.0}) {
    for (double sigma : {0.0, 0.01, 0.3, 5.0, 64.0, 1e4}) {
      const QuantizedCdf c = build_cdf(mu, sigma, -128, 127);
      CHECK(c.valid());
      CHECK(c.bins() == 258);
      CHECK(c.cumulative.front() == 0);
      CHECK(c.cumulative.back() == kCdfTotal);
      for (std::size_t b = 0; b < c.bins(); ++b) CHECK(c.frequency(b) >= 1);
    }
  }
  const QuantizedCdf c = build_cdf(0.0, 0.01, -128, 127);
  CHECK(c.frequency(c.bin_of(0)) >= kCdfTotal - (c.bins() + 1));
  CHECK(build_cdf(1.3, 2.0, -128, 127).cumulative == build_cdf(1.3, 2.0, -128, 127).cumulative);
}

TEST_CASE("quantize_masses keeps every bin and the total") {
  const std::vector<double> m{0.5, 0.25, 0.125, 0.125, 0.0};
  const auto f = quantize_masses(m, 1000);
  REQUIRE(f.size() == 5);
  for (auto v : f) CHECK(v >= 1);
  CHECK(to_cumulative(f).back() == 1000);
  // 1 + floor(p * 995) = 498, 249, 125, 125, 1 (sum 998); the two largest
  // fractional parts (0.75, then 0.5) take the remaining counts.
  CHECK(f == std::vector<std::uint32_t>{499, 250, 125, 125, 1});
}

TEST_CASE("cdf quantization error is bounded by the frequency floor") {
  // Every bin gives up at most (bins + 1) / T of mass, so the KL stays below
  // -log2(1 - (bins + 1) / T) plus the rounding share.
  const double bound = -std::log2(1.0 - 259.0 / kCdfTotal) + 1e-4;
  for (double sigma : {0.05, 0.2, 1.0, 8.0, 64.0})
    for (double mu : {-8.0, -1.5, 0.0, 3.3, 8.0}) CHECK(cdf_kl_bits(mu, sigma) < bound);
}

TEST_CASE("cdf KL below 1e-3 bits over the sigma/mu grid" * doctest::may_fail()) {
  double worst = 0.0;
  for (double sigma = 0.05; sigma <= 64.0; sigma *= 1.5)
    for (double mu = -8.0; mu <= 8.0; mu += 0.5) worst = std::max(worst, cdf_kl_bits(mu, sigma));
  MESSAGE("worst KL " << worst << " bits");
  CHECK(worst < 1e-3);
}

TEST_CASE("arithmetic coder") {
  SUBCASE("empty input yields only the terminator") {
    ArithmeticEncoder enc;
    const auto bytes = enc.finish();
    CHECK(bytes.size() <= 4);
    ArithmeticEncoder enc2;
    CHECK(enc2.finish() == bytes);
  }
  SUBCASE("uniform symbols cost eight bits each") {
    std::vector<std::uint32_t> uni(257);
    for (std::size_t i = 0; i <= 256; ++i) uni[i] = static_cast<std::uint32_t>(i * 256);
    std::mt19937_64 rng(3);
    std::vector<std::size_t> syms(1000);
    for (auto& s : syms) s = rng() % 256;
    ArithmeticEncoder enc;
    for (auto s : syms) enc.encode(uni, s);
    const auto bytes = enc.finish();
    CHECK(bytes.size() >= 996);
    CHECK(bytes.size() <= 1004);
    ArithmeticDecoder dec(bytes);
    for (auto s : syms) CHECK(dec.decode(uni) == s);
  }
  SUBCASE("random tables and symbols round-trip") {
    std::mt19937_64 rng(99);
    std::size_t failures = 0;
    for (int trial = 0; trial < 100000; ++trial) {
      const std::size_t n = 1 + rng() % 6;
      std::vector<std::vector<std::uint32_t>> tables;
      std::vector<std::size_t> syms;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t bins = 2 + rng() % 40;
        std::vector<double> masses(bins);
        for (double& m : masses) m = std::exp(-8.0 * std::uniform_real_distribution<double>(0, 1)(rng));
        double s = 0;
        for (double m : masses) s += m;
        for (double& m : masses) m /= s;
        tables.push_back(to_cumulative(quantize_masses(masses)));
        syms.push_back(rng() % bins);
      }
      const auto bytes = ac_encode(syms, tables);
      const auto back = ac_decode(bytes, n, [&](std::size_t i) { return std::span<const std::uint32_t>(tables[i]); });
      if (back != syms) ++failures;
    }
    CHECK(failures == 0);
  }
  SUBCASE("decoding far past the end throws") {
    std::vector<std::uint32_t> uni{0, 32768, 65536};
    const std::vector<unsigned char> bytes{0x5a};
    ArithmeticDecoder dec(bytes);
    CHECK_THROWS(([&] {
      for (int i = 0; i < 10000; ++i) dec.decode(uni);
    }()));
  }
}

TEST_CASE("header layout") {
  StreamHeader h;
  h.profile_id = 2;
  h.flags = kFlagHybrid | kFlagDeterministicMath;
  h.width = 77;
  h.height = 1000001;
  h.lambda_id = lambda_id(0.02);
  h.n = 320;
  h.m = 420;
  h.m1 = 192;
  h.z_len = 5;
  h.y1_len = 6;
  h.y2_len = 7;
  auto bytes = write_header(h);
  REQUIRE(bytes.size() == kHeaderBytes);
  bytes.resize(kHeaderBytes + 18, 0);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CAE1");
  CHECK(bytes[8] == 77);
  const StreamHeader r = read_header(bytes);
  CHECK(r.width == 77);
  CHECK(r.height == 1000001);
  CHECK(r.lambda_id == 200);
  CHECK(r.hybrid());
  CHECK(r.deterministic_math());
  CHECK(!r.has_checksum());
  CHECK(r.payload_bytes() == 18);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(read_header(bad));
  CHECK_THROWS(read_header(std::span<const unsigned char>(bytes).first(20)));
}

TEST_CASE("tiny-profile codec round trip") {
  ModelWeights w(ArchConfig::from_profile("tiny"));
  w.initialize(7, 4.0);
  const Image img = synthetic_image(64, 64, 7);
  const EncodeResult enc = encode_image(img, w);
  CHECK(enc.header.width == 64);
  CHECK(enc.bytes.size() == kHeaderBytes + enc.header.payload_bytes());
  CHECK(enc.real_bits == 8 * enc.header.payload_bytes());
  CHECK(enc.bpp == doctest::Approx(8.0 * enc.bytes.size() / (64.0 * 64.0)).epsilon(1e-15));
  CHECK(stream_bpp(enc.bytes) == enc.bpp);

  const auto t0 = std::chrono::steady_clock::now();
  const DecodeResult dec = decode_image(enc.bytes, w);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 1.0);
  CHECK(dec.y_hat == enc.y_hat);
  CHECK(dec.z_hat == enc.z_hat);
  CHECK(dec.x_hat.values() == enc.x_hat.values());
  CHECK(dec.image.width == 64);

  const double est = enc.est_bits;
  CHECK(static_cast<double>(enc.real_bits) >= est * 0.98 - 512);
  CHECK(static_cast<double>(enc.real_bits) <= est * 1.02 + 512);

  CHECK(encode_image(img, w).bytes == enc.bytes);

  SUBCASE("odd image sizes are padded invisibly") {
    const Image odd = noise_image(37, 50, 3);
    const EncodeResult e = encode_image(odd, w);
    const DecodeResult d = decode_image(e.bytes, w);
    CHECK(d.image.width == 37);
    CHECK(d.image.height == 50);
    CHECK(d.y_hat == e.y_hat);
  }
  SUBCASE("tampering with the y payload changes the decoded latents") {
    auto bytes = enc.bytes;
    bytes[kHeaderBytes + enc.header.z_len + enc.header.y1_len / 2] ^= 0x10;
    bool changed = false;
    try {
      changed = !(decode_image(bytes, w).y_hat == enc.y_hat);
    } catch (const std::exception&) {
      changed = true;
    }
    CHECK(changed);
  }
  SUBCASE("truncated and padded streams are rejected") {
    auto shorter = enc.bytes;
    shorter.pop_back();
    CHECK_THROWS(decode_image(shorter, w));
    auto longer = enc.bytes;
    longer.push_back(0);
    CHECK_THROWS(decode_image(longer, w));
  }
  SUBCASE("weights of another model are rejected") {
    ModelWeights other(ArchConfig::from_profile("base"));
    CHECK_THROWS_WITH_AS(decode_image(enc.bytes, other), doctest::Contains("mismatch"), std::runtime_error);
    ModelWeights relabeled = w;
    relabeled.mutable_config().lambda = 0.3;
    CHECK_THROWS(decode_image(enc.bytes, relabeled));
  }
  SUBCASE("embedded CDF checksum") {
    CodecOptions opt;
    opt.checksum = true;
    const EncodeResult e = encode_image(img, w, opt);
    CHECK(e.header.has_checksum());
    CHECK(e.bytes.size() == enc.bytes.size() + 8);
    CHECK(decode_image(e.bytes, w).y_hat == enc.y_hat);
    auto bad = e.bytes;
    bad.back() ^= 1;
    CHECK_THROWS(decode_image(bad, w));
  }
  SUBCASE("native math mode also round-trips within one build") {
    CodecOptions opt;
    opt.deterministic_math = false;
    const EncodeResult e = encode_image(img, w, opt);
    CHECK(!e.header.deterministic_math());
    CHECK(decode_image(e.bytes, w).y_hat == e.y_hat);
  }
}

TEST_CASE("hybrid codec round trip") {
  ArchConfig c = ArchConfig::from_profile("hybrid-320");
  ModelWeights w(c);
  w.initialize(9, 3.0);
  const Image img = noise_image(64, 64, 9);
  const EncodeResult enc = encode_image(img, w);
  CHECK(enc.header.hybrid());
  CHECK(enc.header.y2_len > 0);
  const DecodeResult dec = decode_image(enc.bytes, w);
  CHECK(dec.y_hat == enc.y_hat);
  CHECK(dec.z_hat == enc.z_hat);
  CHECK(dec.x_hat.values() == enc.x_hat.values());
}

TEST_CASE("benchmark report breaks time down by stage") {
  ModelWeights w(ArchConfig::from_profile("tiny"));
  w.initialize(2);
  const auto corpus = synthetic_corpus(2, 64, 64, 3);
  const BenchReport r = benchmark_codec(w, corpus, {}, 2);
  CHECK(r.images == 2);
  CHECK(r.context_per_repeat.size() == 2);
  CHECK(r.encode.context > 0.0);
  CHECK(r.decode.coder > 0.0);
  const std::string text = format_bench(r);
  for (const char* key : {"transforms", "context", "cdf", "coder", "encode", "decode"}) CHECK(text.find(key) != std::string::npos);
  CHECK(r.encode_seconds(false) < r.encode_seconds(true));
}
