#include "cae/bench.hpp"

#include <cstdio>
#include <stdexcept>

namespace cae {

double BenchReport::encode_seconds(bool include_coder) const {
  return include_coder ? encode.total() : encode.total() - encode.coder;
}

double BenchReport::decode_seconds(bool include_coder) const {
  return include_coder ? decode.total() : decode.total() - decode.coder;
}

BenchReport benchmark_codec(const ModelWeights& w, const std::vector<Image>& corpus, const CodecOptions& opt,
                            std::size_t repeats) {
  if (corpus.empty()) throw std::invalid_argument("benchmark: empty corpus");
  if (repeats == 0) throw std::invalid_argument("benchmark: repeats must be positive");
  BenchReport r;
  r.profile = w.config().profile;
  r.images = corpus.size();
  r.repeats = repeats;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    StageTimes enc, dec;
    for (const Image& img : corpus) {
      const EncodeResult e = encode_image(img, w, opt, &enc);
      const DecodeResult d = decode_image(e.bytes, w, &dec);
      if (!(d.y_hat == e.y_hat)) throw std::runtime_error("benchmark: decoded latents differ from encoded latents");
    }
    r.encode += enc;
    r.decode += dec;
    r.context_per_repeat.push_back((enc.context + dec.context) / static_cast<double>(corpus.size()));
  }
  const double n = static_cast<double>(corpus.size() * repeats);
  for (StageTimes* t : {&r.encode, &r.decode}) {
    t->transforms /= n;
    t->context /= n;
    t->cdf /= n;
    t->coder /= n;
  }
  return r;
}

std::string format_bench(const BenchReport& r, bool exclude_coder) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "# profile=%s images=%zu repeats=%zu (seconds per image%s)\n", r.profile.c_str(),
                r.images, r.repeats, exclude_coder ? ", entropy coding excluded from total" : "");
  out += buf;
  out += "direction\ttransforms\tcontext\tcdf\tcoder\ttotal\n";
  for (const auto& [name, t] : {std::pair{"encode", r.encode}, std::pair{"decode", r.decode}}) {
    const double total = exclude_coder ? t.total() - t.coder : t.total();
    std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\n", name, t.transforms, t.context, t.cdf, t.coder,
                  total);
    out += buf;
  }
  return out;
}

}  // namespace cae
