#pragma once

#include <string>
#include <vector>

#include "cae/codec.hpp"

namespace cae {

struct BenchReport {
  std::string profile;
  std::size_t images = 0;
  std::size_t repeats = 0;
  StageTimes encode;  // mean per image
  StageTimes decode;  // mean per image
  /// Per-repeat mean context-loop time (encode + decode), for stability checks.
  std::vector<double> context_per_repeat;
  double encode_seconds(bool include_coder = true) const;
  double decode_seconds(bool include_coder = true) const;
};

/// Encodes and decodes every image `repeats` times and reports mean
/// per-image stage times.
BenchReport benchmark_codec(const ModelWeights& w, const std::vector<Image>& corpus, const CodecOptions& opt = {},
                            std::size_t repeats = 1);

/// Plain-text table: one row per direction and stage.
std::string format_bench(const BenchReport& r, bool exclude_coder = false);

}  // namespace cae
