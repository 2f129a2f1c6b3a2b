#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cae/codec.hpp"
#include "cae/metrics.hpp"

namespace cae {

struct NamedImage {
  std::string name;
  Image image;
};

/// *.ppm files of a directory, sorted; unreadable files are skipped with a
/// warning on stderr and counted.
std::vector<NamedImage> load_named_ppm_dir(const std::filesystem::path& dir, std::size_t* skipped = nullptr);

struct ImageEval {
  std::string name;
  std::size_t width = 0, height = 0;
  double bpp = 0.0;  // whole stream, original dimensions
  double est_bits = 0.0;
  std::size_t real_bits = 0;
  double psnr = 0.0;
  double msssim = 0.0;
  double msssim_db = 0.0;
  bool msssim_reduced = false;
};

struct CorpusEval {
  std::string weights;  // label, usually the weight file path
  double lambda = 0.0;
  std::vector<ImageEval> rows;
  ImageEval mean;
  std::size_t skipped = 0;
};

/// Encodes and decodes each image, `jobs` images at a time.
CorpusEval evaluate_corpus(const ModelWeights& w, const std::vector<NamedImage>& images, const CodecOptions& opt = {},
                           std::size_t jobs = 1);

/// "bpp, 0.2040; PSNR, 32.2063".
std::string format_row(const ImageEval& e);

/// Tab-separated per-image and mean rows for every weight set.
std::string format_report(const std::vector<CorpusEval>& evals);

/// gnuplot data: one line per weight set, sorted by bpp:
/// bpp  PSNR  MS-SSIM(dB)  lambda.
std::string format_rd_file(const std::vector<CorpusEval>& evals);

}  // namespace cae
