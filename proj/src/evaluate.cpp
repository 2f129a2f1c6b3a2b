#include "cae/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>

namespace cae {

std::vector<NamedImage> load_named_ppm_dir(const std::filesystem::path& dir, std::size_t* skipped) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<NamedImage> out;
  std::size_t bad = 0;
  for (const auto& f : files) {
    try {
      out.push_back({f.filename().string(), read_ppm(f)});
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
      ++bad;
    }
  }
  if (skipped) *skipped = bad;
  return out;
}

CorpusEval evaluate_corpus(const ModelWeights& w, const std::vector<NamedImage>& images, const CodecOptions& opt,
                           std::size_t jobs) {
  CorpusEval r;
  r.lambda = w.config().lambda;
  r.rows.resize(images.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < images.size();) {
      try {
        const Image& img = images[i].image;
        const EncodeResult enc = encode_image(img, w, opt);
        const DecodeResult dec = decode_image(enc.bytes, w);
        ImageEval& e = r.rows[i];
        e.name = images[i].name;
        e.width = img.width;
        e.height = img.height;
        e.bpp = stream_bpp(enc.bytes);
        e.est_bits = enc.est_bits;
        e.real_bits = enc.real_bits;
        e.psnr = psnr(img, dec.image);
        const MsSsimResult m = ms_ssim(img, dec.image);
        e.msssim = m.value;
        e.msssim_db = ms_ssim_db(m.value);
        e.msssim_reduced = m.reduced;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, images.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  r.mean.name = "mean";
  if (!r.rows.empty()) {
    const double n = static_cast<double>(r.rows.size());
    for (const ImageEval& e : r.rows) {
      r.mean.bpp += e.bpp / n;
      r.mean.est_bits += e.est_bits / n;
      r.mean.psnr += e.psnr / n;
      r.mean.msssim += e.msssim / n;
      r.mean.msssim_db += e.msssim_db / n;
      r.mean.msssim_reduced = r.mean.msssim_reduced || e.msssim_reduced;
      r.mean.real_bits += e.real_bits;
    }
    r.mean.real_bits = static_cast<std::size_t>(std::llround(static_cast<double>(r.mean.real_bits) / n));
    if (r.rows.size() == 1) r.mean = r.rows.front(), r.mean.name = "mean";
  }
  return r;
}

std::string format_row(const ImageEval& e) {
  return "bpp, " + format_metric(e.bpp) + "; PSNR, " + format_metric(e.psnr);
}

std::string format_report(const std::vector<CorpusEval>& evals) {
  std::string out = "weights\tlambda\timage\twidth\theight\tbpp\tPSNR\tMS-SSIM\tMS-SSIM_dB\treduced_scales\tcaption\n";
  for (const CorpusEval& ce : evals) {
    auto line = [&](const ImageEval& e) {
      out += ce.weights + "\t" + format_metric(ce.lambda) + "\t" + e.name + "\t" + std::to_string(e.width) + "\t" +
             std::to_string(e.height) + "\t" + format_metric(e.bpp) + "\t" + format_metric(e.psnr) + "\t" +
             format_metric(e.msssim, 6) + "\t" + format_metric(e.msssim_db) + "\t" + (e.msssim_reduced ? "1" : "0") +
             "\t" + format_row(e) + "\n";
    };
    for (const ImageEval& e : ce.rows) line(e);
    line(ce.mean);
    if (ce.skipped) out += "# " + ce.weights + ": " + std::to_string(ce.skipped) + " unreadable images skipped\n";
  }
  return out;
}

std::string format_rd_file(const std::vector<CorpusEval>& evals) {
  std::vector<const CorpusEval*> sorted;
  for (const CorpusEval& e : evals) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(), [](const CorpusEval* a, const CorpusEval* b) { return a->mean.bpp < b->mean.bpp; });
  std::string out = "# bpp\tPSNR(dB)\tMS-SSIM(dB)\tlambda\n";
  for (const CorpusEval* e : sorted) {
    out += format_metric(e->mean.bpp, 6) + "\t" + format_metric(e->mean.psnr) + "\t" + format_metric(e->mean.msssim_db) +
           "\t" + format_metric(e->lambda) + "\n";
  }
  return out;
}

}  // namespace cae
