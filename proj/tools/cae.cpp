// Command-line front end: train, encode, decode, eval, bench, ablate, plus
// init / gen helpers for random weights and synthetic corpora.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cae/bench.hpp"
#include "cae/codec.hpp"
#include "cae/evaluate.hpp"
#include "cae/fileutil.hpp"
#include "cae/synthetic.hpp"
#include "cae/trainer.hpp"

namespace fs = std::filesystem;
using namespace cae;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void require_dir(const std::string& path, const char* what) {
  if (!fs::is_directory(path)) throw UsageError(std::string(what) + " is not a directory: " + path);
}

void require_output(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw UsageError("output directory does not exist: " + parent.string());
}

std::string quoted(std::string s) {
  for (char& c : s) {
    if (c == '"') c = '\'';
    if (c == '\n') c = ' ';
  }
  return "\"" + s + "\"";
}

std::vector<Image> training_corpus(const std::string& data, std::size_t count, std::size_t size, std::uint64_t seed) {
  if (data.empty()) return synthetic_corpus(count, size, size, seed);
  std::size_t skipped = 0;
  auto imgs = load_ppm_dir(data, &skipped);
  if (imgs.empty()) throw std::runtime_error("no readable .ppm images in " + data);
  return imgs;
}

struct Options {
  std::string profile = "tiny";
  double lambda = 0.02;
  std::string metric = "mse";
  std::string conditioning = "discrete";
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  bool deterministic_math = true;
  bool checksum = false;

  std::string input, output, weights, data, config, log, report, rd;
  std::vector<std::string> weight_patterns;
  std::size_t iterations = 2000, batch = 4, crop = 64, repeats = 3, count = 32, size = 96;
  std::uint64_t data_seed = 7;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool exclude_coder = false;
  bool full_schedule = false;
  bool allow_any_lambda = false;
};

// Applies --config first, then any flag given on the command line.
TrainConfig train_config(const Options& o, const CLI::App& sub) {
  TrainConfig cfg = o.full_schedule ? TrainConfig::full_scale() : TrainConfig::desk();
  if (!o.config.empty()) require_file(o.config, "config file");
  try {
    if (!o.config.empty()) {
      const auto bytes = read_file(o.config);
      cfg = TrainConfig::from_text(std::string(bytes.begin(), bytes.end()), cfg);
    }
    auto given = [&](const char* name) { return sub.count(name) > 0; };
    if (given("--lambda")) cfg.lambda = o.lambda;
    if (given("--metric")) cfg.metric = parse_metric(o.metric);
    if (given("--conditioning")) cfg.conditioning = parse_conditioning(o.conditioning);
    if (given("--seed")) cfg.seed = o.seed;
    if (given("--batch")) cfg.batch = o.batch;
    if (given("--crop")) cfg.crop = o.crop;
    if (given("--iterations")) {
      const TrainConfig d = TrainConfig::desk(o.iterations);
      cfg.iterations = d.iterations;
      cfg.decay_start = d.decay_start;
      cfg.decay_every = d.decay_every;
    }
    if (given("--allow-any-lambda")) cfg.allow_any_lambda = true;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

CodecOptions codec_options(const Options& o) { return CodecOptions{o.deterministic_math, o.checksum}; }

int cmd_train(const Options& o, const CLI::App& sub) {
  require_output(o.output);
  if (!o.log.empty()) require_output(o.log);
  if (!o.data.empty()) require_dir(o.data, "--data");
  if (!o.weights.empty()) require_file(o.weights, "--init weights");
  const TrainConfig cfg = train_config(o, sub);
  ModelWeights w = o.weights.empty() ? ModelWeights(ArchConfig::from_profile(o.profile)) : ModelWeights::load(o.weights);
  if (o.weights.empty()) w.initialize(cfg.seed);
  const auto corpus = training_corpus(o.data, o.count, o.size, o.data_seed);
  std::ostringstream log;
  const std::size_t every = std::max<std::size_t>(1, cfg.iterations / 20);
  const TrainResult r = train(w, corpus, cfg, [&](const LogRecord& rec) {
    log << log_record_json(rec) << "\n";
    if (rec.iter % every == 0) std::cerr << log_record_json(rec) << "\n";
  });
  w.save(o.output);
  if (!o.log.empty()) write_text_atomic(o.log, log.str());
  std::printf("smoothed_loss_initial=%.6f smoothed_loss_final=%.6f iterations=%zu\n", r.smoothed_initial,
              r.smoothed_final, r.log.size());
  return 0;
}

int cmd_encode(const Options& o) {
  require_file(o.input, "input image");
  require_file(o.weights, "weights");
  require_output(o.output);
  const ModelWeights w = ModelWeights::load(o.weights);
  const Image img = read_ppm(o.input);
  const EncodeResult r = encode_image(img, w, codec_options(o));
  write_file_atomic(o.output, r.bytes);
  std::printf("bpp=%.6f est_bits=%.3f real_bits=%zu clamp_count=%zu\n", r.bpp, r.est_bits, r.real_bits, r.clamp_count);
  if (r.clamp_warning()) {
    std::fprintf(stderr, "warning: kind=clamp clamp_count=%zu latents=%zu message=\"more than 1%% of latents clamped\"\n",
                 r.clamp_count, r.latent_count);
  }
  return 0;
}

int cmd_decode(const Options& o) {
  require_file(o.input, "input stream");
  require_file(o.weights, "weights");
  require_output(o.output);
  const ModelWeights w = ModelWeights::load(o.weights);
  const auto bytes = read_file(o.input);
  const DecodeResult r = decode_image(bytes, w);
  write_ppm(o.output, r.image);
  std::printf("width=%u height=%u bpp=%.6f\n", r.header.width, r.header.height, stream_bpp(bytes));
  return 0;
}

int cmd_eval(const Options& o) {
  require_dir(o.data, "--data");
  if (!o.report.empty()) require_output(o.report);
  if (!o.rd.empty()) require_output(o.rd);
  std::vector<fs::path> files;
  for (const auto& p : o.weight_patterns) {
    const auto m = expand_glob(p);
    if (m.empty()) throw UsageError("no weight files match " + p);
    files.insert(files.end(), m.begin(), m.end());
  }
  std::size_t skipped = 0;
  const auto images = load_named_ppm_dir(o.data, &skipped);
  if (images.empty()) throw std::runtime_error("no readable .ppm images in " + o.data);
  std::vector<CorpusEval> evals;
  for (const auto& f : files) {
    CorpusEval e = evaluate_corpus(ModelWeights::load(f), images, codec_options(o), o.jobs);
    e.weights = f.string();
    e.skipped = skipped;
    evals.push_back(std::move(e));
  }
  const std::string report = format_report(evals);
  std::fputs(report.c_str(), stdout);
  if (!o.report.empty()) write_text_atomic(o.report, report);
  if (!o.rd.empty()) write_text_atomic(o.rd, format_rd_file(evals));
  return 0;
}

int cmd_bench(const Options& o) {
  if (!o.output.empty()) require_output(o.output);
  ModelWeights w = [&] {
    if (!o.weights.empty()) {
      require_file(o.weights, "weights");
      return ModelWeights::load(o.weights);
    }
    ModelWeights fresh(ArchConfig::from_profile(o.profile));
    fresh.initialize(o.seed);
    return fresh;
  }();
  std::vector<Image> corpus;
  if (!o.data.empty()) {
    require_dir(o.data, "--data");
    corpus = load_ppm_dir(o.data);
  } else {
    corpus = synthetic_corpus(o.count, o.size, o.size, o.data_seed);
  }
  const BenchReport r = benchmark_codec(w, corpus, codec_options(o), o.repeats);
  const std::string text = format_bench(r, o.exclude_coder);
  std::fputs(text.c_str(), stdout);
  if (!o.output.empty()) write_text_atomic(o.output, text);
  return 0;
}

int cmd_ablate(const Options& o, const CLI::App& sub) {
  if (!o.output.empty()) require_output(o.output);
  if (!o.data.empty()) require_dir(o.data, "--data");
  TrainConfig cfg = train_config(o, sub);
  const ArchConfig arch = ArchConfig::from_profile(o.profile);
  const auto corpus = training_corpus(o.data, o.count, o.size, o.data_seed);
  const auto heldout = synthetic_corpus(8, 128, 128, o.data_seed + 1000);
  std::ostringstream out;
  out.precision(8);
  std::size_t wins = 0;
  for (std::uint64_t seed : o.seeds) {
    cfg.seed = seed;
    const AblationResult r = ablate_conditioning(arch, corpus, heldout, cfg);
    for (const auto* run : {&r.discrete, &r.noisy}) {
      const char* mode = run == &r.discrete ? "discrete" : "noisy";
      for (const LogRecord& rec : run->log) {
        out << "trajectory seed=" << seed << " mode=" << mode << " iter=" << rec.iter << " L=" << rec.loss
            << " R_bits=" << rec.rate_bits << " D=" << rec.distortion << "\n";
      }
    }
    wins += r.discrete_eval_loss <= r.noisy_eval_loss;
    out << "final seed=" << seed << " discrete_loss=" << r.discrete_eval_loss << " noisy_loss=" << r.noisy_eval_loss
        << " delta=" << r.noisy_eval_loss - r.discrete_eval_loss << " relative_delta=" << r.relative_delta() << "\n";
    std::cerr << "seed " << seed << ": discrete " << r.discrete_eval_loss << " noisy " << r.noisy_eval_loss << "\n";
  }
  out << "summary discrete_wins=" << wins << " seeds=" << o.seeds.size() << "\n";
  if (!o.output.empty()) write_text_atomic(o.output, out.str());
  else std::fputs(out.str().c_str(), stdout);
  return 0;
}

int cmd_init(const Options& o) {
  require_output(o.output);
  ArchConfig c = ArchConfig::from_profile(o.profile);
  c.lambda = o.lambda;
  ModelWeights w(c);
  w.initialize(o.seed);
  w.save(o.output);
  return 0;
}

int cmd_gen(const Options& o) {
  require_dir(o.output, "--out");
  for (std::size_t i = 0; i < o.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04zu.ppm", i);
    write_ppm(fs::path(o.output) / name, synthetic_image(o.size, o.size, o.data_seed * 1000003ull + i));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned image codec with a context-adaptive entropy model"};
  app.require_subcommand(1);
  Options o;

  auto model_flags = [&](CLI::App* s) {
    s->add_option("--profile", o.profile, "Model profile")
        ->check(CLI::IsMember({"tiny", "base", "hybrid-320", "hybrid-400"}));
    s->add_option("--seed", o.seed, "Random seed");
  };
  auto train_flags = [&](CLI::App* s) {
    model_flags(s);
    s->add_option("--lambda", o.lambda, "Rate-distortion trade-off");
    s->add_option("--metric", o.metric, "Distortion metric")->check(CLI::IsMember({"mse", "msssim"}));
    s->add_option("--conditioning", o.conditioning, "Inputs of g_s/h_a/h_s")->check(CLI::IsMember({"discrete", "noisy"}));
    s->add_option("--config", o.config, "key=value training configuration (flags win)");
    s->add_option("--iterations", o.iterations, "Training iterations");
    s->add_option("--batch", o.batch, "Images per batch");
    s->add_option("--crop", o.crop, "Training crop size (multiple of 64)");
    s->add_option("--data", o.data, "Directory of .ppm training images (default: synthetic)");
    s->add_option("--synthetic-count", o.count, "Synthetic corpus size");
    s->add_option("--synthetic-size", o.size, "Synthetic image side");
    s->add_option("--data-seed", o.data_seed, "Synthetic corpus seed");
    s->add_flag("--full-schedule", o.full_schedule, "1M iterations, lr 5e-5, halvings over the last 200k");
    s->add_flag("--allow-any-lambda", o.allow_any_lambda, "Accept lambda outside [0.01, 0.5]");
  };
  auto codec_flags = [&](CLI::App* s) {
    s->add_flag("--deterministic-math,!--no-deterministic-math", o.deterministic_math,
                "Portable math for h_s and f (default on)");
    s->add_option("--jobs", o.jobs, "Parallel images");
  };

  auto* train = app.add_subcommand("train", "Train a model");
  train_flags(train);
  train->add_option("--init", o.weights, "Start from these weights instead of a fresh profile");
  train->add_option("-o,--out", o.output, "Output weight file")->required();
  train->add_option("--log", o.log, "Line-delimited JSON training log");

  auto* encode = app.add_subcommand("encode", "Compress a PPM image");
  encode->add_option("input", o.input, "Input .ppm")->required();
  encode->add_option("-w,--weights", o.weights, "Weight file")->required();
  encode->add_option("-o,--out", o.output, "Output stream")->required();
  encode->add_flag("--checksum", o.checksum, "Embed CDF checksums");
  codec_flags(encode);

  auto* decode = app.add_subcommand("decode", "Decompress a stream to PPM");
  decode->add_option("input", o.input, "Input stream")->required();
  decode->add_option("-w,--weights", o.weights, "Weight file")->required();
  decode->add_option("-o,--out", o.output, "Output .ppm")->required();
  codec_flags(decode);

  auto* eval = app.add_subcommand("eval", "Rate-distortion evaluation of weight files on a corpus");
  eval->add_option("-w,--weights", o.weight_patterns, "Weight files or glob patterns")->required();
  eval->add_option("--data", o.data, "Directory of .ppm images")->required();
  eval->add_option("--report", o.report, "Tab-separated report");
  eval->add_option("--rd", o.rd, "gnuplot R-D data file");
  codec_flags(eval);

  auto* bench = app.add_subcommand("bench", "Per-stage encode/decode timing");
  model_flags(bench);
  bench->add_option("-w,--weights", o.weights, "Weight file (default: random weights for --profile)");
  bench->add_option("--data", o.data, "Directory of .ppm images (default: synthetic)");
  bench->add_option("--synthetic-count", o.count, "Synthetic corpus size");
  bench->add_option("--synthetic-size", o.size, "Synthetic image side");
  bench->add_option("--repeats", o.repeats, "Repetitions");
  bench->add_flag("--exclude-coder", o.exclude_coder, "Leave arithmetic coding out of the totals");
  bench->add_option("-o,--out", o.output, "Report file");
  codec_flags(bench);

  auto* ablate = app.add_subcommand("ablate", "Discrete vs noisy conditioning, paired runs");
  train_flags(ablate);
  ablate->add_option("--seeds", o.seeds, "Seeds (one paired run each)");
  ablate->add_option("-o,--out", o.output, "Report file");

  auto* init = app.add_subcommand("init", "Write randomly initialized weights");
  model_flags(init);
  init->add_option("--lambda", o.lambda, "Lambda recorded in the weights");
  init->add_option("-o,--out", o.output, "Output weight file")->required();

  auto* gen = app.add_subcommand("gen", "Write a synthetic PPM corpus");
  gen->add_option("--count", o.count, "Images");
  gen->add_option("--size", o.size, "Side length");
  gen->add_option("--data-seed", o.data_seed, "Seed");
  gen->add_option("-o,--out", o.output, "Existing output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: cmd=%s kind=usage message=%s\n", argc > 1 ? argv[1] : "none", quoted(e.what()).c_str());
    return 2;
  }
  CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub == train) return cmd_train(o, *train);
    if (sub == encode) return cmd_encode(o);
    if (sub == decode) return cmd_decode(o);
    if (sub == eval) return cmd_eval(o);
    if (sub == bench) return cmd_bench(o);
    if (sub == ablate) return cmd_ablate(o, *ablate);
    if (sub == init) return cmd_init(o);
    if (sub == gen) return cmd_gen(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: cmd=%s kind=usage message=%s\n", sub->get_name().c_str(), quoted(e.what()).c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: cmd=%s kind=runtime message=%s\n", sub->get_name().c_str(), quoted(e.what()).c_str());
    return 1;
  }
  return 1;
}
