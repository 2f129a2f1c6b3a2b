#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(CAE_BINARY) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) {
    dir = fs::temp_directory_path() / ("cae_cli_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

}  // namespace

TEST_CASE("cli encode prints a parseable summary and decode restores the image size") {
  Scratch s("encode");
  REQUIRE(run("gen --count 1 --size 80 -o " + s.dir.string()).status == 0);
  REQUIRE(run("init --profile tiny --seed 3 -o " + s / "w.caew").status == 0);
  const Run enc = run("encode " + s / "synth_0000.ppm -w " + s / "w.caew -o " + s / "a.cae");
  REQUIRE(enc.status == 0);
  std::smatch m;
  const std::regex line(R"(bpp=([0-9.]+) est_bits=([0-9.]+) real_bits=([0-9]+) clamp_count=([0-9]+))");
  REQUIRE(std::regex_search(enc.out, m, line));
  const double bpp = std::stod(m[1]);
  const auto real_bits = std::stoull(m[3]);
  CHECK(bpp == doctest::Approx(8.0 * fs::file_size(s / "a.cae") / (80.0 * 80.0)).epsilon(1e-5));
  CHECK(real_bits % 8 == 0);

  REQUIRE(run("decode " + s / "a.cae -w " + s / "w.caew -o " + s / "a.ppm").status == 0);
  const std::string ppm = slurp(s / "a.ppm");
  CHECK(ppm.rfind("P6\n80 80\n255\n", 0) == 0);
  CHECK(ppm.size() == 13 + 80 * 80 * 3);
}

TEST_CASE("cli decode with wrong-profile weights fails cleanly") {
  Scratch s("wrong");
  REQUIRE(run("gen --count 1 --size 64 -o " + s.dir.string()).status == 0);
  REQUIRE(run("init --profile tiny -o " + s / "tiny.caew").status == 0);
  REQUIRE(run("init --profile base -o " + s / "base.caew").status == 0);
  REQUIRE(run("encode " + s / "synth_0000.ppm -w " + s / "tiny.caew -o " + s / "a.cae").status == 0);
  const Run dec = run("decode " + s / "a.cae -w " + s / "base.caew -o " + s / "out.ppm");
  CHECK(dec.status != 0);
  CHECK(dec.out.find("error: cmd=decode kind=runtime") != std::string::npos);
  CHECK_FALSE(fs::exists(s / "out.ppm"));
  for (const auto& e : fs::directory_iterator(s.dir)) CHECK(e.path().filename().string().find("out.ppm") == std::string::npos);

  const Run usage = run("decode " + s / "a.cae -o " + s / "out.ppm");
  CHECK(usage.status == 2);
  CHECK(run("encode " + s / "missing.ppm -w " + s / "tiny.caew -o " + s / "b.cae").status == 2);
  CHECK_FALSE(fs::exists(s / "b.cae"));
}

TEST_CASE("cli training with a fixed seed is reproducible") {
  Scratch s("train");
  const std::string common = "train --profile tiny --seed 4 --iterations 6 --batch 2 --synthetic-count 4 --synthetic-size 64";
  REQUIRE(run(common + " -o " + s / "a.caew --log " + s / "a.jsonl").status == 0);
  REQUIRE(run(common + " -o " + s / "b.caew").status == 0);
  CHECK(slurp(s / "a.caew") == slurp(s / "b.caew"));
  std::istringstream log(slurp(s / "a.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    CHECK(line.find("\"L\"") != std::string::npos);
    ++lines;
  }
  CHECK(lines == 6);
  const Run bad = run("train --profile tiny --lambda 0.9 --iterations 1 -o " + s / "c.caew");
  CHECK(bad.status == 2);
  CHECK_FALSE(fs::exists(s / "c.caew"));
}

TEST_CASE("cli eval on three weight files writes a three-point rd file") {
  Scratch s("eval");
  fs::create_directories(s.dir / "imgs");
  REQUIRE(run("gen --count 2 --size 64 -o " + s / "imgs").status == 0);
  for (const char* l : {"0.01", "0.05", "0.2"}) {
    REQUIRE(run(std::string("init --profile tiny --seed 1 --lambda ") + l + " -o " + s / (std::string("w_") + l + ".caew")).status == 0);
  }
  const Run r = run("eval -w '" + s / "w_*.caew" + "' --data " + s / "imgs --rd " + s / "rd.dat --report " + s / "report.tsv");
  REQUIRE(r.status == 0);
  std::istringstream rd(slurp(s / "rd.dat"));
  std::string line;
  std::size_t points = 0;
  while (std::getline(rd, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    double b, p, m, l;
    CHECK(static_cast<bool>(f >> b >> p >> m >> l));
    ++points;
  }
  CHECK(points == 3);
  CHECK(slurp(s / "report.tsv").find("synth_0001") != std::string::npos);
}

TEST_CASE("cli ablate reports both trajectories and the final delta") {
  Scratch s("ablate");
  const Run r = run("ablate --profile tiny --iterations 3 --batch 1 --synthetic-count 2 --synthetic-size 64 --seeds 5 -o " + s / "ab.txt");
  REQUIRE(r.status == 0);
  const std::string text = slurp(s / "ab.txt");
  CHECK(text.find("trajectory seed=5 mode=discrete iter=0 L=") != std::string::npos);
  CHECK(text.find("trajectory seed=5 mode=noisy iter=2 L=") != std::string::npos);
  CHECK(std::regex_search(text, std::regex(R"(final seed=5 discrete_loss=\S+ noisy_loss=\S+ delta=\S+ relative_delta=\S+)")));
  CHECK(text.find("summary discrete_wins=") != std::string::npos);
}

TEST_CASE("cli bench prints the stage table") {
  const Run r = run("bench --profile tiny --synthetic-count 1 --synthetic-size 64 --repeats 1");
  REQUIRE(r.status == 0);
  CHECK(r.out.find("direction\ttransforms\tcontext\tcdf\tcoder\ttotal") != std::string::npos);
}
