#include "cae/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

namespace cae {

Image synthetic_image(std::size_t width, std::size_t height, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  std::vector<double> px(width * height * 3);

  // Linear color gradient.
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 40.0 + 170.0 * u(rng);
    gx[c] = (u(rng) - 0.5) * 160.0;
    gy[c] = (u(rng) - 0.5) * 160.0;
  }
  // Stripes at a random orientation and period.
  const double angle = u(rng) * std::numbers::pi;
  const double period = 6.0 + 26.0 * u(rng);
  const double stripe_amp = 10.0 + 40.0 * u(rng);
  double stripe_tint[3];
  for (double& t : stripe_tint) t = 0.4 + 0.6 * u(rng);
  // Band-limited noise: a handful of low-frequency sinusoids per channel.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves[3];
  for (auto& ws : waves) {
    for (int i = 0; i < 6; ++i) {
      ws.push_back({(u(rng) - 0.5) * 0.25, (u(rng) - 0.5) * 0.25, u(rng) * 2.0 * std::numbers::pi, 4.0 + 10.0 * u(rng)});
    }
  }
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double s = std::sin(2.0 * std::numbers::pi * (fx * ca + fy * sa) / period);
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + gx[c] * (fx / W - 0.5) + gy[c] * (fy / H - 0.5) + stripe_amp * stripe_tint[c] * s;
        for (const Wave& w : waves[c]) v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * fx + w.fy * fy) + w.phase);
        px[(y * width + x) * 3 + c] = v;
      }
    }
  }
  // Flat shapes: rectangles and discs.
  const int shapes = 2 + static_cast<int>(u(rng) * 4.0);
  for (int i = 0; i < shapes; ++i) {
    const bool disc = u(rng) < 0.5;
    const double cx = u(rng) * W, cy = u(rng) * H;
    const double rx = (0.08 + 0.2 * u(rng)) * W, ry = (0.08 + 0.2 * u(rng)) * H;
    double col[3];
    for (double& c : col) c = 255.0 * u(rng);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = (static_cast<double>(x) - cx) / rx, dy = (static_cast<double>(y) - cy) / ry;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::fabs(dx) <= 1.0 && std::fabs(dy) <= 1.0;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) px[(y * width + x) * 3 + c] = col[c];
      }
    }
  }
  Image img(width, height);
  for (std::size_t i = 0; i < px.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(px[i], 0.0, 255.0)));
  return img;
}

std::vector<Image> synthetic_corpus(std::size_t count, std::size_t width, std::size_t height, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_image(width, height, seed * 1000003ull + i));
  return out;
}

std::vector<Image> load_ppm_dir(const std::filesystem::path& dir, std::size_t* skipped) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  std::size_t bad = 0;
  for (const auto& f : files) {
    try {
      out.push_back(read_ppm(f));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
      ++bad;
    }
  }
  if (skipped) *skipped = bad;
  return out;
}

Tensor random_crop(const Image& img, std::size_t size, std::mt19937_64& rng) {
  const Tensor full = image_to_tensor(img, 1);
  const std::size_t H = std::max(img.height, size), W = std::max(img.width, size);
  const std::size_t oy = H > size ? static_cast<std::size_t>(rng() % (H - size + 1)) : 0;
  const std::size_t ox = W > size ? static_cast<std::size_t>(rng() % (W - size + 1)) : 0;
  const bool flip = (rng() & 1u) != 0;
  Tensor out(size, size, 3);
  for (std::size_t y = 0; y < size; ++y) {
    const std::size_t sy = std::min(oy + y, img.height - 1);
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t xx = flip ? size - 1 - x : x;
      const std::size_t sx = std::min(ox + xx, img.width - 1);
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = full.at(sy, sx, c);
    }
  }
  return out;
}

}  // namespace cae
