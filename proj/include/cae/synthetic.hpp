#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "cae/image.hpp"
#include "cae/tensor.hpp"

namespace cae {

/// Deterministic synthetic picture: smooth color gradient, stripes,
/// band-limited noise and a few flat shapes. Same (size, seed) -> same image.
Image synthetic_image(std::size_t width, std::size_t height, std::uint64_t seed);

std::vector<Image> synthetic_corpus(std::size_t count, std::size_t width, std::size_t height, std::uint64_t seed);

/// All *.ppm files of a directory (sorted by name). Unreadable files are
/// skipped and counted in `skipped`.
std::vector<Image> load_ppm_dir(const std::filesystem::path& dir, std::size_t* skipped = nullptr);

/// Random crop (with a random horizontal flip) as a normalized tensor.
/// Images smaller than the crop are edge-padded first.
Tensor random_crop(const Image& img, std::size_t size, std::mt19937_64& rng);

}  // namespace cae
