#include "cae/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "cae/bytes.hpp"

namespace cae {

namespace {
constexpr char kMagic[4] = {'C', 'A', 'E', 'W'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::size_t ParamStore::add(std::string name, std::vector<std::size_t> shape, double fill) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  params_.push_back(Param{std::move(name), std::move(shape), std::vector<double>(n, fill), std::vector<double>(n, 0.0)});
  return params_.size() - 1;
}

const Param* ParamStore::find(const std::string& name) const {
  for (const Param& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParamStore::zero_grad() {
  for (Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const Param& p : params_) {
    if (!std::all_of(p.value.begin(), p.value.end(), [](double v) { return std::isfinite(v); })) return false;
  }
  return true;
}

std::vector<unsigned char> serialize_weights(const WeightFile& wf) {
  ByteWriter out;
  out.raw(kMagic, 4);
  out.u32(kVersion);
  out.u32(static_cast<std::uint32_t>(wf.config_text.size()));
  out.raw(wf.config_text.data(), wf.config_text.size());
  out.u32(static_cast<std::uint32_t>(wf.entries.size()));
  for (const Param& p : wf.entries) {
    out.u32(static_cast<std::uint32_t>(p.name.size()));
    out.raw(p.name.data(), p.name.size());
    out.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t d : p.shape) out.u64(d);
    for (double v : p.value) out.f64(v);
  }
  return out.take();
}

WeightFile deserialize_weights(std::span<const unsigned char> bytes) {
  ByteReader in(bytes);
  char magic[4];
  in.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("weights: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kVersion) throw std::runtime_error("weights: unsupported version " + std::to_string(version));
  WeightFile wf;
  wf.config_text.resize(in.u32());
  in.raw(wf.config_text.data(), wf.config_text.size());
  const std::uint32_t count = in.u32();
  wf.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Param p;
    p.name.resize(in.u32());
    in.raw(p.name.data(), p.name.size());
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw std::runtime_error("weights: entry '" + p.name + "' has rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      p.shape.push_back(static_cast<std::size_t>(in.u64()));
      n *= p.shape.back();
    }
    if (n * 8 > in.remaining()) throw std::runtime_error("weights: entry '" + p.name + "' truncated");
    p.value.resize(n);
    for (double& v : p.value) v = in.f64();
    wf.entries.push_back(std::move(p));
  }
  if (in.remaining() != 0) throw std::runtime_error("weights: trailing bytes");
  return wf;
}

}  // namespace cae
