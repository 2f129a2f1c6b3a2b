#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cae {

/// A named trainable array with its gradient accumulator.
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const { return value.size(); }
};

/// Flat registry of parameters. Layers refer to entries by index so copies
/// of a model stay self-consistent.
class ParamStore {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape, double fill = 0.0);

  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

  const Param* find(const std::string& name) const;
  void zero_grad();
  std::size_t total_values() const;
  bool all_finite() const;

 private:
  std::vector<Param> params_;
};

/// Weight container: magic "CAEW", u32 version, a length-prefixed
/// key=value configuration block, then named entries
/// (name, rank, u64 dims, little-endian float64 data).
struct WeightFile {
  std::string config_text;
  std::vector<Param> entries;  // grad left empty
};

std::vector<unsigned char> serialize_weights(const WeightFile& wf);
WeightFile deserialize_weights(std::span<const unsigned char> bytes);

}  // namespace cae
