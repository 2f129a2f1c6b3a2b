#pragma once

#include <cstdint>
#include <vector>

#include "cae/params.hpp"

namespace cae {

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  /// Sizes the moment buffers to match `params`.
  void attach(const ParamStore& params);
};

/// One bias-corrected Adam update from the gradients stored in `params`.
/// Throws before touching any parameter if a gradient is not finite.
void adam_step(ParamStore& params, AdamState& state);

}  // namespace cae
