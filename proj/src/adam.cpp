#include "cae/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cae {

void AdamState::attach(const ParamStore& params) {
  first_moment.clear();
  second_moment.clear();
  for (const Param& p : params.all()) {
    first_moment.emplace_back(p.size(), 0.0);
    second_moment.emplace_back(p.size(), 0.0);
  }
  step = 0;
}

void adam_step(ParamStore& params, AdamState& state) {
  if (state.first_moment.size() != params.size()) throw std::invalid_argument("adam: state not attached to these parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[i];
    if (state.first_moment[i].size() != p.size() || p.grad.size() != p.size()) {
      throw std::invalid_argument("adam: moment shape mismatch for '" + p.name + "'");
    }
    for (double g : p.grad) {
      if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient in '" + p.name + "'; step aborted");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p.value[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace cae
