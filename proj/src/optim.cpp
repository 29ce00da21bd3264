#include "elip/optim.hpp"

#include <cmath>

#include "elip/error.hpp"

namespace elip {

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                 const AdamState& state, bool decay) {
  if (!grad.empty() && grad.size() != param.size()) {
    throw ShapeError("adam: gradient has " + std::to_string(grad.size()) + " values, parameter has " +
                     std::to_string(param.size()));
  }
  if (state.step <= 0) throw Error("adam: step counter must be positive");
  if (moments.m.empty()) {
    moments.m.assign(param.size(), 0.0);
    moments.v.assign(param.size(), 0.0);
  }
  if (moments.m.size() != param.size()) throw ShapeError("adam: moment shape mismatch");

  const double lr = state.learning_rate;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (decay) param[i] -= lr * state.weight_decay * param[i];
    const double g = grad.empty() ? 0.0 : grad[i];
    moments.m[i] = state.beta1 * moments.m[i] + (1.0 - state.beta1) * g;
    moments.v[i] = state.beta2 * moments.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

Adam::Adam(const ParamStore& params, std::vector<std::string> names, AdamState state)
    : names_(std::move(names)), state_(state) {
  if (state_.learning_rate <= 0.0) throw ConfigError("adam: learning rate must be positive");
  if (state_.weight_decay < 0.0) throw ConfigError("adam: weight decay must be non-negative");
  slots_.reserve(names_.size());
  for (const auto& name : names_) {
    const ParamEntry& e = params.entry(name);
    slots_.push_back({e.value, e.kind == ParamKind::Weight, {}});
  }
}

void Adam::step() {
  ++state_.step;
  for (auto& slot : slots_) {
    adam_update(slot.param.mutable_data(), slot.param.grad(), slot.moments, state_, slot.decay);
  }
}

void Adam::zero_grad() {
  for (auto& slot : slots_) slot.param.zero_grad();
}

}  // namespace elip
