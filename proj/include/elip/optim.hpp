#pragma once

#include <span>
#include <string>
#include <vector>

#include "elip/params.hpp"

namespace elip {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  long step = 0;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

// One bias-corrected Adam update for a single tensor at step `state.step`
// (already incremented). With `decay` set, param -= lr * wd * param is
// applied first (decoupled weight decay).
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                 const AdamState& state, bool decay);

// Adam over a named subset of a ParamStore. Only ParamKind::Weight entries
// are decayed. Missing gradients count as zero.
class Adam {
 public:
  Adam(const ParamStore& params, std::vector<std::string> names, AdamState state);

  void step();
  void zero_grad();
  void set_learning_rate(double lr) { state_.learning_rate = lr; }
  const AdamState& state() const { return state_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  struct Slot {
    Tensor param;
    bool decay;
    AdamMoments moments;
  };
  std::vector<std::string> names_;
  std::vector<Slot> slots_;
  AdamState state_;
};

}  // namespace elip
