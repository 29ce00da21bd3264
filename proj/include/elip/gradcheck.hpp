#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "elip/tensor.hpp"

namespace elip::gradcheck {

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Coordinates probed per tensor; 0 means every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Denominator floor so vanishing gradients compare on absolute error.
  double norm_floor = 1e-6;
};

struct Result {
  std::string name;
  double rel_error = 0.0;
  std::size_t coords = 0;
  bool ok = false;
};

// Central-difference check. `loss` must rebuild the scalar from the current
// values of `inputs` on every call. Per tensor, the relative error is
// ||analytic - numeric|| / max(||analytic||, ||numeric||, norm_floor) over
// the probed coordinates.
std::vector<Result> check(const std::function<Tensor()>& loss,
                          const std::vector<std::pair<std::string, Tensor>>& inputs,
                          const Options& options = {});

struct SuiteReport {
  std::vector<Result> results;
  bool ok() const;
  double worst() const;
};

// Randomised checks of every primitive op, one pass per seed.
SuiteReport primitive_suite(int seeds, const Options& options = {});

// Full overall loss of the model (desk profile when `desk`, otherwise a
// miniature configuration) on a random 4-sample batch, per parameter tensor.
SuiteReport model_suite(int seeds, bool desk, const Options& options = {});

}  // namespace elip::gradcheck
