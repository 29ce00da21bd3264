#pragma once

#include <cstdint>
#include <vector>

#include "elip/dataset.hpp"
#include "elip/metrics.hpp"

namespace elip {

// Hierarchical discriminant component analysis: a Fisher discriminant over
// channels for each time window (window means as features), then logistic
// regression across the window scores.
struct HdcaModel {
  std::size_t window = 25;
  std::size_t channels = 0;
  std::vector<std::vector<double>> spatial;  // one weight vector per window
  std::vector<double> temporal;              // one weight per window
  double bias = 0.0;

  std::size_t windows() const { return spatial.size(); }
  std::vector<double> window_scores(const EegEpoch& e) const;
  double probability(const EegEpoch& e) const;
  int predict(const EegEpoch& e) const { return probability(e) > 0.5 ? 1 : 0; }
};

// Ridge is added to every within-class scatter matrix; the logistic stage
// uses the same value as L2 strength.
HdcaModel fit_hdca(const EpochDataset& train, std::size_t window = 25, double ridge = 1e-3);

MetricsReport evaluate_hdca(const HdcaModel& model, const EpochDataset& test);

// Balances the training set (when imbalanced), fits, and scores every test subject.
MetricsReport baseline_hdca(const EpochDataset& train, const EpochDataset& test, std::uint64_t seed = 0);

}  // namespace elip
