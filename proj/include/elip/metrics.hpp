#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "elip/dataset.hpp"

namespace elip {

struct Confusion {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;

  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return tn + fp; }
};

Confusion confusion(std::span<const int> truth, std::span<const int> predicted);

// (TPR + TNR) / 2; empty when either class is absent.
std::optional<double> balanced_accuracy(const Confusion& c);

struct SubjectMetrics {
  std::uint32_t subject = 0;
  Confusion counts;
  std::optional<double> ba;
};

struct MetricsReport {
  std::vector<SubjectMetrics> subjects;  // sorted by subject id
  double mean = 0.0;
  double stddev = 0.0;   // population standard deviation
  std::size_t defined = 0;

  // `subject_id TP FN TN FP BA` per line ("undefined" for a missing class),
  // then `aggregate mean std n`.
  std::string to_text() const;
  static MetricsReport parse(const std::string& text);
};

// Sorts by subject and aggregates over subjects with a defined BA.
MetricsReport make_report(std::vector<SubjectMetrics> subjects);

// Per-subject confusion of `predicted` (one entry per epoch of `ds`).
MetricsReport subject_report(const EpochDataset& ds, std::span<const int> predicted);

}  // namespace elip
