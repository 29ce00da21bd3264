#include "elip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "elip/error.hpp"

namespace elip {

Confusion confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("confusion: truth and prediction lengths differ");
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == 1, p = predicted[i] == 1;
    if (t && p) ++c.tp;
    else if (t) ++c.fn;
    else if (p) ++c.fp;
    else ++c.tn;
  }
  return c;
}

std::optional<double> balanced_accuracy(const Confusion& c) {
  if (c.positives() == 0 || c.negatives() == 0) return std::nullopt;
  // (tp/P + tn/N) / 2 as one integer ratio, so the only rounding is the final division.
  const auto p = static_cast<unsigned long long>(c.positives()), n = static_cast<unsigned long long>(c.negatives());
  const unsigned long long num = c.tp * n + c.tn * p;
  return static_cast<double>(num) / static_cast<double>(2 * p * n);
}

MetricsReport make_report(std::vector<SubjectMetrics> subjects) {
  std::sort(subjects.begin(), subjects.end(),
            [](const SubjectMetrics& a, const SubjectMetrics& b) { return a.subject < b.subject; });
  MetricsReport r;
  r.subjects = std::move(subjects);
  double sum = 0.0;
  for (const auto& s : r.subjects) {
    if (s.ba) {
      sum += *s.ba;
      ++r.defined;
    }
  }
  if (r.defined == 0) return r;
  r.mean = sum / static_cast<double>(r.defined);
  double ss = 0.0;
  for (const auto& s : r.subjects) {
    if (s.ba) ss += (*s.ba - r.mean) * (*s.ba - r.mean);
  }
  r.stddev = std::sqrt(ss / static_cast<double>(r.defined));
  return r;
}

MetricsReport subject_report(const EpochDataset& ds, std::span<const int> predicted) {
  if (predicted.size() != ds.size()) throw ShapeError("subject_report: one prediction per epoch required");
  std::vector<SubjectMetrics> out;
  for (std::uint32_t sid : ds.subjects()) {
    std::vector<int> truth, pred;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.epochs[i].subject_id != sid) continue;
      truth.push_back(ds.epochs[i].label);
      pred.push_back(predicted[i]);
    }
    SubjectMetrics s;
    s.subject = sid;
    s.counts = confusion(truth, pred);
    s.ba = balanced_accuracy(s.counts);
    out.push_back(s);
  }
  return make_report(std::move(out));
}

std::string MetricsReport::to_text() const {
  std::string out;
  for (const auto& s : subjects) {
    out += fmt::format("{} {} {} {} {} {}\n", s.subject, s.counts.tp, s.counts.fn, s.counts.tn, s.counts.fp,
                       s.ba ? fmt::format("{:.6f}", *s.ba) : std::string("undefined"));
  }
  out += fmt::format("aggregate {:.6f} {:.6f} {}\n", mean, stddev, defined);
  return out;
}

MetricsReport MetricsReport::parse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<SubjectMetrics> subjects;
  bool saw_aggregate = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    if (first == "aggregate") {
      saw_aggregate = true;
      continue;
    }
    SubjectMetrics s;
    std::string ba;
    try {
      s.subject = static_cast<std::uint32_t>(std::stoul(first));
    } catch (const std::exception&) {
      throw FormatError("metrics line '" + line + "' does not start with a subject id");
    }
    if (!(ls >> s.counts.tp >> s.counts.fn >> s.counts.tn >> s.counts.fp >> ba)) {
      throw FormatError("metrics line '" + line + "' needs subject TP FN TN FP BA");
    }
    s.ba = balanced_accuracy(s.counts);
    subjects.push_back(s);
  }
  if (!saw_aggregate) throw FormatError("metrics text lacks the aggregate line");
  return make_report(std::move(subjects));
}

}  // namespace elip
