#pragma once

#include <algorithm>
#include <vector>

namespace oracle {

// Mean hinge of squared distance to the own-class centre minus the distance
// to the other-class centre, centres taken over the whole batch.
inline double triplet(const std::vector<std::vector<double>>& x, const std::vector<int>& labels, double margin) {
  const std::size_t d = x[0].size();
  std::vector<double> c[2] = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  double n[2] = {0, 0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    n[labels[i]] += 1;
    for (std::size_t k = 0; k < d; ++k) c[labels[i]][k] += x[i][k];
  }
  for (int k = 0; k < 2; ++k) {
    for (auto& v : c[k]) v /= n[k];
  }
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double same = 0, other = 0;
    for (std::size_t k = 0; k < d; ++k) {
      same += (x[i][k] - c[labels[i]][k]) * (x[i][k] - c[labels[i]][k]);
      other += (x[i][k] - c[1 - labels[i]][k]) * (x[i][k] - c[1 - labels[i]][k]);
    }
    total += std::max(0.0, same - other + margin);
  }
  return total / static_cast<double>(x.size());
}

inline std::vector<double> flatten(const std::vector<std::vector<double>>& x) {
  std::vector<double> out;
  for (const auto& r : x) out.insert(out.end(), r.begin(), r.end());
  return out;
}

}  // namespace oracle
