#pragma once

#include "ckad/pointcloud.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace ckad {

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Rank-based (Mann-Whitney) area under the ROC curve; tied scores count 1/2.
/// Higher scores are taken to mean "more anomalous".
double auroc(std::span<const double> scores, std::span<const ObjectLabel> labels);

/// Per-category history of AUROC values across evaluation rounds.
class ForgettingTracker {
 public:
  void record(const std::string& category, double auroc);
  /// max over earlier rounds of (earlier - latest); 0 with fewer than two rounds.
  double forgetting(const std::string& category) const;
  const std::map<std::string, std::vector<double>>& history() const { return history_; }

 private:
  std::map<std::string, std::vector<double>> history_;
};

}  // namespace ckad
