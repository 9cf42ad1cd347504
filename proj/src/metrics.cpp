#include "ckad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ckad {

double auroc(std::span<const double> scores, std::span<const ObjectLabel> labels) {
  if (scores.size() != labels.size()) throw ArgumentError("auroc: score and label counts differ");
  const auto n = scores.size();
  std::size_t pos = 0;
  for (auto l : labels) pos += l == ObjectLabel::anomalous ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auroc needs both normal and anomalous samples");
  for (double s : scores)
    if (!std::isfinite(s)) throw ArgumentError("auroc: non-finite score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over tie blocks, then the U statistic of the anomalous class.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == ObjectLabel::anomalous) rank_sum += avg_rank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

void ForgettingTracker::record(const std::string& category, double value) { history_[category].push_back(value); }

double ForgettingTracker::forgetting(const std::string& category) const {
  const auto it = history_.find(category);
  if (it == history_.end() || it->second.size() < 2) return 0.0;
  const auto& h = it->second;
  const double latest = h.back();
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < h.size(); ++i) worst = std::max(worst, h[i] - latest);
  return worst;
}

}  // namespace ckad
