#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "rltir/errors.hpp"
#include "rltir/stream_forest.hpp"

namespace rltir {

/// Genuine is the positive class throughout.
struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(Verdict predicted, Verdict truth) {
    if (truth == Verdict::Genuine)
      (predicted == Verdict::Genuine ? tp : fn) += 1;
    else
      (predicted == Verdict::Genuine ? fp : tn) += 1;
  }

  std::int64_t total() const { return tp + fp + tn + fn; }

  static double ratio(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  }
  double precision() const { return ratio(tp, tp + fp); }
  double recall() const { return ratio(tp, tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  double fnr() const { return ratio(fn, tp + fn); }
  double fpr() const { return ratio(fp, fp + tn); }
  double accuracy() const { return ratio(tp + tn, total()); }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, fp += o.fp, tn += o.tn, fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(std::span<const Verdict> predicted, std::span<const Verdict> truth) {
  if (predicted.size() != truth.size()) throw InputError("verdict and label lists differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i], truth[i]);
  return c;
}

/// ROC AUC for negative-probability scores: the probability that a random
/// impostor scores above a random genuine instance, ties counting half.
/// Returns nullopt when either class is missing.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const Verdict> labels) {
  if (scores.size() != labels.size()) throw InputError("score and label lists differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mid-ranks (1-based) over tied groups; sum them for impostors.
  double impostor_rank_sum = 0.0;
  std::int64_t n_imp = 0, n_gen = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == Verdict::Impostor) {
        impostor_rank_sum += mid;
        ++n_imp;
      } else {
        ++n_gen;
      }
    }
    i = j + 1;
  }
  if (n_imp == 0 || n_gen == 0) return std::nullopt;
  const double u = impostor_rank_sum - 0.5 * static_cast<double>(n_imp) * static_cast<double>(n_imp + 1);
  return u / (static_cast<double>(n_imp) * static_cast<double>(n_gen));
}

struct ThresholdCalibration {
  double threshold = 0.5;
  double f1 = 0.0;
  bool fallback = false;
};

/// Picks the threshold (genuine iff y < threshold) maximising training F1 over
/// {0, 1} and the midpoints between consecutive distinct scores; the smallest
/// maximiser wins. Degenerate input (one class, or no distinct scores) falls
/// back to the 95th percentile of the genuine scores.
inline ThresholdCalibration calibrate_threshold(std::span<const double> scores,
                                                std::span<const Verdict> labels) {
  if (scores.size() != labels.size()) throw InputError("score and label lists differ in length");
  std::vector<std::pair<double, Verdict>> pts;
  pts.reserve(scores.size());
  std::int64_t genuine_total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    pts.emplace_back(scores[i], labels[i]);
    genuine_total += labels[i] == Verdict::Genuine;
  }
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  const auto impostor_total = static_cast<std::int64_t>(pts.size()) - genuine_total;
  const bool distinct = !pts.empty() && pts.front().first != pts.back().first;
  if (genuine_total == 0 || impostor_total == 0 || !distinct) {
    ThresholdCalibration out;
    out.fallback = true;
    std::vector<double> g;
    for (const auto& [s, l] : pts)
      if (l == Verdict::Genuine) g.push_back(s);
    if (!g.empty()) {
      const double pos = 0.95 * static_cast<double>(g.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, g.size() - 1);
      out.threshold = std::clamp(g[lo] + (pos - static_cast<double>(lo)) * (g[hi] - g[lo]), 0.0, 1.0);
    }
    return out;
  }

  std::vector<double> candidates{0.0};
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    if (pts[i].first != pts[i + 1].first) candidates.push_back(0.5 * (pts[i].first + pts[i + 1].first));
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());

  ThresholdCalibration best{candidates.front(), -1.0, false};
  std::size_t idx = 0;
  std::int64_t tp = 0, fp = 0;
  for (double t : candidates) {
    while (idx < pts.size() && pts[idx].first < t) {
      (pts[idx].second == Verdict::Genuine ? tp : fp) += 1;
      ++idx;
    }
    ConfusionCounts c{tp, fp, impostor_total - fp, genuine_total - tp};
    const double f1 = c.f1();
    if (f1 > best.f1) best = {t, f1, false};
  }
  return best;
}

}  // namespace rltir
