#include "clisa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clisa/signal.hpp"

namespace clisa {

std::vector<std::vector<std::size_t>> confusion_counts(const std::vector<int>& labels,
                                                       const std::vector<int>& predictions,
                                                       std::size_t n_classes) {
  if (labels.size() != predictions.size())
    throw data_error("confusion: label/prediction length mismatch");
  std::vector<std::vector<std::size_t>> counts(n_classes,
                                               std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || static_cast<std::size_t>(t) >= n_classes || p < 0 ||
        static_cast<std::size_t>(p) >= n_classes)
      throw data_error("confusion: label out of range");
    ++counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return counts;
}

std::vector<std::vector<double>> confusion(const std::vector<int>& labels,
                                           const std::vector<int>& predictions,
                                           std::size_t n_classes) {
  const auto counts = confusion_counts(labels, predictions, n_classes);
  std::vector<std::vector<double>> pct(n_classes, std::vector<double>(n_classes, 0.0));
  for (std::size_t i = 0; i < n_classes; ++i) {
    const double total = static_cast<double>(
        std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0}));
    if (total == 0) continue;
    for (std::size_t j = 0; j < n_classes; ++j)
      pct[i][j] = 100.0 * static_cast<double>(counts[i][j]) / total;
  }
  return pct;
}

std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<double>& scores,
                                                 const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw data_error("roc_auc: length mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw signal::param_error("roc_auc: both classes must be present");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> points;
  points.push_back({0.0, 0.0});
  double auc = 0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    // advance through a tie group in one jump (trapezoid across the tie)
    std::size_t j = i;
    std::size_t dtp = 0, dfp = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? dtp : dfp)++;
      ++j;
    }
    const double fpr0 = static_cast<double>(fp) / static_cast<double>(n_neg);
    const double tpr0 = static_cast<double>(tp) / static_cast<double>(n_pos);
    tp += dtp;
    fp += dfp;
    const double fpr1 = static_cast<double>(fp) / static_cast<double>(n_neg);
    const double tpr1 = static_cast<double>(tp) / static_cast<double>(n_pos);
    auc += (fpr1 - fpr0) * 0.5 * (tpr0 + tpr1);
    points.push_back({fpr1, tpr1});
    i = j;
  }
  return {std::move(points), auc};
}

double chance_sigma(double chance, std::size_t n_samples) {
  if (n_samples == 0) return 1.0;
  return std::sqrt(chance * (1.0 - chance) / static_cast<double>(n_samples));
}

namespace {
std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && v[idx[j]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}
}  // namespace

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw data_error("spearman_rho: need two equal-length series");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(ry.size());
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace clisa
