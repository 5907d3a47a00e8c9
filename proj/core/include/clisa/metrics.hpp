#pragma once

#include <cstddef>
#include <vector>

#include "clisa/recording.hpp"

namespace clisa {

/// Row-normalized percentage confusion matrix: entry (i, j) is the share of
/// true-i samples predicted as j. Rows with samples sum to 100.
std::vector<std::vector<double>> confusion(const std::vector<int>& labels,
                                           const std::vector<int>& predictions,
                                           std::size_t n_classes);

/// Raw confusion counts.
std::vector<std::vector<std::size_t>> confusion_counts(const std::vector<int>& labels,
                                                       const std::vector<int>& predictions,
                                                       std::size_t n_classes);

struct RocPoint {
  double fpr = 0, tpr = 0;
};

/// ROC curve over all score thresholds (descending), plus trapezoidal AUC with
/// tied scores averaged. Scores are positive-class posteriors; labels 0/1.
std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<double>& scores,
                                                 const std::vector<int>& labels);

/// Binomial std of an accuracy estimate around chance at n samples, in [0,1].
double chance_sigma(double chance, std::size_t n_samples);

/// Spearman rank correlation (average ranks on ties).
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace clisa
