#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "clisa/tensor.hpp"

namespace clisa {

constexpr double kNormEps = 1e-8;

/// Z-score each row group across the concatenation of the group members'
/// last axes. Every tensor in the group must share its leading shape; row r
/// of the group is {member[0] row r, member[1] row r, ...} concatenated.
/// Population variance; constant groups map to zeros. Operates in place.
template <class Real>
void stratified_normalize_group(const std::vector<Tensor<Real>*>& group) {
  if (group.empty()) return;
  const std::size_t last = group[0]->shape.back();
  const std::size_t rows = group[0]->size() / last;
  for (auto* t : group)
    if (t->size() / t->shape.back() != rows)
      throw dim_error("stratified normalization: leading shape mismatch in group");

  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0, count = 0;
    for (auto* t : group) {
      const std::size_t l = t->shape.back();
      for (std::size_t u = 0; u < l; ++u) sum += t->data[r * l + u];
      count += static_cast<double>(l);
    }
    const double mu = sum / count;
    double var = 0;
    for (auto* t : group) {
      const std::size_t l = t->shape.back();
      for (std::size_t u = 0; u < l; ++u) {
        const double d = static_cast<double>(t->data[r * l + u]) - mu;
        var += d * d;
      }
    }
    var /= count;
    const double inv = 1.0 / std::sqrt(var + kNormEps);
    for (auto* t : group) {
      const std::size_t l = t->shape.back();
      for (std::size_t u = 0; u < l; ++u)
        t->data[r * l + u] = static_cast<Real>(
            (static_cast<double>(t->data[r * l + u]) - mu) * inv);
    }
  }
}

// ---- adaptive feature normalization -------------------------------------------

/// Running mean/variance tracking a serial stream with exponential decay,
/// initialized at the training statistics. Each update normalizes with the
/// state *prior* to incorporating the current sample, so the first output is
/// the plain training-stat z-score. Sequential per stream; callers serialize.
struct AdaptiveNormState {
  std::vector<double> mean;
  std::vector<double> var;
  double eta = 0.99;
  std::size_t samples_seen = 0;

  AdaptiveNormState() = default;
  AdaptiveNormState(std::vector<double> train_mean, std::vector<double> train_var,
                    double decay)
      : mean(std::move(train_mean)), var(std::move(train_var)), eta(decay) {
    if (!(eta > 0.0) || eta > 1.0)
      throw std::invalid_argument("adaptive normalization: decay must be in (0, 1]");
    if (mean.size() != var.size())
      throw std::invalid_argument("adaptive normalization: mean/var length mismatch");
    for (double v : var)
      if (v < 0.0) throw std::invalid_argument("adaptive normalization: negative variance");
  }
};

template <class Real>
std::vector<Real> adaptive_normalize(AdaptiveNormState& state, std::span<const Real> x) {
  if (x.size() != state.mean.size())
    throw dim_error("adaptive normalization: feature dimension mismatch");
  std::vector<Real> out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double xv = static_cast<double>(x[d]);
    out[d] = static_cast<Real>((xv - state.mean[d]) / std::sqrt(state.var[d] + kNormEps));
    if (state.eta < 1.0) {
      const double prev_mean = state.mean[d];
      state.mean[d] = state.eta * prev_mean + (1.0 - state.eta) * xv;
      const double dev = xv - prev_mean;
      state.var[d] = state.eta * state.var[d] + (1.0 - state.eta) * dev * dev;
    }
  }
  ++state.samples_seen;
  return out;
}

/// Per-feature population mean/variance of a row-major [n x d] table.
inline void column_stats(const std::vector<std::vector<double>>& rows,
                         std::vector<double>& mean, std::vector<double>& var) {
  if (rows.empty()) throw std::invalid_argument("column_stats: empty table");
  const std::size_t d = rows[0].size();
  mean.assign(d, 0.0);
  var.assign(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i) mean[i] += r[i];
  for (std::size_t i = 0; i < d; ++i) mean[i] /= static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i) {
      const double dev = r[i] - mean[i];
      var[i] += dev * dev;
    }
  for (std::size_t i = 0; i < d; ++i) var[i] /= static_cast<double>(rows.size());
}

}  // namespace clisa
