#pragma once

#include <span>
#include <vector>

#include "clisa/classifier.hpp"
#include "clisa/graph.hpp"

namespace clisa {

/// d(logit[target])/d(input) at a single feature vector.
template <class Real>
std::vector<double> mlp_input_gradient(const MlpParams<Real>& p, std::span<const Real> h,
                                       std::size_t target_class) {
  if (h.size() != p.input_dim())
    throw signal::param_error("attribution: feature dimension mismatch");
  if (target_class >= p.n_classes())
    throw signal::param_error("attribution: class index out of range");
  Graph<Real> g;
  auto x = g.param(Tensor<Real>({h.size()}, std::vector<Real>(h.begin(), h.end())));
  auto logits = g.linear(
      g.relu(g.linear(g.relu(g.linear(x, g.input(p.w1), g.input(p.b1))), g.input(p.w2),
                      g.input(p.b2))),
      g.input(p.w3), g.input(p.b3));
  auto root = g.pick(logits, target_class);
  g.backward(root);
  const auto& grad = g.grad(x);
  return std::vector<double>(grad.data.begin(), grad.data.end());
}

/// Integrated gradients along the straight line from `h0` to `h` with a
/// right Riemann sum of m steps:
///   IG_d = (h_d - h0_d) * (1/m) * sum_{k=1..m} dF/dh_d at h0 + (k/m)(h - h0).
template <class Real>
std::vector<double> integrated_gradients(const MlpParams<Real>& p, std::span<const Real> h,
                                         std::span<const Real> h0, std::size_t steps,
                                         std::size_t target_class) {
  if (h.size() != h0.size())
    throw signal::param_error("integrated_gradients: input/baseline dimension mismatch");
  if (steps < 1) throw signal::param_error("integrated_gradients: need at least one step");
  const std::size_t d = h.size();
  std::vector<double> acc(d, 0.0);
  std::vector<Real> point(d);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps);
    for (std::size_t i = 0; i < d; ++i)
      point[i] = static_cast<Real>(static_cast<double>(h0[i]) +
                                   t * (static_cast<double>(h[i]) - h0[i]));
    const auto grad = mlp_input_gradient(p, std::span<const Real>(point.data(), d),
                                         target_class);
    for (std::size_t i = 0; i < d; ++i) acc[i] += grad[i];
  }
  std::vector<double> ig(d);
  for (std::size_t i = 0; i < d; ++i)
    ig[i] = (static_cast<double>(h[i]) - h0[i]) * acc[i] / static_cast<double>(steps);
  return ig;
}

/// Completeness diagnostic: relative gap between sum(IG) and F(h) - F(h0).
template <class Real>
double ig_completeness_gap(const MlpParams<Real>& p, std::span<const Real> h,
                           std::span<const Real> h0, std::size_t steps,
                           std::size_t target_class, double* sum_out = nullptr) {
  const auto ig = integrated_gradients(p, h, h0, steps, target_class);
  double total = 0;
  for (double v : ig) total += v;
  auto logit_at = [&](std::span<const Real> x) {
    Tensor<Real> xt({x.size()}, std::vector<Real>(x.begin(), x.end()));
    return static_cast<double>(mlp_logits(p, xt)[target_class]);
  };
  const double delta = logit_at(h) - logit_at(h0);
  if (sum_out) *sum_out = total;
  return std::abs(total - delta) / std::max(1e-12, std::abs(delta));
}

}  // namespace clisa
