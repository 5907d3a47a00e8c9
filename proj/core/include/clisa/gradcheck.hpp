#pragma once

#include <cstdint>
#include <vector>

#include "clisa/graph.hpp"
#include "clisa/rng.hpp"
#include "clisa/tensor.hpp"

namespace clisa {

/// Compare tape gradients against central finite differences.
///
/// `build` must be a pure function: given a graph and the param node ids (one
/// per entry of `params`, in order) it constructs the computation and returns
/// the scalar root. Up to `max_coords` coordinates are sampled across all
/// parameters; returns max |ad - fd| / (|ad| + |fd| + 1e-6). Meaningful in
/// 64-bit mode (Real = double) with h around 1e-5.
template <class Real, class BuildFn>
double gradcheck(BuildFn&& build, const std::vector<Tensor<Real>>& params, double h,
                 std::size_t max_coords = 120, std::uint64_t seed = 0x9d5ec7a11ull) {
  using Id = typename Graph<Real>::Id;

  auto eval = [&](const std::vector<Tensor<Real>>& p, std::vector<Tensor<Real>>* grads) {
    Graph<Real> g;
    std::vector<Id> ids;
    ids.reserve(p.size());
    for (const auto& t : p) ids.push_back(g.param(t));
    const Id root = build(g, ids);
    const double f = static_cast<double>(g.value(root)[0]);
    if (grads) {
      g.backward(root);
      grads->clear();
      for (Id id : ids) grads->push_back(g.grad(id));
    }
    return f;
  };

  std::vector<Tensor<Real>> grads;
  eval(params, &grads);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    for (std::size_t ci = 0; ci < params[pi].size(); ++ci) coords.emplace_back(pi, ci);
  if (coords.size() > max_coords) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(max_coords);
  }

  double worst = 0;
  std::vector<Tensor<Real>> work = params;
  for (auto [pi, ci] : coords) {
    const Real saved = work[pi][ci];
    work[pi][ci] = saved + static_cast<Real>(h);
    const double fp = eval(work, nullptr);
    work[pi][ci] = saved - static_cast<Real>(h);
    const double fm = eval(work, nullptr);
    work[pi][ci] = saved;
    const double fd = (fp - fm) / (2.0 * h);
    const double ad = static_cast<double>(grads[pi][ci]);
    const double rel = std::abs(ad - fd) / (std::abs(ad) + std::abs(fd) + 1e-6);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace clisa
