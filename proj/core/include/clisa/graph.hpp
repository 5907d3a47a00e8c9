#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clisa/kernels.hpp"
#include "clisa/tensor.hpp"

namespace clisa {

enum class Padding { valid, same_zero };

/// Thrown for misuse of the tape API (non-scalar backward root, etc).
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Denominator candidate indices for one NT-Xent anchor. Embeddings 0..N-1
/// belong to subject A, N..2N-1 to subject B; the positive of anchor a is
/// a+N (resp. a-N) and is part of the candidate set. Exactly 2N-1 entries.
inline std::vector<std::size_t> ntxent_denominator(std::size_t n_trials, std::size_t anchor) {
  std::vector<std::size_t> out;
  out.reserve(2 * n_trials - 1);
  const bool side_a = anchor < n_trials;
  const std::size_t i = side_a ? anchor : anchor - n_trials;
  const std::size_t same_base = side_a ? 0 : n_trials;
  const std::size_t other_base = side_a ? n_trials : 0;
  for (std::size_t j = 0; j < n_trials; ++j)
    if (j != i) out.push_back(same_base + j);
  for (std::size_t j = 0; j < n_trials; ++j) out.push_back(other_base + j);
  return out;
}

/// Reverse-mode tape over the fixed CLISA operator set. Nodes append in
/// topological order by construction, so backward is a single reverse sweep.
/// One graph per minibatch; graphs are cheap and thrown away after the step.
template <class Real>
class Graph {
 public:
  using Id = std::size_t;

  // ---- leaves ---------------------------------------------------------------

  Id input(Tensor<Real> v) {
    if (!v.all_finite()) throw numeric_error("graph input: non-finite values");
    return push(std::move(v), false, {}, {});
  }

  Id param(Tensor<Real> v) {
    if (!v.all_finite()) throw numeric_error("graph param: non-finite values");
    return push(std::move(v), true, {}, {});
  }

  // ---- spec operator set ----------------------------------------------------

  /// Spatial or temporal 1-d convolution. Width == channels (> 1) selects
  /// full-channel contraction (the spatial form); otherwise the filters slide
  /// along time, applied to every row. Single-row input keeps a rank-2 output.
  Id conv1d(Id x, Id f, Padding pad) {
    const auto& xv = val(x);
    const auto& fv = val(f);
    require_shape(xv, 2, "conv1d input");
    require_shape(fv, 2, "conv1d filters");
    const std::size_t C = xv.dim(0), W = fv.dim(1);
    if (C > 1 && W == C) return conv_channel_contract(x, f);
    return conv_temporal_rows(x, f, pad);
  }

  /// Spatial form: y[f,t] = sum_c F[f,c] x[c,t]. Time axis untouched.
  Id conv_channel_contract(Id x, Id f) {
    const auto& xv = val(x);
    const auto& fv = val(f);
    if (fv.dim(1) != xv.dim(0))
      throw dim_error("conv1d: filter width " + std::to_string(fv.dim(1)) +
                      " != input channels " + std::to_string(xv.dim(0)));
    Tensor<Real> y({fv.dim(0), xv.dim(1)});
    kernels::conv_contract_fwd(xv, fv, y);
    return push(std::move(y), any_grad({x, f}), {x, f},
                [x, f](Graph& g, Id self) {
                  kernels::conv_contract_bwd(g.val(x), g.val(f), g.gradref(self),
                                             g.grad_or_null(x), g.grad_or_null(f));
                });
  }

  /// Temporal form: filters slide along time over each row.
  /// [R x T] -> [F x R x T_out] (rank 2 when R == 1).
  Id conv_temporal_rows(Id x, Id f, Padding pad) {
    const auto& xv = val(x);
    const auto& fv = val(f);
    const std::size_t R = xv.dim(0), T = xv.dim(1);
    const std::size_t F = fv.dim(0), W = fv.dim(1);
    if (pad == Padding::valid && W > T)
      throw dim_error("conv1d: filter width " + std::to_string(W) + " > time " +
                      std::to_string(T) + " in valid mode");
    const std::size_t pad_left = pad == Padding::same_zero ? kernels::same_pad_left(W) : 0;
    const std::size_t To = pad == Padding::same_zero ? T : T - W + 1;
    Tensor<Real> y(R == 1 ? std::vector<std::size_t>{F, To}
                          : std::vector<std::size_t>{F, R, To});
    // kernels expect rank-3 views; shape bookkeeping only
    Tensor<Real> y3({F, R, To});
    kernels::conv_rows_fwd(xv, fv, pad_left, y3);
    y.data = std::move(y3.data);
    return push(std::move(y), any_grad({x, f}), {x, f},
                [x, f, pad_left, F, R, To](Graph& g, Id self) {
                  Tensor<Real> gy3({F, R, To});
                  gy3.data = g.gradref(self).data;
                  kernels::conv_rows_bwd(g.val(x), g.val(f), pad_left, gy3,
                                         g.grad_or_null(x), g.grad_or_null(f));
                });
  }

  /// Depthwise convolution, filters [maps x C x W]. Width == channels selects
  /// the spatial form; channels == 1 the temporal (valid) form.
  Id depthwise_conv1d(Id x, Id f) {
    const auto& xv = val(x);
    const auto& fv = val(f);
    require_shape(xv, 3, "depthwise_conv1d input");
    require_shape(fv, 3, "depthwise_conv1d filters");
    if (fv.dim(0) != xv.dim(0))
      throw dim_error("depthwise_conv1d: filter maps " + std::to_string(fv.dim(0)) +
                      " != input maps " + std::to_string(xv.dim(0)));
    const std::size_t M = xv.dim(0), CH = xv.dim(1), T = xv.dim(2);
    const std::size_t C = fv.dim(1), W = fv.dim(2);
    if (CH > 1 && W == CH) {
      Tensor<Real> y({C * M, 1, T});
      kernels::depthwise_spatial_fwd(xv, fv, y);
      return push(std::move(y), any_grad({x, f}), {x, f},
                  [x, f](Graph& g, Id self) {
                    kernels::depthwise_spatial_bwd(g.val(x), g.val(f), g.gradref(self),
                                                   g.grad_or_null(x), g.grad_or_null(f));
                  });
    }
    if (CH == 1) {
      if (W > T)
        throw dim_error("depthwise_conv1d: filter width " + std::to_string(W) +
                        " > time " + std::to_string(T));
      Tensor<Real> y({C * M, 1, T - W + 1});
      kernels::depthwise_temporal_fwd(xv, fv, y);
      return push(std::move(y), any_grad({x, f}), {x, f},
                  [x, f](Graph& g, Id self) {
                    kernels::depthwise_temporal_bwd(g.val(x), g.val(f), g.gradref(self),
                                                    g.grad_or_null(x), g.grad_or_null(f));
                  });
    }
    throw dim_error("depthwise_conv1d: filter width " + std::to_string(W) +
                    " matches neither channels " + std::to_string(CH) + " nor 1");
  }

  /// Non-overlapping average pooling over the last axis with the ELU applied
  /// inside the mean. Output time = floor(T / S).
  Id avg_pool(Id x, std::size_t S) {
    const auto& xv = val(x);
    if (S < 1 || S > xv.shape.back())
      throw dim_error("avg_pool: kernel " + std::to_string(S) + " invalid for time " +
                      std::to_string(xv.shape.back()));
    auto oshape = xv.shape;
    oshape.back() = xv.shape.back() / S;
    Tensor<Real> y(oshape);
    kernels::pool_elu_fwd(xv, S, y);
    return push(std::move(y), node(x).needs_grad, {x},
                [x, S](Graph& g, Id self) {
                  if (auto* gx = g.grad_or_null(x))
                    kernels::pool_elu_bwd(g.val(x), S, g.gradref(self), *gx);
                });
  }

  Id elu(Id x) {
    const auto& xv = val(x);
    Tensor<Real> y(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = kernels::elu(xv[i]);
    return push(std::move(y), node(x).needs_grad, {x},
                [x](Graph& g, Id self) {
                  auto* gx = g.grad_or_null(x);
                  if (!gx) return;
                  const auto& xv = g.val(x);
                  const auto& gy = g.gradref(self);
                  for (std::size_t i = 0; i < xv.size(); ++i)
                    (*gx)[i] += gy[i] * kernels::elu_grad(xv[i]);
                });
  }

  Id relu(Id x) {
    const auto& xv = val(x);
    Tensor<Real> y(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > Real(0) ? xv[i] : Real(0);
    return push(std::move(y), node(x).needs_grad, {x},
                [x](Graph& g, Id self) {
                  auto* gx = g.grad_or_null(x);
                  if (!gx) return;
                  const auto& xv = g.val(x);
                  const auto& gy = g.gradref(self);
                  for (std::size_t i = 0; i < xv.size(); ++i)
                    if (xv[i] > Real(0)) (*gx)[i] += gy[i];
                });
  }

  /// y = x W^T + b with x [B x D] or [D], W [O x D], b [O].
  Id linear(Id x, Id w, Id b) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    const auto& bv = val(b);
    require_shape(wv, 2, "linear weights");
    if (xv.shape.back() != wv.dim(1))
      throw dim_error("linear: input dim " + std::to_string(xv.shape.back()) +
                      " != weight columns " + std::to_string(wv.dim(1)));
    if (bv.size() != wv.dim(0)) throw dim_error("linear: bias length mismatch");
    auto oshape = xv.shape;
    oshape.back() = wv.dim(0);
    Tensor<Real> y(oshape);
    kernels::linear_fwd(xv, wv, bv, y);
    return push(std::move(y), any_grad({x, w, b}), {x, w, b},
                [x, w, b](Graph& g, Id self) {
                  kernels::linear_bwd(g.val(x), g.val(w), g.gradref(self),
                                      g.grad_or_null(x), g.grad_or_null(w),
                                      g.grad_or_null(b));
                });
  }

  /// Mean softmax cross-entropy over rows. Single row reproduces the scalar
  /// single-sample case.
  Id softmax_cross_entropy(Id logits, std::vector<int> labels) {
    const auto& lv = val(logits);
    const std::size_t K = lv.shape.back();
    const std::size_t B = lv.size() / K;
    if (labels.size() != B) throw dim_error("softmax_cross_entropy: label count mismatch");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= K)
        throw usage_error("softmax_cross_entropy: label out of range");
    if (!lv.all_finite()) throw numeric_error("softmax_cross_entropy: non-finite logits");
    Tensor<Real> y = Tensor<Real>::scalar(static_cast<Real>(kernels::softmax_xent_fwd(lv, labels)));
    return push(std::move(y), node(logits).needs_grad, {logits},
                [logits, labels = std::move(labels)](Graph& g, Id self) {
                  if (auto* gl = g.grad_or_null(logits))
                    kernels::softmax_xent_bwd(g.val(logits), labels, g.gradref(self)[0], *gl);
                });
  }

  // ---- structural ops (stratified normalization, loss assembly) -------------

  Id reshape(Id x, std::vector<std::size_t> shape) {
    const auto& xv = val(x);
    if (Tensor<Real>::count(shape) != xv.size())
      throw dim_error("reshape: element count mismatch");
    Tensor<Real> y(shape);
    y.data = xv.data;
    return push(std::move(y), node(x).needs_grad, {x},
                [x](Graph& g, Id self) {
                  auto* gx = g.grad_or_null(x);
                  if (!gx) return;
                  const auto& gy = g.gradref(self);
                  for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i];
                });
  }

  /// Concatenate along the last axis; leading shape must match.
  Id concat_last(const std::vector<Id>& xs) {
    if (xs.empty()) throw usage_error("concat_last: empty input list");
    const auto& first = val(xs[0]);
    auto lead = first.shape;
    lead.pop_back();
    std::size_t total = 0;
    for (Id id : xs) {
      const auto& v = val(id);
      auto l = v.shape;
      l.pop_back();
      if (l != lead) throw dim_error("concat_last: leading shape mismatch");
      total += v.shape.back();
    }
    auto oshape = first.shape;
    oshape.back() = total;
    Tensor<Real> y(oshape);
    const std::size_t rows = y.size() / total;
    std::size_t off = 0;
    for (Id id : xs) {
      const auto& v = val(id);
      const std::size_t t = v.shape.back();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t u = 0; u < t; ++u) y.data[r * total + off + u] = v.data[r * t + u];
      off += t;
    }
    bool ng = false;
    for (Id id : xs) ng = ng || node(id).needs_grad;
    return push(std::move(y), ng, xs,
                [xs, total, rows](Graph& g, Id self) {
                  const auto& gy = g.gradref(self);
                  std::size_t off = 0;
                  for (Id id : xs) {
                    const std::size_t t = g.val(id).shape.back();
                    if (auto* gx = g.grad_or_null(id))
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t u = 0; u < t; ++u)
                          gx->data[r * t + u] += gy.data[r * total + off + u];
                    off += t;
                  }
                });
  }

  /// Split the last axis into `parts` equal pieces.
  std::vector<Id> split_last(Id x, std::size_t parts) {
    // copy everything out of the node first: push() may reallocate the arena
    const auto xshape = val(x).shape;
    const bool ng = node(x).needs_grad;
    const std::size_t total = xshape.back();
    if (parts == 0 || total % parts != 0)
      throw dim_error("split_last: " + std::to_string(total) + " not divisible by " +
                      std::to_string(parts));
    const std::size_t t = total / parts;
    const std::size_t rows = Tensor<Real>::count(xshape) / total;
    std::vector<Tensor<Real>> pieces;
    pieces.reserve(parts);
    {
      const auto& xv = val(x);
      for (std::size_t p = 0; p < parts; ++p) {
        auto oshape = xshape;
        oshape.back() = t;
        Tensor<Real> y(oshape);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t u = 0; u < t; ++u)
            y.data[r * t + u] = xv.data[r * total + p * t + u];
        pieces.push_back(std::move(y));
      }
    }
    std::vector<Id> out;
    for (std::size_t p = 0; p < parts; ++p)
      out.push_back(push(std::move(pieces[p]), ng, {x},
                         [x, p, t, total, rows](Graph& g, Id self) {
                           auto* gx = g.grad_or_null(x);
                           if (!gx) return;
                           const auto& gy = g.gradref(self);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t u = 0; u < t; ++u)
                               gx->data[r * total + p * t + u] += gy.data[r * t + u];
                         }));
    return out;
  }

  /// Per-row z-score over the last axis (population variance, eps-guarded).
  /// Constant rows map to exact zeros.
  Id znorm_rows(Id x) {
    const auto& xv = val(x);
    const std::size_t t = xv.shape.back();
    const std::size_t rows = xv.size() / t;
    Tensor<Real> y(xv.shape);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* xr = &xv.data[r * t];
      Real* yr = &y.data[r * t];
      double mu = 0;
      for (std::size_t u = 0; u < t; ++u) mu += xr[u];
      mu /= static_cast<double>(t);
      double var = 0;
      for (std::size_t u = 0; u < t; ++u) {
        const double d = static_cast<double>(xr[u]) - mu;
        var += d * d;
      }
      var /= static_cast<double>(t);
      const double inv = 1.0 / std::sqrt(var + kZnormEps);
      for (std::size_t u = 0; u < t; ++u)
        yr[u] = static_cast<Real>((static_cast<double>(xr[u]) - mu) * inv);
    }
    return push(std::move(y), node(x).needs_grad, {x},
                [x, t, rows](Graph& g, Id self) {
                  auto* gx = g.grad_or_null(x);
                  if (!gx) return;
                  const auto& xv = g.val(x);
                  const auto& yv = g.val(self);
                  const auto& gy = g.gradref(self);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const Real* xr = &xv.data[r * t];
                    const Real* yr = &yv.data[r * t];
                    const Real* gr = &gy.data[r * t];
                    Real* gxr = &gx->data[r * t];
                    double mu = 0, var = 0;
                    for (std::size_t u = 0; u < t; ++u) mu += xr[u];
                    mu /= static_cast<double>(t);
                    for (std::size_t u = 0; u < t; ++u) {
                      const double d = static_cast<double>(xr[u]) - mu;
                      var += d * d;
                    }
                    var /= static_cast<double>(t);
                    const double inv = 1.0 / std::sqrt(var + kZnormEps);
                    double gmean = 0, gydot = 0;
                    for (std::size_t u = 0; u < t; ++u) {
                      gmean += gr[u];
                      gydot += static_cast<double>(gr[u]) * yr[u];
                    }
                    gmean /= static_cast<double>(t);
                    gydot /= static_cast<double>(t);
                    for (std::size_t u = 0; u < t; ++u)
                      gxr[u] += static_cast<Real>(inv * (gr[u] - gmean - yr[u] * gydot));
                  }
                });
  }

  /// k vectors [D] -> [k x D].
  Id stack_rows(const std::vector<Id>& xs) {
    if (xs.empty()) throw usage_error("stack_rows: empty input list");
    const std::size_t d = val(xs[0]).size();
    for (Id id : xs)
      if (val(id).size() != d) throw dim_error("stack_rows: ragged inputs");
    Tensor<Real> y({xs.size(), d});
    for (std::size_t r = 0; r < xs.size(); ++r)
      std::copy(val(xs[r]).data.begin(), val(xs[r]).data.end(), y.data.begin() + r * d);
    bool ng = false;
    for (Id id : xs) ng = ng || node(id).needs_grad;
    return push(std::move(y), ng, xs,
                [xs, d](Graph& g, Id self) {
                  const auto& gy = g.gradref(self);
                  for (std::size_t r = 0; r < xs.size(); ++r)
                    if (auto* gx = g.grad_or_null(xs[r]))
                      for (std::size_t u = 0; u < d; ++u) (*gx)[u] += gy.data[r * d + u];
                });
  }

  /// Row-wise L2 normalization. Zero-norm rows are a numeric error.
  Id l2_normalize_rows(Id x) {
    const auto& xv = val(x);
    const std::size_t d = xv.shape.back();
    const std::size_t rows = xv.size() / d;
    Tensor<Real> y(xv.shape);
    for (std::size_t r = 0; r < rows; ++r) {
      double nrm = 0;
      for (std::size_t u = 0; u < d; ++u)
        nrm += static_cast<double>(xv.data[r * d + u]) * xv.data[r * d + u];
      nrm = std::sqrt(nrm);
      if (nrm < 1e-12)
        throw numeric_error("l2_normalize_rows: zero-norm embedding at row " + std::to_string(r));
      for (std::size_t u = 0; u < d; ++u)
        y.data[r * d + u] = static_cast<Real>(xv.data[r * d + u] / nrm);
    }
    return push(std::move(y), node(x).needs_grad, {x},
                [x, d, rows](Graph& g, Id self) {
                  auto* gx = g.grad_or_null(x);
                  if (!gx) return;
                  const auto& xv = g.val(x);
                  const auto& yv = g.val(self);
                  const auto& gy = g.gradref(self);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double nrm = 0, dot = 0;
                    for (std::size_t u = 0; u < d; ++u) {
                      nrm += static_cast<double>(xv.data[r * d + u]) * xv.data[r * d + u];
                      dot += static_cast<double>(gy.data[r * d + u]) * yv.data[r * d + u];
                    }
                    nrm = std::sqrt(nrm);
                    for (std::size_t u = 0; u < d; ++u)
                      gx->data[r * d + u] += static_cast<Real>(
                          (gy.data[r * d + u] - dot * yv.data[r * d + u]) / nrm);
                  }
                });
  }

  /// S = Z Z^T for Z [R x D].
  Id gram(Id z) {
    const auto& zv = val(z);
    require_shape(zv, 2, "gram input");
    const std::size_t r = zv.dim(0), d = zv.dim(1);
    Tensor<Real> y({r, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) {
        Real acc = 0;
        for (std::size_t u = 0; u < d; ++u) acc += zv.data[i * d + u] * zv.data[j * d + u];
        y.at2(i, j) = acc;
      }
    return push(std::move(y), node(z).needs_grad, {z},
                [z, r, d](Graph& g, Id self) {
                  auto* gz = g.grad_or_null(z);
                  if (!gz) return;
                  const auto& zv = g.val(z);
                  const auto& gy = g.gradref(self);
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < r; ++j) {
                      const Real gsym = gy.at2(i, j) + gy.at2(j, i);
                      if (gsym == Real(0)) continue;
                      for (std::size_t u = 0; u < d; ++u)
                        gz->data[i * d + u] += gsym * zv.data[j * d + u];
                    }
                });
  }

  /// NT-Xent from a [2N x 2N] similarity matrix. Returns the summed minibatch
  /// loss. Stable log-sum-exp in double.
  Id ntxent_from_gram(Id sims, Real tau, std::size_t n_trials) {
    const auto& sv = val(sims);
    require_shape(sv, 2, "ntxent similarity matrix");
    const std::size_t b = 2 * n_trials;
    if (sv.dim(0) != b || sv.dim(1) != b)
      throw dim_error("ntxent: expected " + std::to_string(b) + "x" + std::to_string(b) +
                      " similarities, got " + sv.shape_str());
    if (n_trials < 2) throw usage_error("ntxent: need N >= 2 trials for negatives");
    double loss = 0;
    for (std::size_t a = 0; a < b; ++a) {
      const std::size_t pos = a < n_trials ? a + n_trials : a - n_trials;
      const auto denom = ntxent_denominator(n_trials, a);
      double mx = -1e300;
      for (std::size_t dix : denom)
        mx = std::max(mx, static_cast<double>(sv.at2(a, dix)) / tau);
      double z = 0;
      for (std::size_t dix : denom) z += std::exp(static_cast<double>(sv.at2(a, dix)) / tau - mx);
      loss += (mx + std::log(z)) - static_cast<double>(sv.at2(a, pos)) / tau;
    }
    Tensor<Real> y = Tensor<Real>::scalar(static_cast<Real>(loss));
    return push(std::move(y), node(sims).needs_grad, {sims},
                [sims, tau, n_trials, b](Graph& g, Id self) {
                  auto* gs = g.grad_or_null(sims);
                  if (!gs) return;
                  const auto& sv = g.val(sims);
                  const Real groot = g.gradref(self)[0];
                  for (std::size_t a = 0; a < b; ++a) {
                    const std::size_t pos = a < n_trials ? a + n_trials : a - n_trials;
                    const auto denom = ntxent_denominator(n_trials, a);
                    double mx = -1e300;
                    for (std::size_t dix : denom)
                      mx = std::max(mx, static_cast<double>(sv.at2(a, dix)) / tau);
                    double z = 0;
                    for (std::size_t dix : denom)
                      z += std::exp(static_cast<double>(sv.at2(a, dix)) / tau - mx);
                    for (std::size_t dix : denom) {
                      const double p = std::exp(static_cast<double>(sv.at2(a, dix)) / tau - mx) / z;
                      gs->at2(a, dix) += groot * static_cast<Real>(p / tau);
                    }
                    gs->at2(a, pos) -= groot / tau;
                  }
                });
  }

  // ---- small scalar utilities ------------------------------------------------

  Id sum(Id x) {
    const auto& xv = val(x);
    Real acc = 0;
    for (Real v : xv.data) acc += v;
    return push(Tensor<Real>::scalar(acc), node(x).needs_grad, {x},
                [x](Graph& g, Id self) {
                  auto* gx = g.grad_or_null(x);
                  if (!gx) return;
                  const Real gr = g.gradref(self)[0];
                  for (auto& v : gx->data) v += gr;
                });
  }

  Id dot(Id a, Id b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    if (av.size() != bv.size()) throw dim_error("dot: length mismatch");
    Real acc = 0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    return push(Tensor<Real>::scalar(acc), any_grad({a, b}), {a, b},
                [a, b](Graph& g, Id self) {
                  const Real gr = g.gradref(self)[0];
                  const auto& av = g.val(a);
                  const auto& bv = g.val(b);
                  if (auto* ga = g.grad_or_null(a))
                    for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += gr * bv[i];
                  if (auto* gb = g.grad_or_null(b))
                    for (std::size_t i = 0; i < bv.size(); ++i) (*gb)[i] += gr * av[i];
                });
  }

  Id square(Id x) {
    const auto& xv = val(x);
    Tensor<Real> y(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] * xv[i];
    return push(std::move(y), node(x).needs_grad, {x},
                [x](Graph& g, Id self) {
                  auto* gx = g.grad_or_null(x);
                  if (!gx) return;
                  const auto& xv = g.val(x);
                  const auto& gy = g.gradref(self);
                  for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += Real(2) * xv[i] * gy[i];
                });
  }

  Id scale(Id x, Real c) {
    const auto& xv = val(x);
    Tensor<Real> y(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = c * xv[i];
    return push(std::move(y), node(x).needs_grad, {x},
                [x, c](Graph& g, Id self) {
                  auto* gx = g.grad_or_null(x);
                  if (!gx) return;
                  const auto& gy = g.gradref(self);
                  for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += c * gy[i];
                });
  }

  /// Scalar read of one flat element (attribution target selection).
  Id pick(Id x, std::size_t index) {
    const auto& xv = val(x);
    if (index >= xv.size()) throw dim_error("pick: index out of range");
    return push(Tensor<Real>::scalar(xv[index]), node(x).needs_grad, {x},
                [x, index](Graph& g, Id self) {
                  if (auto* gx = g.grad_or_null(x)) (*gx)[index] += g.gradref(self)[0];
                });
  }

  // ---- execution --------------------------------------------------------------

  /// Populate gradients for every node reachable from `root` that needs them.
  /// Deterministic: the tape is replayed in strict reverse creation order.
  void backward(Id root) {
    if (val(root).size() != 1) throw usage_error("backward: root must be scalar");
    if (!val(root).all_finite()) throw numeric_error("backward: non-finite root");
    for (auto& n : nodes_)
      if (n.needs_grad) {
        n.grad = Tensor<Real>(n.value.shape);
      }
    if (!node(root).needs_grad) return;
    node(root).grad.data[0] = Real(1);
    for (std::size_t i = root + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.needs_grad && n.back) n.back(*this, i);
    }
  }

  const Tensor<Real>& value(Id id) const { return nodes_.at(id).value; }

  const Tensor<Real>& grad(Id id) const {
    const auto& n = nodes_.at(id);
    if (n.grad.size() == 0) throw usage_error("grad: not materialized; run backward first");
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  static constexpr double kZnormEps = 1e-8;

  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // lazily materialized by backward
    bool needs_grad = false;
    std::vector<Id> parents;
    std::function<void(Graph&, Id)> back;
  };

  Node& node(Id id) { return nodes_.at(id); }
  const Node& node(Id id) const { return nodes_.at(id); }
  const Tensor<Real>& val(Id id) const { return nodes_.at(id).value; }
  Tensor<Real>& gradref(Id id) { return nodes_.at(id).grad; }

  Tensor<Real>* grad_or_null(Id id) {
    auto& n = nodes_.at(id);
    return n.needs_grad ? &n.grad : nullptr;
  }

  bool any_grad(std::initializer_list<Id> ids) const {
    for (Id id : ids)
      if (node(id).needs_grad) return true;
    return false;
  }

  Id push(Tensor<Real> v, bool needs_grad, std::vector<Id> parents,
          std::function<void(Graph&, Id)> back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    n.parents = std::move(parents);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace clisa
