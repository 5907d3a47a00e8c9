#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "clisa/tensor.hpp"

namespace clisa::kernels {

// Raw convolution/pooling/dense numerics. Forward and backward live side by
// side so the graph ops and the plain (no-tape) forwards share one set of
// loops. All convolutions are cross-correlations (no kernel flip).

template <class Real>
inline Real elu(Real x) {
  return x > Real(0) ? x : static_cast<Real>(std::expm1(static_cast<double>(x)));
}

template <class Real>
inline Real elu_grad(Real x) {
  return x > Real(0) ? Real(1) : static_cast<Real>(std::exp(static_cast<double>(x)));
}

// ---- channel contraction: y[f,t] = sum_c F[f,c] * x[c,t] -------------------

template <class Real>
void conv_contract_fwd(const Tensor<Real>& x, const Tensor<Real>& f, Tensor<Real>& y) {
  const std::size_t C = x.dim(0), T = x.dim(1), F = f.dim(0);
  for (std::size_t k = 0; k < F; ++k)
    for (std::size_t c = 0; c < C; ++c) {
      const Real w = f.at2(k, c);
      const Real* xr = &x.data[c * T];
      Real* yr = &y.data[k * T];
      for (std::size_t t = 0; t < T; ++t) yr[t] += w * xr[t];
    }
}

template <class Real>
void conv_contract_bwd(const Tensor<Real>& x, const Tensor<Real>& f,
                       const Tensor<Real>& gy, Tensor<Real>* gx, Tensor<Real>* gf) {
  const std::size_t C = x.dim(0), T = x.dim(1), F = f.dim(0);
  for (std::size_t k = 0; k < F; ++k)
    for (std::size_t c = 0; c < C; ++c) {
      const Real* gyr = &gy.data[k * T];
      if (gx) {
        const Real w = f.at2(k, c);
        Real* gxr = &gx->data[c * T];
        for (std::size_t t = 0; t < T; ++t) gxr[t] += w * gyr[t];
      }
      if (gf) {
        const Real* xr = &x.data[c * T];
        Real acc = 0;
        for (std::size_t t = 0; t < T; ++t) acc += gyr[t] * xr[t];
        gf->at2(k, c) += acc;
      }
    }
}

// ---- row-wise temporal convolution -----------------------------------------
// y[f,r,t] = sum_p F[f,p] * x[r, t + p - pad_left], zero outside [0,T).
// valid: pad_left = 0, T_out = T - W + 1.  same: pad_left = ceil((W-1)/2), T_out = T.

inline std::size_t same_pad_left(std::size_t width) { return width / 2; }  // == ceil((W-1)/2)

template <class Real>
void conv_rows_fwd(const Tensor<Real>& x, const Tensor<Real>& f, std::size_t pad_left,
                   Tensor<Real>& y) {
  const std::size_t R = x.dim(0), T = x.dim(1);
  const std::size_t F = f.dim(0), W = f.dim(1), To = y.dim(2);
  for (std::size_t k = 0; k < F; ++k)
    for (std::size_t r = 0; r < R; ++r) {
      const Real* xr = &x.data[r * T];
      Real* yr = &y.data[(k * R + r) * To];
      for (std::size_t t = 0; t < To; ++t) {
        Real acc = 0;
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(pad_left);
        const std::size_t p0 = base < 0 ? static_cast<std::size_t>(-base) : 0;
        const std::size_t p1 = std::min(W, static_cast<std::size_t>(
            std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(T) - base)));
        const Real* fw = &f.data[k * W];
        for (std::size_t p = p0; p < p1; ++p) acc += fw[p] * xr[static_cast<std::size_t>(base) + p];
        yr[t] = acc;
      }
    }
}

template <class Real>
void conv_rows_bwd(const Tensor<Real>& x, const Tensor<Real>& f, std::size_t pad_left,
                   const Tensor<Real>& gy, Tensor<Real>* gx, Tensor<Real>* gf) {
  const std::size_t R = x.dim(0), T = x.dim(1);
  const std::size_t F = f.dim(0), W = f.dim(1), To = gy.dim(2);
  for (std::size_t k = 0; k < F; ++k)
    for (std::size_t r = 0; r < R; ++r) {
      const Real* gyr = &gy.data[(k * R + r) * To];
      const Real* xr = &x.data[r * T];
      Real* gxr = gx ? &gx->data[r * T] : nullptr;
      for (std::size_t t = 0; t < To; ++t) {
        const Real g = gyr[t];
        if (g == Real(0)) continue;
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(pad_left);
        const std::size_t p0 = base < 0 ? static_cast<std::size_t>(-base) : 0;
        const std::size_t p1 = std::min(W, static_cast<std::size_t>(
            std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(T) - base)));
        const Real* fw = &f.data[k * W];
        for (std::size_t p = p0; p < p1; ++p) {
          const std::size_t u = static_cast<std::size_t>(base) + p;
          if (gxr) gxr[u] += fw[p] * g;
          if (gf) gf->data[k * W + p] += xr[u] * g;
        }
      }
    }
}

// ---- depthwise convolutions -------------------------------------------------
// Spatial form: x [maps x channels x time], filters [maps x C x channels],
//   y[m*C+c, 0, t] = sum_ch F[m,c,ch] * x[m,ch,t].
// Temporal form: x [maps x 1 x time], filters [maps x C x W], valid,
//   y[m*C+c, 0, t] = sum_p F[m,c,p] * x[m,0,t+p].

template <class Real>
void depthwise_spatial_fwd(const Tensor<Real>& x, const Tensor<Real>& f, Tensor<Real>& y) {
  const std::size_t M = x.dim(0), CH = x.dim(1), T = x.dim(2), C = f.dim(1);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t c = 0; c < C; ++c) {
      Real* yr = &y.data[(m * C + c) * T];
      for (std::size_t ch = 0; ch < CH; ++ch) {
        const Real w = f.at3(m, c, ch);
        const Real* xr = &x.data[(m * CH + ch) * T];
        for (std::size_t t = 0; t < T; ++t) yr[t] += w * xr[t];
      }
    }
}

template <class Real>
void depthwise_spatial_bwd(const Tensor<Real>& x, const Tensor<Real>& f,
                           const Tensor<Real>& gy, Tensor<Real>* gx, Tensor<Real>* gf) {
  const std::size_t M = x.dim(0), CH = x.dim(1), T = x.dim(2), C = f.dim(1);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t c = 0; c < C; ++c) {
      const Real* gyr = &gy.data[(m * C + c) * T];
      for (std::size_t ch = 0; ch < CH; ++ch) {
        if (gx) {
          const Real w = f.at3(m, c, ch);
          Real* gxr = &gx->data[(m * CH + ch) * T];
          for (std::size_t t = 0; t < T; ++t) gxr[t] += w * gyr[t];
        }
        if (gf) {
          const Real* xr = &x.data[(m * CH + ch) * T];
          Real acc = 0;
          for (std::size_t t = 0; t < T; ++t) acc += gyr[t] * xr[t];
          gf->at3(m, c, ch) += acc;
        }
      }
    }
}

template <class Real>
void depthwise_temporal_fwd(const Tensor<Real>& x, const Tensor<Real>& f, Tensor<Real>& y) {
  const std::size_t M = x.dim(0), T = x.dim(2), C = f.dim(1), W = f.dim(2);
  const std::size_t To = T - W + 1;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t c = 0; c < C; ++c) {
      const Real* xr = &x.data[m * T];
      const Real* fw = &f.data[(m * C + c) * W];
      Real* yr = &y.data[(m * C + c) * To];
      for (std::size_t t = 0; t < To; ++t) {
        Real acc = 0;
        for (std::size_t p = 0; p < W; ++p) acc += fw[p] * xr[t + p];
        yr[t] = acc;
      }
    }
}

template <class Real>
void depthwise_temporal_bwd(const Tensor<Real>& x, const Tensor<Real>& f,
                            const Tensor<Real>& gy, Tensor<Real>* gx, Tensor<Real>* gf) {
  const std::size_t M = x.dim(0), T = x.dim(2), C = f.dim(1), W = f.dim(2);
  const std::size_t To = T - W + 1;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t c = 0; c < C; ++c) {
      const Real* xr = &x.data[m * T];
      const Real* fw = &f.data[(m * C + c) * W];
      const Real* gyr = &gy.data[(m * C + c) * To];
      Real* gxr = gx ? &gx->data[m * T] : nullptr;
      Real* gfr = gf ? &gf->data[(m * C + c) * W] : nullptr;
      for (std::size_t t = 0; t < To; ++t) {
        const Real g = gyr[t];
        for (std::size_t p = 0; p < W; ++p) {
          if (gxr) gxr[t + p] += fw[p] * g;
          if (gfr) gfr[p] += xr[t + p] * g;
        }
      }
    }
}

// ---- average pooling with ELU inside the mean -------------------------------
// Rows = product of leading dims; y[r,t] = mean(elu(x[r, tS : (t+1)S])).

template <class Real>
void pool_elu_fwd(const Tensor<Real>& x, std::size_t S, Tensor<Real>& y) {
  const std::size_t T = x.shape.back();
  const std::size_t R = x.size() / T;
  const std::size_t To = T / S;
  const Real inv = Real(1) / static_cast<Real>(S);
  for (std::size_t r = 0; r < R; ++r) {
    const Real* xr = &x.data[r * T];
    Real* yr = &y.data[r * To];
    for (std::size_t t = 0; t < To; ++t) {
      Real acc = 0;
      for (std::size_t u = t * S; u < (t + 1) * S; ++u) acc += elu(xr[u]);
      yr[t] = acc * inv;
    }
  }
}

template <class Real>
void pool_elu_bwd(const Tensor<Real>& x, std::size_t S, const Tensor<Real>& gy,
                  Tensor<Real>& gx) {
  const std::size_t T = x.shape.back();
  const std::size_t R = x.size() / T;
  const std::size_t To = T / S;
  const Real inv = Real(1) / static_cast<Real>(S);
  for (std::size_t r = 0; r < R; ++r) {
    const Real* xr = &x.data[r * T];
    const Real* gyr = &gy.data[r * To];
    Real* gxr = &gx.data[r * T];
    for (std::size_t t = 0; t < To; ++t) {
      const Real g = gyr[t] * inv;
      for (std::size_t u = t * S; u < (t + 1) * S; ++u) gxr[u] += g * elu_grad(xr[u]);
    }
  }
}

// ---- dense layer: x [B x D] (or [D]), W [O x D], b [O] ----------------------

template <class Real>
void linear_fwd(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                Tensor<Real>& y) {
  const std::size_t D = x.shape.back();
  const std::size_t B = x.size() / D;
  const std::size_t O = w.dim(0);
  for (std::size_t i = 0; i < B; ++i) {
    const Real* xr = &x.data[i * D];
    Real* yr = &y.data[i * O];
    for (std::size_t o = 0; o < O; ++o) {
      const Real* wr = &w.data[o * D];
      Real acc = b.data[o];
      for (std::size_t d = 0; d < D; ++d) acc += wr[d] * xr[d];
      yr[o] = acc;
    }
  }
}

template <class Real>
void linear_bwd(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& gy,
                Tensor<Real>* gx, Tensor<Real>* gw, Tensor<Real>* gb) {
  const std::size_t D = x.shape.back();
  const std::size_t B = x.size() / D;
  const std::size_t O = w.dim(0);
  for (std::size_t i = 0; i < B; ++i) {
    const Real* xr = &x.data[i * D];
    const Real* gyr = &gy.data[i * O];
    Real* gxr = gx ? &gx->data[i * D] : nullptr;
    for (std::size_t o = 0; o < O; ++o) {
      const Real g = gyr[o];
      if (g == Real(0)) continue;
      const Real* wr = &w.data[o * D];
      Real* gwr = gw ? &gw->data[o * D] : nullptr;
      for (std::size_t d = 0; d < D; ++d) {
        if (gxr) gxr[d] += wr[d] * g;
        if (gwr) gwr[d] += xr[d] * g;
      }
      if (gb) gb->data[o] += g;
    }
  }
}

// ---- softmax + cross entropy -------------------------------------------------
// logits [B x K] (or [K]); loss = mean over rows of (logsumexp(row) - row[label]).

template <class Real>
double softmax_xent_fwd(const Tensor<Real>& logits, const std::vector<int>& labels) {
  const std::size_t K = logits.shape.back();
  const std::size_t B = logits.size() / K;
  double total = 0;
  for (std::size_t i = 0; i < B; ++i) {
    const Real* row = &logits.data[i * K];
    double mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double lse = 0;
    for (std::size_t k = 0; k < K; ++k) lse += std::exp(static_cast<double>(row[k]) - mx);
    lse = mx + std::log(lse);
    total += lse - static_cast<double>(row[static_cast<std::size_t>(labels[i])]);
  }
  return total / static_cast<double>(B);
}

template <class Real>
void softmax_xent_bwd(const Tensor<Real>& logits, const std::vector<int>& labels,
                      Real groot, Tensor<Real>& glogits) {
  const std::size_t K = logits.shape.back();
  const std::size_t B = logits.size() / K;
  const Real scale = groot / static_cast<Real>(B);
  for (std::size_t i = 0; i < B; ++i) {
    const Real* row = &logits.data[i * K];
    Real* grow = &glogits.data[i * K];
    double mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(static_cast<double>(row[k]) - mx) / z;
      grow[k] += scale * static_cast<Real>(p - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0));
    }
  }
}

}  // namespace clisa::kernels
