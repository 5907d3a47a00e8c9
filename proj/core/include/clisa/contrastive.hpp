#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "clisa/graph.hpp"
#include "clisa/model.hpp"
#include "clisa/normalize.hpp"
#include "clisa/sampler.hpp"

namespace clisa {

// ---- similarity and loss --------------------------------------------------------

/// Cosine similarity. Zero-norm vectors are a numeric error (1e-12 guard).
template <class Real>
double cosine_sim(std::span<const Real> u, std::span<const Real> v) {
  if (u.size() != v.size()) throw dim_error("cosine_sim: length mismatch");
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    nu += static_cast<double>(u[i]) * u[i];
    nv += static_cast<double>(v[i]) * v[i];
  }
  if (nu < 1e-12 * 1e-12 || nv < 1e-12 * 1e-12)
    throw numeric_error("cosine_sim: zero-norm vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

/// Embeddings for one minibatch: rows 0..N-1 subject A, N..2N-1 subject B.
template <class Real>
struct EmbeddingBatch {
  Tensor<Real> z;  // [2N x D]
  double tau = 0.5;

  std::size_t n_trials() const { return z.dim(0) / 2; }
};

/// NT-Xent over plain embeddings (summed over the 2N anchors). The graph op
/// ntxent_from_gram is the training path; this is the reference entry point.
template <class Real>
double nt_xent(const EmbeddingBatch<Real>& batch) {
  const std::size_t n = batch.n_trials();
  if (n < 2) throw config_error("nt_xent: need N >= 2 trials for negatives");
  const std::size_t b = 2 * n;
  const std::size_t d = batch.z.dim(1);
  std::vector<double> sims(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      sims[i * b + j] = cosine_sim(std::span<const Real>(&batch.z.data[i * d], d),
                                   std::span<const Real>(&batch.z.data[j * d], d));
  double loss = 0;
  for (std::size_t a = 0; a < b; ++a) {
    const std::size_t pos = a < n ? a + n : a - n;
    const auto denom = ntxent_denominator(n, a);
    double mx = -1e300;
    for (std::size_t dd : denom) mx = std::max(mx, sims[a * b + dd] / batch.tau);
    double zsum = 0;
    for (std::size_t dd : denom) zsum += std::exp(sims[a * b + dd] / batch.tau - mx);
    loss += (mx + std::log(zsum)) - sims[a * b + pos] / batch.tau;
  }
  return loss;
}

/// Fraction of the 2N anchors whose positive is strictly the most similar
/// among their 2N-1 candidates. Chance level is 1/(2N-1).
template <class Real>
double retrieval_accuracy(const Tensor<Real>& z, std::size_t n_trials) {
  const std::size_t b = 2 * n_trials;
  const std::size_t d = z.dim(1);
  if (n_trials < 2) throw config_error("retrieval_accuracy: need N >= 2");
  std::size_t hits = 0;
  for (std::size_t a = 0; a < b; ++a) {
    const std::size_t pos = a < n_trials ? a + n_trials : a - n_trials;
    const double ps = cosine_sim(std::span<const Real>(&z.data[a * d], d),
                                 std::span<const Real>(&z.data[pos * d], d));
    bool top = true;
    for (std::size_t c : ntxent_denominator(n_trials, a)) {
      if (c == pos) continue;
      const double s = cosine_sim(std::span<const Real>(&z.data[a * d], d),
                                  std::span<const Real>(&z.data[c * d], d));
      if (s >= ps) {
        top = false;
        break;
      }
    }
    if (top) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

// ---- optimizer --------------------------------------------------------------------

/// Bias-corrected Adam with decoupled weight decay. Moments are kept in double
/// in both precision modes.
template <class Real>
struct AdamState {
  std::vector<Tensor<double>> m, v;
  std::size_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;

  void init(const std::vector<Tensor<Real>*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.emplace_back(p->shape);
      v.emplace_back(p->shape);
    }
    step = 0;
  }
};

/// One update. Returns false (parameters untouched, step not counted) if any
/// gradient is non-finite.
template <class Real>
bool adam_step(AdamState<Real>& st, const std::vector<Tensor<Real>*>& params,
               const std::vector<const Tensor<Real>*>& grads, double lr) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw usage_error("adam_step: parameter/gradient count mismatch");
  for (const auto* g : grads)
    if (!g->all_finite()) return false;
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * gj;
      v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * gj * gj;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + st.eps);
      double pj = static_cast<double>(p[j]) - lr * update;
      pj *= 1.0 - lr * st.weight_decay;
      p[j] = static_cast<Real>(pj);
    }
  }
  return true;
}

// ---- learning-rate schedule ---------------------------------------------------------

/// Cosine annealing within one cycle: t in [0, cycle_len] maps lr_max -> lr_min.
inline double cosine_lr(double t, double cycle_len, double lr_max, double lr_min) {
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t / cycle_len));
}

/// The epoch budget split into four cycles (three warm restarts), 12/12/25/51
/// proportions, expressed in optimizer steps.
struct WarmRestartSchedule {
  std::vector<std::size_t> cycle_steps;
  double lr_max = 7e-4;
  double lr_min = 0.0;
};

inline WarmRestartSchedule make_warm_restart_schedule(std::size_t total_epochs,
                                                      std::size_t steps_per_epoch,
                                                      double lr_max, double lr_min = 0.0) {
  const double fracs[4] = {0.12, 0.12, 0.25, 0.51};
  std::vector<std::size_t> epochs(4);
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    epochs[i] = std::max<std::size_t>(1, static_cast<std::size_t>(
        std::llround(fracs[i] * static_cast<double>(total_epochs))));
    used += epochs[i];
  }
  epochs[3] = total_epochs > used ? total_epochs - used : 1;
  WarmRestartSchedule s;
  s.lr_max = lr_max;
  s.lr_min = lr_min;
  for (auto e : epochs) s.cycle_steps.push_back(std::max<std::size_t>(1, e * steps_per_epoch));
  return s;
}

/// lr for a global step index; each cycle restarts at lr_max. Steps past the
/// final cycle stay at lr_min.
inline double cosine_warm_restart_lr(std::size_t step, const WarmRestartSchedule& s) {
  std::size_t start = 0;
  for (std::size_t len : s.cycle_steps) {
    if (step < start + len)
      return cosine_lr(static_cast<double>(step - start), static_cast<double>(len),
                       s.lr_max, s.lr_min);
    start += len;
  }
  return s.lr_min;
}

// ---- minibatch graphs and plain embeddings ---------------------------------------

namespace detail {

/// Graph-side stratified normalization across one subject's sample nodes:
/// each (map) row is z-scored over the concatenation of the samples.
template <class Real>
std::vector<typename Graph<Real>::Id> normalize_group_nodes(
    Graph<Real>& g, const std::vector<typename Graph<Real>::Id>& xs) {
  using Id = typename Graph<Real>::Id;
  const auto shape = g.value(xs[0]).shape;
  const std::size_t last = shape.back();
  const std::size_t rows = g.value(xs[0]).size() / last;
  std::vector<Id> flat;
  flat.reserve(xs.size());
  for (Id id : xs) flat.push_back(g.reshape(id, {rows, last}));
  const Id joined = g.concat_last(flat);
  const Id normed = g.znorm_rows(joined);
  auto parts = g.split_last(normed, xs.size());
  std::vector<Id> out;
  out.reserve(parts.size());
  for (Id id : parts) out.push_back(g.reshape(id, shape));
  return out;
}

}  // namespace detail

/// Full training graph for one (already input-normalized) minibatch:
/// encoder -> pool -> [stratified hook] -> depthwise spatial -> depthwise
/// temporal -> [stratified hook] -> flatten -> cosine NT-Xent. Returns the
/// scalar loss node.
template <class Real>
typename Graph<Real>::Id contrastive_loss_graph(Graph<Real>& g, const Minibatch<Real>& mb,
                                                const ModelNodes<Real>& nodes,
                                                const Hyperparams& hp) {
  using Id = typename Graph<Real>::Id;
  std::vector<Id> embeddings;
  embeddings.reserve(2 * mb.n_trials());
  for (const auto* side : {&mb.samples_a, &mb.samples_b}) {
    std::vector<Id> pooled;
    pooled.reserve(side->size());
    for (const auto& x : *side) {
      const Id h = encoder_forward(g, g.input(x), nodes);
      pooled.push_back(projector_pool(g, h, hp.pool));
    }
    pooled = detail::normalize_group_nodes(g, pooled);
    std::vector<Id> zed;
    zed.reserve(pooled.size());
    for (Id p : pooled) zed.push_back(projector_temporal(g, projector_spatial(g, p, nodes), nodes));
    zed = detail::normalize_group_nodes(g, zed);
    for (Id z : zed) embeddings.push_back(g.reshape(z, {g.value(z).size()}));
  }
  const Id stacked = g.stack_rows(embeddings);
  const Id unit = g.l2_normalize_rows(stacked);
  const Id sims = g.gram(unit);
  return g.ntxent_from_gram(sims, static_cast<Real>(hp.tau), mb.n_trials());
}

/// Plain-tensor version of the training transform, producing the [2N x D]
/// embedding matrix (used for validation retrieval and diagnostics).
template <class Real>
Tensor<Real> embed_minibatch(const Minibatch<Real>& mb, const ModelParams<Real>& params,
                             const Hyperparams& hp) {
  std::vector<Tensor<Real>> rows;
  rows.reserve(2 * mb.n_trials());
  for (const auto* side : {&mb.samples_a, &mb.samples_b}) {
    std::vector<Tensor<Real>> pooled;
    for (const auto& x : *side) {
      Tensor<Real> h = encoder_forward(x, params.encoder);
      auto oshape = h.shape;
      oshape.back() = h.shape.back() / hp.pool;
      Tensor<Real> p(oshape);
      kernels::pool_elu_fwd(h, hp.pool, p);
      pooled.push_back(std::move(p));
    }
    {
      std::vector<Tensor<Real>*> group;
      for (auto& t : pooled) group.push_back(&t);
      stratified_normalize_group(group);
    }
    std::vector<Tensor<Real>> zs;
    for (auto& p : pooled) {
      const std::size_t k2 = p.dim(0), tp = p.dim(2);
      const std::size_t c = params.projector.dw_spatial.dim(1);
      const std::size_t p2 = params.projector.dw_temporal.dim(2);
      Tensor<Real> gm({c * k2, 1, tp});
      kernels::depthwise_spatial_fwd(p, params.projector.dw_spatial, gm);
      for (auto& v : gm.data) v = kernels::elu(v);
      Tensor<Real> z3({c * c * k2, 1, tp - p2 + 1});
      kernels::depthwise_temporal_fwd(gm, params.projector.dw_temporal, z3);
      for (auto& v : z3.data) v = kernels::elu(v);
      zs.push_back(std::move(z3));
    }
    {
      std::vector<Tensor<Real>*> group;
      for (auto& t : zs) group.push_back(&t);
      stratified_normalize_group(group);
    }
    for (auto& z : zs) {
      const std::size_t flat = z.size();
      rows.push_back(Tensor<Real>({flat}, std::move(z.data)));
    }
  }
  const std::size_t d = rows[0].size();
  Tensor<Real> out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].data.begin(), rows[r].data.end(), out.data.begin() + r * d);
  return out;
}

// ---- training loop ------------------------------------------------------------------

struct TrainEpoch {
  std::size_t epoch = 0;
  double mean_loss = 0;
  double val_retrieval = 0;
  double lr_last = 0;
};

struct TrainReport {
  std::vector<TrainEpoch> epochs;
  std::size_t best_epoch = 0;
  double best_val = -1.0;
  std::string stop_reason;
  std::size_t skipped_steps = 0;
};

inline void write_train_report_csv(const TrainReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw format_error("train report: cannot write " + path);
  os << "epoch,mean_loss,val_retrieval_acc,lr\n";
  char buf[160];
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.mean_loss,
                  e.val_retrieval, e.lr_last);
    os << buf;
  }
}

/// The contrastive training phase. Enumerates all subject pairs per epoch
/// (minus `n_val_pairs` held out for the retrieval validation signal), one
/// Adam step per pair, cosine warm-restart schedule, early stopping on the
/// validation retrieval accuracy. Returns the best-validation parameters.
/// With n_val_pairs = 0, the retrieval metric is computed on training pairs.
template <class Real>
std::pair<ModelParams<Real>, TrainReport> train_contrastive(
    const std::vector<Recording<Real>>& recordings, const Hyperparams& hp,
    std::uint64_t seed, std::size_t n_val_pairs = 1) {
  hp.validate();
  if (n_val_pairs > 0 && recordings.size() < 3)
    throw config_error("train_contrastive: need >= 3 subjects to hold out a validation pair");
  if (recordings.size() < 2) throw config_error("train_contrastive: need >= 2 subjects");
  const double fs = recordings[0].sampling_rate;
  const std::size_t m = recordings[0].channels();
  for (const auto& r : recordings) {
    if (r.channels() != m || r.sampling_rate != fs)
      throw data_error("train_contrastive: recordings disagree on channels or rate");
  }
  const auto sample_len = static_cast<std::size_t>(std::llround(hp.sample_len_s * fs));

  auto all_pairs = enumerate_subject_pairs(recordings.size(), derive_seed(seed, "pairs"));
  if (n_val_pairs >= all_pairs.size())
    throw config_error("train_contrastive: validation pairs exhaust the training pairs");
  std::vector<std::pair<std::size_t, std::size_t>> val_pairs(
      all_pairs.end() - static_cast<std::ptrdiff_t>(n_val_pairs), all_pairs.end());
  all_pairs.resize(all_pairs.size() - n_val_pairs);
  if (val_pairs.empty()) val_pairs = all_pairs;  // in-sample metric fallback

  ModelParams<Real> params = init_params<Real>(hp, m, seed);
  ModelParams<Real> best = params;

  std::vector<Tensor<Real>*> ptensors = {&params.encoder.spatial, &params.encoder.temporal,
                                         &params.projector.dw_spatial,
                                         &params.projector.dw_temporal};
  AdamState<Real> opt;
  opt.weight_decay = hp.weight_decay;
  opt.init(ptensors);
  const auto schedule =
      make_warm_restart_schedule(hp.epochs, all_pairs.size(), hp.lr, 0.0);

  TrainReport report;
  std::size_t step = 0;
  for (std::size_t e = 1; e <= hp.epochs; ++e) {
    auto order = all_pairs;
    Rng order_rng(derive_seed(seed, "epoch-order", e));
    order_rng.shuffle(order);
    Rng offset_rng(derive_seed(seed, "offsets", e));

    double loss_sum = 0;
    double lr = hp.lr;
    std::size_t steps_this_epoch = 0;
    bool diverged = false;
    for (auto [a, b] : order) {
      auto mb = draw_minibatch(recordings[a], recordings[b], sample_len, offset_rng);
      stratified_normalize(mb);
      Graph<Real> g;
      const auto nodes = insert_params(g, params);
      const auto root = contrastive_loss_graph(g, mb, nodes, hp);
      const double loss = static_cast<double>(g.value(root)[0]);
      if (!std::isfinite(loss)) {
        diverged = true;
        break;
      }
      g.backward(root);
      lr = cosine_warm_restart_lr(step, schedule);
      const std::vector<const Tensor<Real>*> grads = {
          &g.grad(nodes.spatial), &g.grad(nodes.temporal), &g.grad(nodes.dw_spatial),
          &g.grad(nodes.dw_temporal)};
      if (!adam_step(opt, ptensors, grads, lr)) ++report.skipped_steps;
      ++step;
      loss_sum += loss;
      ++steps_this_epoch;
    }
    if (diverged) {
      report.stop_reason = "diverged";
      break;
    }

    Rng val_rng(derive_seed(seed, "val-offsets", e));
    double val_sum = 0;
    for (auto [a, b] : val_pairs) {
      auto mb = draw_minibatch(recordings[a], recordings[b], sample_len, val_rng);
      stratified_normalize(mb);
      const auto z = embed_minibatch(mb, params, hp);
      val_sum += retrieval_accuracy(z, mb.n_trials());
    }
    const double val = val_sum / static_cast<double>(val_pairs.size());

    report.epochs.push_back({e, loss_sum / static_cast<double>(std::max<std::size_t>(1, steps_this_epoch)),
                             val, lr});
    if (val > report.best_val) {
      report.best_val = val;
      report.best_epoch = e;
      best = params;
    }
    if (e - report.best_epoch > hp.patience) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  return {std::move(best), std::move(report)};
}

}  // namespace clisa
