#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clisa/contrastive.hpp"
#include "clisa/features.hpp"
#include "clisa/graph.hpp"
#include "clisa/normalize.hpp"

namespace clisa {

/// Three-layer MLP: input -> hidden -> hidden -> classes, ReLU between layers.
template <class Real>
struct MlpParams {
  Tensor<Real> w1, b1, w2, b2, w3, b3;

  std::size_t input_dim() const { return w1.dim(1); }
  std::size_t n_classes() const { return w3.dim(0); }

  std::vector<Tensor<Real>*> tensors() {
    return {&w1, &b1, &w2, &b2, &w3, &b3};
  }
  std::vector<const Tensor<Real>*> tensors() const {
    return {&w1, &b1, &w2, &b2, &w3, &b3};
  }
};

template <class Real>
MlpParams<Real> init_mlp(std::size_t input_dim, std::size_t hidden, std::size_t n_classes,
                         std::uint64_t seed) {
  Rng rng(derive_seed(seed, "mlp-init"));
  auto fill = [&](Tensor<Real>& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<Real>(rng.uniform(-bound, bound));
  };
  MlpParams<Real> p;
  p.w1 = Tensor<Real>({hidden, input_dim});
  fill(p.w1, input_dim);
  p.b1 = Tensor<Real>({hidden});
  p.w2 = Tensor<Real>({hidden, hidden});
  fill(p.w2, hidden);
  p.b2 = Tensor<Real>({hidden});
  p.w3 = Tensor<Real>({n_classes, hidden});
  fill(p.w3, hidden);
  p.b3 = Tensor<Real>({n_classes});
  return p;
}

/// Logits for a batch [B x D] (plain path).
template <class Real>
Tensor<Real> mlp_logits(const MlpParams<Real>& p, const Tensor<Real>& x) {
  auto dense = [](const Tensor<Real>& in, const Tensor<Real>& w, const Tensor<Real>& b) {
    auto shape = in.shape;
    shape.back() = w.dim(0);
    Tensor<Real> out(shape);
    kernels::linear_fwd(in, w, b, out);
    return out;
  };
  Tensor<Real> h1 = dense(x, p.w1, p.b1);
  for (auto& v : h1.data) v = v > Real(0) ? v : Real(0);
  Tensor<Real> h2 = dense(h1, p.w2, p.b2);
  for (auto& v : h2.data) v = v > Real(0) ? v : Real(0);
  return dense(h2, p.w3, p.b3);
}

/// Row-wise softmax in double.
template <class Real>
std::vector<std::vector<double>> softmax_rows(const Tensor<Real>& logits) {
  const std::size_t k = logits.shape.back();
  const std::size_t b = logits.size() / k;
  std::vector<std::vector<double>> out(b, std::vector<double>(k));
  for (std::size_t i = 0; i < b; ++i) {
    double mx = logits[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[i * k + j]));
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) {
      out[i][j] = std::exp(static_cast<double>(logits[i * k + j]) - mx);
      z += out[i][j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i][j] /= z;
  }
  return out;
}

/// Argmax with ties broken toward the lower class index.
inline int argmax_class(const std::vector<double>& posterior) {
  int best = 0;
  for (std::size_t j = 1; j < posterior.size(); ++j)
    if (posterior[j] > posterior[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  return best;
}

template <class Real>
struct Prediction {
  std::vector<int> labels;
  std::vector<std::vector<double>> posteriors;
};

template <class Real>
Prediction<Real> predict_labels(const MlpParams<Real>& p,
                                const std::vector<std::vector<Real>>& features) {
  if (features.empty()) return {};
  const std::size_t d = p.input_dim();
  for (const auto& f : features)
    if (f.size() != d) throw signal::param_error("predict_labels: feature dimension mismatch");
  Tensor<Real> x({features.size(), d});
  for (std::size_t i = 0; i < features.size(); ++i)
    std::copy(features[i].begin(), features[i].end(), x.data.begin() + i * d);
  Prediction<Real> out;
  out.posteriors = softmax_rows(mlp_logits(p, x));
  for (const auto& row : out.posteriors) out.labels.push_back(argmax_class(row));
  return out;
}

// ---- training -------------------------------------------------------------------------

struct ClassifierConfig {
  std::size_t hidden = 30;
  double lr = 5e-4;
  std::size_t batch = 256;
  std::size_t epochs = 100;
  std::size_t patience = 30;
  std::vector<double> weight_decay_grid = {0.005, 0.011, 0.025, 0.056, 0.125};
  double inner_val_fraction = 0.2;  // trailing fraction of (subject, trial) groups
};

struct ClassifierReport {
  double chosen_weight_decay = 0;
  std::size_t best_epoch = 0;
  double inner_val_accuracy = 0;
  std::vector<std::pair<double, double>> grid;  // (weight decay, val accuracy)
};

namespace detail {

template <class Real>
double accuracy_on(const MlpParams<Real>& p, const std::vector<const FeatureRow<Real>*>& rows) {
  if (rows.empty()) return 0;
  std::vector<std::vector<Real>> feats;
  feats.reserve(rows.size());
  for (const auto* r : rows) feats.push_back(r->values);
  const auto pred = predict_labels(p, feats);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (pred.labels[i] == rows[i]->label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

/// One Adam-trained fit over `rows` for up to `epochs`, early stopped on
/// `val` accuracy when val is non-empty. Returns (params, best_epoch, best_acc).
template <class Real>
std::tuple<MlpParams<Real>, std::size_t, double> fit_mlp(
    const std::vector<const FeatureRow<Real>*>& rows,
    const std::vector<const FeatureRow<Real>*>& val, std::size_t n_classes,
    const ClassifierConfig& cfg, double weight_decay, std::size_t max_epochs,
    std::uint64_t seed) {
  const std::size_t d = rows[0]->values.size();
  MlpParams<Real> params = init_mlp<Real>(d, cfg.hidden, n_classes, seed);
  MlpParams<Real> best = params;
  AdamState<Real> opt;
  opt.weight_decay = weight_decay;
  auto ptrs = params.tensors();
  opt.init(ptrs);

  std::size_t best_epoch = 0;
  double best_acc = -1.0;
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t e = 1; e <= max_epochs; ++e) {
    Rng shuffle_rng(derive_seed(seed, "clf-epoch", e));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      Tensor<Real> x({stop - start, d});
      std::vector<int> labels(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        std::copy(rows[order[i]]->values.begin(), rows[order[i]]->values.end(),
                  x.data.begin() + (i - start) * d);
        labels[i - start] = rows[order[i]]->label;
      }
      Graph<Real> g;
      auto w1 = g.param(params.w1), b1 = g.param(params.b1);
      auto w2 = g.param(params.w2), b2 = g.param(params.b2);
      auto w3 = g.param(params.w3), b3 = g.param(params.b3);
      auto logits = g.linear(g.relu(g.linear(g.relu(g.linear(g.input(x), w1, b1)), w2, b2)),
                             w3, b3);
      auto root = g.softmax_cross_entropy(logits, labels);
      g.backward(root);
      const std::vector<const Tensor<Real>*> grads = {&g.grad(w1), &g.grad(b1), &g.grad(w2),
                                                      &g.grad(b2), &g.grad(w3), &g.grad(b3)};
      adam_step(opt, ptrs, grads, cfg.lr);
    }
    if (!val.empty()) {
      const double acc = accuracy_on(params, val);
      if (acc > best_acc) {
        best_acc = acc;
        best_epoch = e;
        best = params;
      }
      if (e - best_epoch > cfg.patience) break;
    } else {
      best = params;
      best_epoch = e;
    }
  }
  return {std::move(best), best_epoch, best_acc};
}

}  // namespace detail

/// Minibatch cross-entropy training with the weight decay chosen over the
/// grid by inner validation on the trailing fraction of (subject, trial)
/// groups, then a final fit on all rows for the winning epoch budget.
/// Deterministic under seed. Features must already be normalized.
template <class Real>
std::pair<MlpParams<Real>, ClassifierReport> train_classifier(
    const std::vector<FeatureRow<Real>>& rows, std::size_t n_classes,
    const ClassifierConfig& cfg, std::uint64_t seed) {
  if (rows.empty()) throw config_error("train_classifier: no training rows");
  {
    const int first = rows[0].label;
    bool multi = false;
    for (const auto& r : rows) multi = multi || r.label != first;
    if (!multi) throw config_error("train_classifier: single-class training set");
  }

  // inner split: trailing fraction of distinct (subject, trial) groups
  std::vector<std::pair<std::string, int>> groups;
  for (const auto& r : rows) {
    const std::pair<std::string, int> key{r.subject, r.trial_id};
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  const auto n_val_groups = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.inner_val_fraction *
                                               static_cast<double>(groups.size()))));
  std::vector<std::pair<std::string, int>> val_groups(
      groups.end() - static_cast<std::ptrdiff_t>(std::min(n_val_groups, groups.size() - 1)),
      groups.end());

  std::vector<const FeatureRow<Real>*> train_rows, val_rows, all_rows;
  for (const auto& r : rows) {
    all_rows.push_back(&r);
    const std::pair<std::string, int> key{r.subject, r.trial_id};
    if (std::find(val_groups.begin(), val_groups.end(), key) != val_groups.end())
      val_rows.push_back(&r);
    else
      train_rows.push_back(&r);
  }

  ClassifierReport report;
  double best_wd = cfg.weight_decay_grid.empty() ? 0.0 : cfg.weight_decay_grid[0];
  std::size_t best_epochs = cfg.epochs;
  double best_acc = -1.0;
  if (cfg.weight_decay_grid.size() > 1 && !val_rows.empty()) {
    for (double wd : cfg.weight_decay_grid) {
      auto [params, epoch, acc] =
          detail::fit_mlp(train_rows, val_rows, n_classes, cfg, wd, cfg.epochs, seed);
      report.grid.emplace_back(wd, acc);
      if (acc > best_acc) {
        best_acc = acc;
        best_wd = wd;
        best_epochs = std::max<std::size_t>(1, epoch);
      }
    }
  } else if (!cfg.weight_decay_grid.empty()) {
    best_wd = cfg.weight_decay_grid[0];
  }

  report.chosen_weight_decay = best_wd;
  report.best_epoch = best_epochs;
  report.inner_val_accuracy = best_acc;

  // final fit on everything for the winning epoch budget
  auto [params, epoch, acc] = detail::fit_mlp(all_rows, std::vector<const FeatureRow<Real>*>{},
                                              n_classes, cfg, best_wd, best_epochs, seed);
  (void)epoch;
  (void)acc;
  return {std::move(params), std::move(report)};
}

// ---- classifier checkpoint ---------------------------------------------------------
// magic 'CLSM', u16 version, u32 {D, hidden, classes}, tensors as f32.

template <class Real>
void save_classifier(const MlpParams<Real>& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw format_error("classifier: cannot write " + path);
  os.write("CLSM", 4);
  detail::put_u16(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(p.input_dim()));
  detail::put_u32(os, static_cast<std::uint32_t>(p.w1.dim(0)));
  detail::put_u32(os, static_cast<std::uint32_t>(p.n_classes()));
  for (const auto* t : p.tensors())
    for (Real v : t->data) detail::put_f32(os, static_cast<float>(v));
  if (!os) throw format_error("classifier: write failure for " + path);
}

template <class Real>
MlpParams<Real> load_classifier(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("classifier: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CLSM", 4) != 0)
    throw format_error("classifier: bad magic in " + path);
  if (detail::get_u16(is) != 1) throw format_error("classifier: unsupported version");
  const std::size_t d = detail::get_u32(is);
  const std::size_t hidden = detail::get_u32(is);
  const std::size_t classes = detail::get_u32(is);
  MlpParams<Real> p;
  p.w1 = Tensor<Real>({hidden, d});
  p.b1 = Tensor<Real>({hidden});
  p.w2 = Tensor<Real>({hidden, hidden});
  p.b2 = Tensor<Real>({hidden});
  p.w3 = Tensor<Real>({classes, hidden});
  p.b3 = Tensor<Real>({classes});
  for (auto* t : p.tensors())
    for (auto& v : t->data) v = static_cast<Real>(detail::get_f32(is));
  return p;
}

}  // namespace clisa
