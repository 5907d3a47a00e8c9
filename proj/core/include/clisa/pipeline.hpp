#pragma once

#include <future>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "clisa/classifier.hpp"
#include "clisa/contrastive.hpp"
#include "clisa/features.hpp"
#include "clisa/metrics.hpp"
#include "clisa/splits.hpp"

#include "json.hpp"

namespace clisa {

enum class Method { clisa, raw_de, random_encoder };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::clisa: return "clisa";
    case Method::raw_de: return "raw_de";
    default: return "random_encoder";
  }
}

struct ProtocolOptions {
  Hyperparams hp;
  ClassifierConfig clf;
  double predict_window_s = 1.0;
  double lds_q = 0.1;
  double adapt_eta = 0.99;
  Method method = Method::clisa;
  std::size_t jobs = 1;
  std::size_t n_val_pairs = 1;
  std::size_t contrastive_subject_limit = 0;  // 0 = use all training subjects
  bool trial_majority_vote = false;  // collapse to one voted prediction per trial
};

struct FoldOutcome {
  std::size_t fold_index = 0;
  double accuracy = 0;  // fraction
  std::size_t n_test = 0;
  std::vector<std::vector<std::size_t>> confusion_counts;
  std::vector<double> scores;  // positive-class posterior (binary)
  std::vector<int> score_labels;
  double contrastive_best_val = 0;
  std::size_t contrastive_best_epoch = 0;
  double chosen_weight_decay = 0;
  std::string error;
};

struct EvalReport {
  std::string protocol;
  std::string method;
  std::size_t n_classes = 0;
  std::vector<FoldOutcome> folds;
  double mean_accuracy_pct = 0;
  double std_accuracy_pct = 0;
  std::vector<std::vector<double>> confusion_pct;
  std::vector<RocPoint> roc;
  double auc = 0;
  bool has_roc = false;
  std::vector<int> train_stimuli, test_stimuli;  // generalize echo

  bool all_folds_ok() const {
    for (const auto& f : folds)
      if (!f.error.empty()) return false;
    return !folds.empty();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["protocol"] = protocol;
    j["method"] = method;
    j["n_classes"] = n_classes;
    j["mean_accuracy_pct"] = mean_accuracy_pct;
    j["std_accuracy_pct"] = std_accuracy_pct;
    j["folds"] = nlohmann::json::array();
    for (const auto& f : folds) {
      nlohmann::json jf;
      jf["fold"] = f.fold_index;
      jf["accuracy_pct"] = 100.0 * f.accuracy;
      jf["n_test"] = f.n_test;
      jf["contrastive_best_val"] = f.contrastive_best_val;
      jf["contrastive_best_epoch"] = f.contrastive_best_epoch;
      jf["chosen_weight_decay"] = f.chosen_weight_decay;
      if (!f.error.empty()) jf["error"] = f.error;
      j["folds"].push_back(jf);
    }
    j["confusion_pct"] = confusion_pct;
    if (has_roc) {
      j["auc"] = auc;
      auto points = nlohmann::json::array();
      for (const auto& p : roc) points.push_back({p.fpr, p.tpr});
      j["roc"] = points;
    }
    if (!train_stimuli.empty()) {
      j["train_stimuli"] = train_stimuli;
      j["test_stimuli"] = test_stimuli;
    }
    return j;
  }
};

namespace detail {

template <class Real>
std::vector<Recording<Real>> select_subjects(const std::vector<Recording<Real>>& recs,
                                             const std::vector<std::string>& ids) {
  std::vector<Recording<Real>> out;
  for (const auto& id : ids) {
    bool found = false;
    for (const auto& r : recs)
      if (r.subject_id == id) {
        out.push_back(r);
        found = true;
        break;
      }
    if (!found) throw data_error("protocol: unknown subject " + id);
  }
  return out;
}

template <class Real>
std::vector<Recording<Real>> filter_stimuli(const std::vector<Recording<Real>>& recs,
                                            const std::vector<int>& keep) {
  if (keep.empty()) return recs;
  std::vector<Recording<Real>> out;
  for (const auto& r : recs) {
    Recording<Real> c;
    c.subject_id = r.subject_id;
    c.sampling_rate = r.sampling_rate;
    c.channel_names = r.channel_names;
    for (const auto& t : r.trials)
      if (std::find(keep.begin(), keep.end(), t.stimulus_id) != keep.end())
        c.trials.push_back(t);
    out.push_back(std::move(c));
  }
  return out;
}

inline std::size_t count_classes(const std::vector<int>& labels) {
  int mx = 0;
  for (int v : labels) mx = std::max(mx, v);
  return static_cast<std::size_t>(mx) + 1;
}

}  // namespace detail

/// One fold of the cross-subject protocol: contrastive-train on the training
/// subjects (CLISA), freeze the encoder, extract per-window DE features for
/// everyone, train the classifier on the training subjects, then stream the
/// test subjects through adaptive normalization and classify sample by sample.
template <class Real>
FoldOutcome run_fold(const std::vector<Recording<Real>>& recs, const ProtocolOptions& opt,
                     const SplitPlan& plan, std::size_t fold_index, std::uint64_t seed,
                     std::size_t n_classes) {
  FoldOutcome out;
  out.fold_index = fold_index;
  const auto& fold = plan.folds.at(fold_index);
  const bool generalize = plan.spec.protocol == Protocol::generalize;

  auto train_recs = detail::select_subjects(recs, fold.train_subjects);
  auto test_recs = detail::select_subjects(recs, fold.test_subjects);
  if (generalize) {
    train_recs = detail::filter_stimuli(train_recs, plan.train_stimuli);
    test_recs = detail::filter_stimuli(test_recs, plan.test_stimuli);
  }

  // ---- contrastive phase -------------------------------------------------------
  std::optional<ModelParams<Real>> model;
  if (opt.method != Method::raw_de) {
    if (opt.method == Method::random_encoder || opt.contrastive_subject_limit == 1) {
      model = init_params<Real>(opt.hp, train_recs[0].channels(),
                                derive_seed(seed, "random-encoder"));
    } else {
      auto contrastive_recs = train_recs;
      if (opt.contrastive_subject_limit > 0 &&
          opt.contrastive_subject_limit < contrastive_recs.size()) {
        std::vector<std::size_t> order(contrastive_recs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(seed, "ablation-subset", fold_index));
        rng.shuffle(order);
        std::vector<Recording<Real>> subset;
        for (std::size_t i = 0; i < opt.contrastive_subject_limit; ++i)
          subset.push_back(contrastive_recs[order[i]]);
        contrastive_recs = std::move(subset);
      }
      const std::size_t n_val =
          contrastive_recs.size() >= 3 ? opt.n_val_pairs : 0;
      auto [params, report] =
          train_contrastive(contrastive_recs, opt.hp, derive_seed(seed, "contrastive"), n_val);
      out.contrastive_best_val = report.best_val;
      out.contrastive_best_epoch = report.best_epoch;
      model = std::move(params);
    }
  }

  // ---- feature extraction --------------------------------------------------------
  auto extract = [&](const Recording<Real>& rec) {
    return extract_features<Real>(rec, model ? &model->encoder : nullptr,
                                  model ? FeatureKind::trained : FeatureKind::raw,
                                  opt.predict_window_s, opt.lds_q, nullptr);
  };

  std::vector<FeatureRow<Real>> train_rows;
  for (const auto& r : train_recs) {
    auto rows = extract(r);
    train_rows.insert(train_rows.end(), rows.begin(), rows.end());
  }
  if (train_rows.empty()) throw data_error("protocol: no training features");

  // ---- classifier on z-scored training features ----------------------------------
  std::vector<std::vector<double>> table;
  table.reserve(train_rows.size());
  for (const auto& r : train_rows)
    table.emplace_back(r.values.begin(), r.values.end());
  std::vector<double> mu, var;
  column_stats(table, mu, var);
  auto normalize_row = [&](const std::vector<Real>& v) {
    std::vector<Real> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      out[i] = static_cast<Real>((static_cast<double>(v[i]) - mu[i]) /
                                 std::sqrt(var[i] + kNormEps));
    return out;
  };
  for (auto& r : train_rows) r.values = normalize_row(r.values);

  auto [clf, clf_report] =
      train_classifier(train_rows, n_classes, opt.clf, derive_seed(seed, "classifier"));
  out.chosen_weight_decay = clf_report.chosen_weight_decay;

  // ---- test subjects: adaptive normalization + prediction --------------------------
  std::vector<int> labels, predictions;
  for (const auto& rec : test_recs) {
    auto rows = extract(rec);
    AdaptiveNormState state(mu, var, opt.adapt_eta);  // reset per subject
    std::map<int, std::vector<std::size_t>> votes;  // trial -> class counts
    std::map<int, std::pair<double, int>> trial_score;  // trial -> (sum p1, label)
    for (const auto& row : rows) {
      const auto normed =
          adaptive_normalize(state, std::span<const Real>(row.values.data(), row.values.size()));
      const auto pred = predict_labels(clf, std::vector<std::vector<Real>>{normed});
      if (opt.trial_majority_vote) {
        auto& counts = votes[row.trial_id];
        counts.resize(n_classes, 0);
        ++counts[static_cast<std::size_t>(pred.labels[0])];
        auto& ts = trial_score[row.trial_id];
        ts.first += n_classes == 2 ? pred.posteriors[0][1] : 0.0;
        ts.second = row.label;
      } else {
        labels.push_back(row.label);
        predictions.push_back(pred.labels[0]);
        if (n_classes == 2) {
          out.scores.push_back(pred.posteriors[0][1]);
          out.score_labels.push_back(row.label);
        }
      }
    }
    if (opt.trial_majority_vote) {
      for (const auto& [trial, counts] : votes) {
        int best = 0;
        for (std::size_t k = 1; k < counts.size(); ++k)
          if (counts[k] > counts[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
        const auto& ts = trial_score.at(trial);
        labels.push_back(ts.second);
        predictions.push_back(best);
        if (n_classes == 2) {
          std::size_t n_votes = 0;
          for (auto c : counts) n_votes += c;
          out.scores.push_back(ts.first / static_cast<double>(n_votes));
          out.score_labels.push_back(ts.second);
        }
      }
    }
  }
  if (labels.empty()) throw data_error("protocol: no test samples");

  out.n_test = labels.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == predictions[i]) ++hits;
  out.accuracy = static_cast<double>(hits) / static_cast<double>(labels.size());
  out.confusion_counts = confusion_counts(labels, predictions, n_classes);
  return out;
}

/// Full protocol: every fold, optionally `jobs` folds in flight, aggregation
/// deterministic by fold index regardless of completion order.
template <class Real>
EvalReport run_protocol(const std::vector<Recording<Real>>& recs, const ProtocolOptions& opt,
                        const SplitPlan& plan, std::uint64_t seed) {
  plan.validate();
  std::vector<int> all_labels;
  for (const auto& r : recs)
    for (const auto& t : r.trials) all_labels.push_back(t.label);
  const std::size_t n_classes = detail::count_classes(all_labels);
  if (n_classes < 2) throw config_error("run_protocol: need at least two classes");

  EvalReport report;
  report.protocol = plan.spec.protocol == Protocol::kfold
                        ? "kfold"
                        : (plan.spec.protocol == Protocol::loso ? "loso" : "generalize");
  report.method = method_name(opt.method);
  report.n_classes = n_classes;
  report.train_stimuli = plan.train_stimuli;
  report.test_stimuli = plan.test_stimuli;
  report.folds.resize(plan.folds.size());

  auto worker = [&](std::size_t f) {
    try {
      report.folds[f] = run_fold(recs, opt, plan, f, derive_seed(seed, "fold", f), n_classes);
    } catch (const std::exception& e) {
      report.folds[f] = FoldOutcome{};
      report.folds[f].fold_index = f;
      report.folds[f].error = e.what();
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, opt.jobs);
  for (std::size_t start = 0; start < plan.folds.size(); start += jobs) {
    std::vector<std::future<void>> batch;
    const std::size_t stop = std::min(plan.folds.size(), start + jobs);
    for (std::size_t f = start; f < stop; ++f)
      batch.push_back(std::async(std::launch::async, worker, f));
    for (auto& fut : batch) fut.get();
  }

  // aggregate over successful folds
  std::vector<double> accs;
  std::vector<std::vector<std::size_t>> counts(n_classes,
                                               std::vector<std::size_t>(n_classes, 0));
  std::vector<double> scores;
  std::vector<int> score_labels;
  for (const auto& f : report.folds) {
    if (!f.error.empty()) continue;
    accs.push_back(f.accuracy);
    for (std::size_t i = 0; i < n_classes; ++i)
      for (std::size_t j = 0; j < n_classes; ++j) counts[i][j] += f.confusion_counts[i][j];
    scores.insert(scores.end(), f.scores.begin(), f.scores.end());
    score_labels.insert(score_labels.end(), f.score_labels.begin(), f.score_labels.end());
  }
  if (!accs.empty()) {
    double mean = 0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double sd = 0;
    for (double a : accs) sd += (a - mean) * (a - mean);
    sd = accs.size() > 1 ? std::sqrt(sd / static_cast<double>(accs.size() - 1)) : 0.0;
    report.mean_accuracy_pct = 100.0 * mean;
    report.std_accuracy_pct = 100.0 * sd;
  }
  report.confusion_pct.assign(n_classes, std::vector<double>(n_classes, 0.0));
  for (std::size_t i = 0; i < n_classes; ++i) {
    std::size_t total = 0;
    for (std::size_t j = 0; j < n_classes; ++j) total += counts[i][j];
    if (total == 0) continue;
    for (std::size_t j = 0; j < n_classes; ++j)
      report.confusion_pct[i][j] =
          100.0 * static_cast<double>(counts[i][j]) / static_cast<double>(total);
  }
  if (n_classes == 2 && !scores.empty()) {
    bool both = false;
    for (std::size_t i = 1; i < score_labels.size(); ++i)
      both = both || score_labels[i] != score_labels[0];
    if (both) {
      auto [points, auc] = roc_auc(scores, score_labels);
      report.roc = std::move(points);
      report.auc = auc;
      report.has_roc = true;
    }
  }
  return report;
}

// ---- subject-count ablation ----------------------------------------------------------

struct AblationPoint {
  std::size_t subject_count = 0;  // 0 = randomly initialized encoder
  std::uint64_t seed = 0;
  double mean_accuracy_pct = 0;
};

/// Contrastive phase restricted to a random subset of the training subjects;
/// the prediction phase always uses all of them. Count 0 is the
/// no-contrastive-learning control with a randomly initialized encoder.
template <class Real>
std::vector<AblationPoint> subject_ablation(const std::vector<Recording<Real>>& recs,
                                            const ProtocolOptions& base, const SplitPlan& plan,
                                            const std::vector<std::size_t>& counts,
                                            const std::vector<std::uint64_t>& seeds) {
  for (std::size_t c : counts)
    for (const auto& fold : plan.folds)
      if (c > fold.train_subjects.size())
        throw signal::param_error("subject_ablation: count exceeds training subjects");
  std::vector<AblationPoint> out;
  for (std::uint64_t seed : seeds)
    for (std::size_t c : counts) {
      ProtocolOptions opt = base;
      if (c == 0) {
        opt.method = Method::random_encoder;
        opt.contrastive_subject_limit = 0;
      } else {
        opt.method = Method::clisa;
        opt.contrastive_subject_limit = c;
      }
      const auto report = run_protocol(recs, opt, plan, seed);
      out.push_back({c, seed, report.mean_accuracy_pct});
    }
  return out;
}

}  // namespace clisa
