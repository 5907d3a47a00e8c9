// clisa - contrastive inter-subject alignment pipeline for multichannel
// time-series emotion decoding. Subcommands cover the full flow:
//   synth -> preprocess -> train -> features -> classify -> evaluate
// plus `ablate` (subject-count curve) and `explain` (integrated gradients).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "clisa/attribution.hpp"
#include "clisa/classifier.hpp"
#include "clisa/contrastive.hpp"
#include "clisa/dataset.hpp"
#include "clisa/features.hpp"
#include "clisa/pipeline.hpp"
#include "clisa/splits.hpp"
#include "clisa/synth.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- run records and artifact hashing --------------------------------------------

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash8(const json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(config.dump())));
  return std::string(buf).substr(0, 8);
}

void write_run_record(const std::string& out_dir, const std::string& command,
                      const json& config, const std::string& upstream_hash = "") {
  json j;
  j["command"] = command;
  j["config"] = config;
  j["config_hash"] = hash8(config);
  if (!upstream_hash.empty()) j["upstream_hash"] = upstream_hash;
  std::ofstream os(out_dir + "/run.json", std::ios::trunc);
  os << j.dump(2) << '\n';
}

std::string read_upstream_hash(const std::string& dir) {
  std::ifstream in(dir + "/run.json");
  if (!in) return "";
  json j;
  in >> j;
  return j.value("config_hash", "");
}

std::uint64_t resolve_seed(std::int64_t flag_seed) {
  if (flag_seed >= 0) return static_cast<std::uint64_t>(flag_seed);
  if (const char* env = std::getenv("CLISA_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 1;
}

struct HyperFlags {
  std::size_t k1 = 16, k2 = 16, p1 = 60, pool = 30, p2 = 6, c = 2;
  double tau = 0.5, sample_seconds = 5.0, lr = 7e-4, weight_decay = 0.015;
  std::size_t epochs = 100, patience = 30, val_pairs = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--k1", k1, "spatial convolution filters");
    cmd->add_option("--k2", k2, "temporal convolution filters");
    cmd->add_option("--p1", p1, "temporal filter length (samples)");
    cmd->add_option("--pool", pool, "average pooling kernel and stride");
    cmd->add_option("--p2", p2, "projector temporal filter length");
    cmd->add_option("--depth-mult", c, "depthwise filter multiplier C");
    cmd->add_option("--tau", tau, "contrastive temperature");
    cmd->add_option("--sample-seconds", sample_seconds, "contrastive sample length");
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    cmd->add_option("--epochs", epochs, "contrastive epoch budget");
    cmd->add_option("--patience", patience, "early stopping tolerance (epochs)");
    cmd->add_option("--val-pairs", val_pairs, "held-out validation subject pairs");
  }

  clisa::Hyperparams to_hp() const {
    clisa::Hyperparams hp;
    hp.k1 = k1;
    hp.k2 = k2;
    hp.p1 = p1;
    hp.pool = pool;
    hp.p2 = p2;
    hp.c = c;
    hp.tau = tau;
    hp.sample_len_s = sample_seconds;
    hp.lr = lr;
    hp.weight_decay = weight_decay;
    hp.epochs = epochs;
    hp.patience = patience;
    return hp;
  }

  json to_json() const {
    return {{"k1", k1},       {"k2", k2},           {"p1", p1},
            {"pool", pool},   {"p2", p2},           {"c", c},
            {"tau", tau},     {"sample_seconds", sample_seconds},
            {"lr", lr},       {"weight_decay", weight_decay},
            {"epochs", epochs}, {"patience", patience}, {"val_pairs", val_pairs}};
  }
};

struct ClassifierFlags {
  std::size_t hidden = 30, batch = 256, epochs = 100, patience = 30;
  double lr = 5e-4, eta = 0.99, lds_q = 0.1, window_seconds = 1.0;
  std::vector<double> wd_grid = {0.005, 0.011, 0.025, 0.056, 0.125};

  void attach(CLI::App* cmd) {
    cmd->add_option("--clf-hidden", hidden, "classifier hidden units per layer");
    cmd->add_option("--clf-lr", lr, "classifier learning rate");
    cmd->add_option("--clf-batch", batch, "classifier minibatch size");
    cmd->add_option("--clf-epochs", epochs, "classifier epoch budget");
    cmd->add_option("--clf-patience", patience, "classifier early stopping tolerance");
    cmd->add_option("--clf-wd-grid", wd_grid, "weight decay grid for inner validation")
        ->delimiter(',');
    cmd->add_option("--eta", eta, "adaptive normalization decay");
    cmd->add_option("--lds-q", lds_q, "LDS smoother noise ratio");
    cmd->add_option("--window-seconds", window_seconds, "prediction sample length");
  }

  clisa::ClassifierConfig to_cfg() const {
    clisa::ClassifierConfig cfg;
    cfg.hidden = hidden;
    cfg.lr = lr;
    cfg.batch = batch;
    cfg.epochs = epochs;
    cfg.patience = patience;
    cfg.weight_decay_grid = wd_grid;
    return cfg;
  }

  json to_json() const {
    return {{"hidden", hidden}, {"lr", lr},       {"batch", batch},
            {"epochs", epochs}, {"patience", patience}, {"wd_grid", wd_grid},
            {"eta", eta},       {"lds_q", lds_q}, {"window_seconds", window_seconds}};
  }
};

void parse_protocol(const std::string& text, clisa::SplitSpec& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.empty()) throw CLI::ValidationError("--protocol", "empty protocol");
  if (parts[0] == "kfold") {
    spec.protocol = clisa::Protocol::kfold;
    if (parts.size() > 1) spec.k = std::stoul(parts[1]);
  } else if (parts[0] == "loso") {
    spec.protocol = clisa::Protocol::loso;
  } else if (parts[0] == "generalize") {
    spec.protocol = clisa::Protocol::generalize;
    if (parts.size() > 1) spec.train_trial_frac = std::stod(parts[1]);
    if (parts.size() > 2) spec.k = std::stoul(parts[2]);
  } else {
    throw CLI::ValidationError("--protocol",
                               "expected kfold[:k] | loso | generalize[:frac[:k]]");
  }
}

void write_coords(const std::vector<clisa::signal::ChannelPos>& pos, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  for (const auto& p : pos) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %.9g %.9g %.9g\n", p.name.c_str(), p.x, p.y, p.z);
    os << buf;
  }
}

// ---- evaluate / ablate, precision dispatched ----------------------------------------

struct EvaluateArgs {
  std::string data, out, protocol_text = "kfold:10", method_text = "clisa";
  HyperFlags hyper;
  ClassifierFlags clf;
  std::int64_t seed = -1;
  std::size_t jobs = 1;
  std::size_t precision = 32;
  bool majority_vote = false;
};

template <class Real>
int run_evaluate(const EvaluateArgs& args) {
  const auto manifest = clisa::read_manifest(args.data);
  const auto base = fs::path(args.data).parent_path().string();
  const auto recs = clisa::load_recordings<Real>(manifest, base.empty() ? "." : base);

  clisa::SplitSpec split_spec;
  parse_protocol(args.protocol_text, split_spec);
  const std::uint64_t seed = resolve_seed(args.seed);
  const auto plan =
      clisa::make_splits(manifest.subject_ids(), manifest.stimulus_ids(), split_spec, seed);

  clisa::ProtocolOptions opt;
  opt.hp = args.hyper.to_hp();
  opt.clf = args.clf.to_cfg();
  opt.predict_window_s = args.clf.window_seconds;
  opt.lds_q = args.clf.lds_q;
  opt.adapt_eta = args.clf.eta;
  opt.jobs = args.jobs;
  opt.n_val_pairs = args.hyper.val_pairs;
  opt.trial_majority_vote = args.majority_vote;
  if (args.method_text == "clisa")
    opt.method = clisa::Method::clisa;
  else if (args.method_text == "raw_de")
    opt.method = clisa::Method::raw_de;
  else if (args.method_text == "random_encoder")
    opt.method = clisa::Method::random_encoder;
  else
    throw CLI::ValidationError("--method", "expected clisa | raw_de | random_encoder");

  const auto report = clisa::run_protocol(recs, opt, plan, seed);

  clisa::ensure_dir(args.out);
  {
    std::ofstream os(args.out + "/report.json", std::ios::trunc);
    os << report.to_json().dump(2) << '\n';
  }
  {
    std::ofstream os(args.out + "/folds.csv", std::ios::trunc);
    os << "fold,accuracy_pct,n_test,contrastive_best_val,error\n";
    for (const auto& f : report.folds) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%zu,%.6g,%zu,%.6g,%s\n", f.fold_index,
                    100.0 * f.accuracy, f.n_test, f.contrastive_best_val, f.error.c_str());
      os << buf;
    }
  }
  {
    std::ofstream os(args.out + "/confusion.csv", std::ios::trunc);
    for (const auto& row : report.confusion_pct) {
      for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
      os << '\n';
    }
  }
  if (report.has_roc) {
    std::ofstream os(args.out + "/roc.csv", std::ios::trunc);
    os << "fpr,tpr\n";
    for (const auto& p : report.roc) os << p.fpr << ',' << p.tpr << '\n';
  }

  json config = {{"data", args.data},
                 {"protocol", args.protocol_text},
                 {"method", args.method_text},
                 {"hyper", args.hyper.to_json()},
                 {"classifier", args.clf.to_json()},
                 {"seed", seed},
                 {"majority_vote", args.majority_vote},
                 {"precision", args.precision}};
  write_run_record(args.out, "evaluate", config);

  std::cout << "protocol " << report.protocol << " method " << report.method << ": "
            << report.mean_accuracy_pct << " +- " << report.std_accuracy_pct << " %";
  if (report.has_roc) std::cout << "  auc " << report.auc;
  std::cout << '\n';
  for (const auto& f : report.folds)
    if (!f.error.empty())
      std::cerr << "fold " << f.fold_index << " failed: " << f.error << '\n';
  return report.all_folds_ok() ? 0 : 1;
}

struct AblateArgs {
  std::string data, out;
  std::vector<std::size_t> counts = {2, 4, 8};
  std::size_t n_seeds = 5;
  std::size_t test_count = 2;
  HyperFlags hyper;
  ClassifierFlags clf;
  std::int64_t seed = -1;
  std::size_t precision = 32;
};

template <class Real>
int run_ablate(const AblateArgs& args) {
  const auto manifest = clisa::read_manifest(args.data);
  const auto base = fs::path(args.data).parent_path().string();
  const auto recs = clisa::load_recordings<Real>(manifest, base.empty() ? "." : base);
  const std::uint64_t seed = resolve_seed(args.seed);

  auto ids = manifest.subject_ids();
  clisa::Rng rng(clisa::derive_seed(seed, "ablation-split"));
  rng.shuffle(ids);
  if (args.test_count == 0 || args.test_count >= ids.size())
    throw CLI::ValidationError("--test-count", "must leave at least one training subject");
  std::vector<std::string> test_ids(ids.end() - static_cast<std::ptrdiff_t>(args.test_count),
                                    ids.end());
  ids.resize(ids.size() - args.test_count);
  const auto plan = clisa::manual_split(ids, test_ids);

  clisa::ProtocolOptions opt;
  opt.hp = args.hyper.to_hp();
  opt.clf = args.clf.to_cfg();
  opt.predict_window_s = args.clf.window_seconds;
  opt.lds_q = args.clf.lds_q;
  opt.adapt_eta = args.clf.eta;
  opt.n_val_pairs = args.hyper.val_pairs;

  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < args.n_seeds; ++i)
    seeds.push_back(clisa::derive_seed(seed, "ablation-seed", i));
  const auto points = clisa::subject_ablation(recs, opt, plan, args.counts, seeds);

  clisa::ensure_dir(args.out);
  {
    std::ofstream os(args.out + "/ablation.csv", std::ios::trunc);
    os << "subject_count,seed,accuracy_pct\n";
    for (const auto& p : points)
      os << p.subject_count << ',' << p.seed << ',' << p.mean_accuracy_pct << '\n';
  }
  json config = {{"data", args.data}, {"counts", args.counts},
                 {"n_seeds", args.n_seeds}, {"test_count", args.test_count},
                 {"hyper", args.hyper.to_json()}, {"classifier", args.clf.to_json()},
                 {"seed", seed}, {"precision", args.precision}};
  write_run_record(args.out, "ablate", config);
  for (const auto& p : points)
    std::cout << "count " << p.subject_count << " seed " << p.seed << ": "
              << p.mean_accuracy_pct << " %\n";
  return 0;
}

template <class Real>
int run_train(const std::string& data, const std::string& out, const HyperFlags& hyper,
              std::uint64_t seed, std::size_t precision) {
  const auto manifest = clisa::read_manifest(data);
  const auto base = fs::path(data).parent_path().string();
  const auto recs = clisa::load_recordings<Real>(manifest, base.empty() ? "." : base);
  const auto hp = hyper.to_hp();
  auto [params, report] = clisa::train_contrastive(recs, hp, seed, hyper.val_pairs);

  clisa::ensure_dir(out);
  json config = {{"data", data}, {"hyper", hyper.to_json()}, {"seed", seed},
                 {"precision", precision}};
  const std::string tag = hash8(config);
  clisa::save_checkpoint(params, hp, out + "/checkpoint-" + tag + ".clsa");
  clisa::write_train_report_csv(report, out + "/train_report.csv");
  write_run_record(out, "train", config);
  std::cout << "trained " << report.epochs.size() << " epochs, best epoch "
            << report.best_epoch << " (val retrieval " << report.best_val << "), stop: "
            << report.stop_reason << '\n'
            << "checkpoint-" << tag << ".clsa written to " << out << '\n';
  return 0;
}

std::string find_checkpoint(const std::string& path) {
  if (fs::is_regular_file(path)) return path;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".clsa") return e.path().string();
    throw clisa::data_error("features: no .clsa checkpoint found in " + path +
                            " (run `clisa train` first)");
  }
  throw clisa::data_error("features: missing checkpoint file " + path);
}

template <class Real>
int run_features(const std::string& data, const std::string& checkpoint,
                 const std::string& out, const std::string& mode, double window_s,
                 double lds_q, std::size_t precision) {
  const auto manifest = clisa::read_manifest(data);
  const auto base = fs::path(data).parent_path().string();
  const auto recs = clisa::load_recordings<Real>(manifest, base.empty() ? "." : base);

  clisa::ModelParams<Real> params;
  std::string upstream;
  if (mode == "trained") {
    const auto ck = find_checkpoint(checkpoint);
    auto [p, hp] = clisa::load_checkpoint<Real>(ck);
    params = std::move(p);
    upstream = read_upstream_hash(fs::path(ck).parent_path().string());
  }

  clisa::ensure_dir(out);
  for (const auto& rec : recs) {
    const auto rows = clisa::extract_features<Real>(
        rec, mode == "trained" ? &params.encoder : nullptr,
        mode == "trained" ? clisa::FeatureKind::trained : clisa::FeatureKind::raw,
        window_s, lds_q, nullptr);
    clisa::write_features_csv(rows, out + "/" + rec.subject_id + ".csv");
  }
  json config = {{"data", data},   {"mode", mode},  {"window_seconds", window_s},
                 {"lds_q", lds_q}, {"precision", precision}};
  write_run_record(out, "features", config, upstream);
  std::cout << "features for " << recs.size() << " subjects written to " << out << '\n';
  return 0;
}

template <class Real>
std::vector<clisa::FeatureRow<Real>> load_feature_dir(const std::string& dir) {
  std::vector<clisa::FeatureRow<Real>> rows;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw clisa::data_error("classify: no feature CSVs in " + dir);
  for (const auto& f : files) {
    const auto batch = clisa::read_features_csv<Real>(f.string(), f.stem().string());
    rows.insert(rows.end(), batch.begin(), batch.end());
  }
  return rows;
}

template <class Real>
int run_classify(const std::string& train_dir, const std::string& eval_dir,
                 const std::string& out, const ClassifierFlags& flags, std::uint64_t seed,
                 std::size_t precision) {
  auto train_rows = load_feature_dir<Real>(train_dir);
  std::size_t n_classes = 0;
  for (const auto& r : train_rows)
    n_classes = std::max<std::size_t>(n_classes, static_cast<std::size_t>(r.label) + 1);

  std::vector<std::vector<double>> table;
  for (const auto& r : train_rows) table.emplace_back(r.values.begin(), r.values.end());
  std::vector<double> mu, var;
  clisa::column_stats(table, mu, var);
  for (auto& r : train_rows)
    for (std::size_t i = 0; i < r.values.size(); ++i)
      r.values[i] = static_cast<Real>((static_cast<double>(r.values[i]) - mu[i]) /
                                      std::sqrt(var[i] + clisa::kNormEps));

  auto [clf, report] = clisa::train_classifier(train_rows, n_classes, flags.to_cfg(),
                                               clisa::derive_seed(seed, "classifier"));
  clisa::ensure_dir(out);
  clisa::save_classifier(clf, out + "/classifier.clsm");
  {
    json stats = {{"mean", mu}, {"var", var}, {"eta", flags.eta}};
    std::ofstream os(out + "/norm_stats.json", std::ios::trunc);
    os << stats.dump(2) << '\n';
  }
  json jreport = {{"chosen_weight_decay", report.chosen_weight_decay},
                  {"best_epoch", report.best_epoch},
                  {"inner_val_accuracy", report.inner_val_accuracy}};

  if (!eval_dir.empty()) {
    auto eval_rows = load_feature_dir<Real>(eval_dir);
    std::ofstream os(out + "/predictions.csv", std::ios::trunc);
    os << "subject,trial_id,sample_idx,label,predicted";
    for (std::size_t k = 0; k < n_classes; ++k) os << ",p" << k;
    os << '\n';
    std::size_t hits = 0;
    std::string current;
    clisa::AdaptiveNormState state;
    for (const auto& r : eval_rows) {
      if (r.subject != current) {
        current = r.subject;
        state = clisa::AdaptiveNormState(mu, var, flags.eta);  // reset per subject
      }
      const auto normed = clisa::adaptive_normalize(
          state, std::span<const Real>(r.values.data(), r.values.size()));
      const auto pred = clisa::predict_labels(clf, std::vector<std::vector<Real>>{normed});
      if (pred.labels[0] == r.label) ++hits;
      os << r.subject << ',' << r.trial_id << ',' << r.sample_idx << ',' << r.label << ','
         << pred.labels[0];
      for (double p : pred.posteriors[0]) os << ',' << p;
      os << '\n';
    }
    jreport["eval_accuracy_pct"] =
        eval_rows.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / eval_rows.size();
    std::cout << "eval accuracy: " << jreport["eval_accuracy_pct"] << " %\n";
  }
  {
    std::ofstream os(out + "/classify_report.json", std::ios::trunc);
    os << jreport.dump(2) << '\n';
  }
  json config = {{"train_features", train_dir}, {"eval_features", eval_dir},
                 {"classifier", flags.to_json()}, {"seed", seed}, {"precision", precision}};
  write_run_record(out, "classify", config, read_upstream_hash(train_dir));
  return 0;
}

template <class Real>
int run_explain(const std::string& clf_dir, const std::string& features_path,
                std::size_t target_class, std::size_t steps, std::size_t sample_index,
                const std::string& out) {
  const auto clf = clisa::load_classifier<Real>(clf_dir + "/classifier.clsm");
  std::vector<double> mu, var;
  {
    std::ifstream in(clf_dir + "/norm_stats.json");
    if (!in) throw clisa::data_error("explain: missing " + clf_dir + "/norm_stats.json");
    json j;
    in >> j;
    mu = j.at("mean").get<std::vector<double>>();
    var = j.at("var").get<std::vector<double>>();
  }
  std::vector<clisa::FeatureRow<Real>> rows;
  if (fs::is_directory(features_path))
    rows = load_feature_dir<Real>(features_path);
  else
    rows = clisa::read_features_csv<Real>(features_path,
                                          fs::path(features_path).stem().string());
  if (sample_index >= rows.size())
    throw clisa::data_error("explain: sample index out of range");
  // static z-score with the training statistics
  std::vector<Real> h(rows[sample_index].values.size());
  for (std::size_t i = 0; i < h.size(); ++i)
    h[i] = static_cast<Real>((static_cast<double>(rows[sample_index].values[i]) - mu[i]) /
                             std::sqrt(var[i] + clisa::kNormEps));
  const std::vector<Real> h0(h.size(), Real(0));

  double ig_sum = 0;
  const double gap = clisa::ig_completeness_gap(
      clf, std::span<const Real>(h.data(), h.size()),
      std::span<const Real>(h0.data(), h0.size()), steps, target_class, &ig_sum);
  const auto ig = clisa::integrated_gradients(
      clf, std::span<const Real>(h.data(), h.size()),
      std::span<const Real>(h0.data(), h0.size()), steps, target_class);
  clisa::ensure_dir(out);
  {
    std::ofstream os(out + "/attributions.csv", std::ios::trunc);
    os << "feature,attribution\n";
    for (std::size_t i = 0; i < ig.size(); ++i) os << 'f' << i << ',' << ig[i] << '\n';
  }
  json config = {{"classifier", clf_dir}, {"features", features_path},
                 {"class", target_class}, {"steps", steps}, {"sample", sample_index}};
  write_run_record(out, "explain", config, read_upstream_hash(clf_dir));
  std::cout << "attribution sum " << ig_sum << ", completeness gap " << 100.0 * gap
            << " % (steps " << steps << ")\n";
  return 0;
}

int run_preprocess(const std::string& in, const std::string& out, double band_lo,
                   double band_hi, const std::string& reref, const std::string& coords_file,
                   double keep_last_seconds, double jump_threshold) {
  const auto manifest = clisa::read_manifest(in);
  const auto base = fs::path(in).parent_path().string();
  auto recs = clisa::load_recordings<double>(manifest, base.empty() ? "." : base);

  std::vector<clisa::signal::ChannelPos> positions = manifest.positions();
  if (!coords_file.empty()) positions = clisa::signal::load_channel_positions(coords_file);

  clisa::signal::RerefMode mode = clisa::signal::RerefMode::average;
  std::size_t ma = 0, mb = 0;
  const bool do_reref = reref != "none";
  if (reref.rfind("mastoids:", 0) == 0) {
    mode = clisa::signal::RerefMode::mastoids;
    const auto rest = reref.substr(9);
    const auto comma = rest.find(',');
    if (comma == std::string::npos)
      throw CLI::ValidationError("--reref", "expected mastoids:<chA>,<chB>");
    std::vector<std::string> names;
    for (const auto& c : manifest.channels) names.push_back(c.name);
    ma = clisa::signal::channel_index(names, rest.substr(0, comma));
    mb = clisa::signal::channel_index(names, rest.substr(comma + 1));
  } else if (do_reref && reref != "average") {
    throw CLI::ValidationError("--reref", "expected average | mastoids:<A>,<B> | none");
  }

  json repair_log = json::array();
  for (auto& rec : recs) {
    for (auto& trial : rec.trials) {
      auto [repaired, report] =
          clisa::signal::repair_outliers(trial.signal, positions, jump_threshold);
      trial.signal = std::move(repaired);
      if (!report.interpolated_channels.empty() || report.total_jumps > 0) {
        json entry = {{"subject", rec.subject_id},
                      {"trial", trial.trial_id},
                      {"interpolated_channels", report.interpolated_channels},
                      {"jump_repairs", report.total_jumps}};
        repair_log.push_back(entry);
      }
      if (do_reref) trial.signal = clisa::signal::rereference(trial.signal, mode, ma, mb);
      trial.signal =
          clisa::signal::bandpass(trial.signal, band_lo, band_hi, rec.sampling_rate);
      if (keep_last_seconds > 0) {
        const auto keep = static_cast<std::size_t>(
            std::llround(keep_last_seconds * rec.sampling_rate));
        if (keep < trial.signal.dim(1))
          trial.signal = clisa::signal::slice_time(trial.signal,
                                                   trial.signal.dim(1) - keep, keep);
      }
    }
  }

  std::vector<clisa::Recording<float>> out_recs;
  for (const auto& r : recs) {
    clisa::Recording<float> c;
    c.subject_id = r.subject_id;
    c.sampling_rate = r.sampling_rate;
    c.channel_names = r.channel_names;
    for (const auto& t : r.trials) {
      clisa::Trial<float> tc{t.trial_id, t.stimulus_id, t.label, t.signal.cast<float>()};
      c.trials.push_back(std::move(tc));
    }
    out_recs.push_back(std::move(c));
  }
  clisa::save_recordings(out_recs, manifest.name + "-preprocessed", out,
                         positions.empty() ? nullptr : &positions);
  {
    std::ofstream os(out + "/repair_report.json", std::ios::trunc);
    os << repair_log.dump(2) << '\n';
  }
  json config = {{"in", in},
                 {"band", {band_lo, band_hi}},
                 {"reref", reref},
                 {"keep_last_seconds", keep_last_seconds},
                 {"jump_threshold", jump_threshold}};
  write_run_record(out, "preprocess", config);
  std::cout << "preprocessed dataset written to " << out << " (" << repair_log.size()
            << " trials repaired)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CLISA: contrastive inter-subject alignment for EEG-style emotion decoding"};
  app.require_subcommand(1);

  // ---- synth -----------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-subject dataset");
  clisa::SynthSpec spec;
  std::string synth_out;
  std::int64_t synth_seed = -1;
  bool multi_band = false, fixed_distractors = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--subjects", spec.n_subjects, "number of subjects");
  synth->add_option("--trials", spec.n_trials, "trials (= stimuli) per subject");
  synth->add_option("--classes", spec.n_classes, "emotion classes");
  synth->add_option("--channels", spec.channels, "electrode count");
  synth->add_option("--fs", spec.fs, "sampling rate (Hz)");
  synth->add_option("--trial-seconds", spec.trial_seconds, "trial duration");
  synth->add_option("--sources", spec.n_sources, "shared latent sources");
  synth->add_option("--distractors", spec.n_distractors, "subject-specific confounds");
  synth->add_option("--snr", spec.snr, "shared-signal to noise power ratio");
  synth->add_option("--jitter", spec.mixing_jitter, "per-subject topography jitter");
  synth->add_option("--gain-sigma", spec.channel_gain_sigma, "electrode gain spread");
  synth->add_flag("--identity-mixing", spec.identity_mixing, "mixing = identity");
  synth->add_flag("--multi-band", multi_band, "give each source its own band");
  synth->add_flag("--fixed-distractors", fixed_distractors,
                  "keep distractor topographies fixed per subject");
  synth->add_option("--seed", synth_seed, "rng seed (CLISA_SEED fallback)");

  // ---- preprocess -------------------------------------------------------------
  auto* pre = app.add_subcommand("preprocess", "denoise, re-reference and band-pass");
  std::string pre_in, pre_out, pre_reref = "average", pre_coords;
  double band_lo = 4.0, band_hi = 47.0, keep_last = 0.0, jump_threshold = 100.0;
  pre->add_option("--in", pre_in, "input manifest.json")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--band-low", band_lo, "pass band lower edge (Hz)");
  pre->add_option("--band-high", band_hi, "pass band upper edge (Hz)");
  pre->add_option("--reref", pre_reref, "average | mastoids:<A>,<B> | none");
  pre->add_option("--coords", pre_coords, "electrode coordinate file (name x y z)");
  pre->add_option("--keep-last-seconds", keep_last, "truncate trials to their final span");
  pre->add_option("--jump-threshold", jump_threshold, "amplitude jump clamp threshold");

  // ---- train -------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "contrastive phase: fit encoder + projector");
  std::string train_data, train_out;
  HyperFlags train_hyper;
  std::int64_t train_seed = -1;
  std::size_t train_precision = 32;
  train->add_option("--data", train_data, "dataset manifest.json")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train_hyper.attach(train);
  train->add_option("--seed", train_seed, "rng seed (CLISA_SEED fallback)");
  train->add_option("--precision", train_precision, "32 or 64 bit floats")
      ->check(CLI::IsMember({32, 64}));

  // ---- features ------------------------------------------------------------------
  auto* feats = app.add_subcommand("features", "extract DE features per subject");
  std::string feat_data, feat_ckpt, feat_out, feat_mode = "trained";
  double feat_window = 1.0, feat_q = 0.1;
  std::size_t feat_precision = 32;
  feats->add_option("--data", feat_data, "dataset manifest.json")->required();
  feats->add_option("--checkpoint", feat_ckpt, "trained checkpoint file or train dir");
  feats->add_option("--out", feat_out, "output directory")->required();
  feats->add_option("--mode", feat_mode, "trained | raw")
      ->check(CLI::IsMember({"trained", "raw"}));
  feats->add_option("--window-seconds", feat_window, "prediction sample length");
  feats->add_option("--lds-q", feat_q, "LDS smoother noise ratio");
  feats->add_option("--precision", feat_precision, "32 or 64 bit floats")
      ->check(CLI::IsMember({32, 64}));

  // ---- classify --------------------------------------------------------------------
  auto* classify = app.add_subcommand("classify", "train the MLP on extracted features");
  std::string clf_train_dir, clf_eval_dir, clf_out;
  ClassifierFlags clf_flags;
  std::int64_t clf_seed = -1;
  std::size_t clf_precision = 32;
  classify->add_option("--features", clf_train_dir, "training feature directory")->required();
  classify->add_option("--eval-features", clf_eval_dir, "features to classify after training");
  classify->add_option("--out", clf_out, "output directory")->required();
  clf_flags.attach(classify);
  classify->add_option("--seed", clf_seed, "rng seed (CLISA_SEED fallback)");
  classify->add_option("--precision", clf_precision, "32 or 64 bit floats")
      ->check(CLI::IsMember({32, 64}));

  // ---- evaluate -----------------------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "full cross-subject protocol");
  EvaluateArgs eval_args;
  eval->add_option("--data", eval_args.data, "dataset manifest.json")->required();
  eval->add_option("--out", eval_args.out, "output directory")->required();
  eval->add_option("--protocol", eval_args.protocol_text,
                   "kfold[:k] | loso | generalize[:frac[:k]]");
  eval->add_option("--method", eval_args.method_text, "clisa | raw_de | random_encoder");
  eval_args.hyper.attach(eval);
  eval_args.clf.attach(eval);
  eval->add_option("--seed", eval_args.seed, "rng seed (CLISA_SEED fallback)");
  eval->add_option("--jobs", eval_args.jobs, "folds evaluated concurrently");
  eval->add_flag("--majority-vote", eval_args.majority_vote,
                 "score one voted prediction per trial instead of per sample");
  eval->add_option("--precision", eval_args.precision, "32 or 64 bit floats")
      ->check(CLI::IsMember({32, 64}));

  // ---- ablate ----------------------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "accuracy vs contrastive subject count");
  AblateArgs ablate_args;
  ablate->add_option("--data", ablate_args.data, "dataset manifest.json")->required();
  ablate->add_option("--out", ablate_args.out, "output directory")->required();
  ablate->add_option("--counts", ablate_args.counts,
                     "contrastive subject counts (0 = random encoder)")
      ->delimiter(',');
  ablate->add_option("--seeds", ablate_args.n_seeds, "number of repeated seeds");
  ablate->add_option("--test-count", ablate_args.test_count, "held-out test subjects");
  ablate_args.hyper.attach(ablate);
  ablate_args.clf.attach(ablate);
  ablate->add_option("--seed", ablate_args.seed, "rng seed (CLISA_SEED fallback)");
  ablate->add_option("--precision", ablate_args.precision, "32 or 64 bit floats")
      ->check(CLI::IsMember({32, 64}));

  // ---- explain ------------------------------------------------------------------------------
  auto* explain = app.add_subcommand("explain", "integrated-gradients attributions");
  std::string ex_clf, ex_features, ex_out;
  std::size_t ex_class = 1, ex_steps = 256, ex_sample = 0;
  explain->add_option("--classifier", ex_clf, "classify output directory")->required();
  explain->add_option("--features", ex_features, "feature CSV file or directory")->required();
  explain->add_option("--out", ex_out, "output directory")->required();
  explain->add_option("--class", ex_class, "attribution target class");
  explain->add_option("--steps", ex_steps, "Riemann steps");
  explain->add_option("--sample", ex_sample, "feature row index to explain");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      spec.seed = resolve_seed(synth_seed);
      spec.single_band = !multi_band;
      spec.rotating_distractors = !fixed_distractors;
      spec.validate();  // fail before touching the filesystem
      const auto corpus = clisa::gen_synthetic(spec);
      clisa::save_recordings(corpus.recordings, "synthetic", synth_out, &corpus.positions);
      write_coords(corpus.positions, synth_out + "/coords.txt");
      json config = {{"subjects", spec.n_subjects}, {"trials", spec.n_trials},
                     {"classes", spec.n_classes},   {"channels", spec.channels},
                     {"fs", spec.fs},               {"trial_seconds", spec.trial_seconds},
                     {"sources", spec.n_sources},   {"distractors", spec.n_distractors},
                     {"snr", spec.snr},             {"jitter", spec.mixing_jitter},
                     {"gain_sigma", spec.channel_gain_sigma},
                     {"single_band", spec.single_band},
                     {"rotating_distractors", spec.rotating_distractors},
                     {"identity_mixing", spec.identity_mixing},
                     {"seed", spec.seed}};
      write_run_record(synth_out, "synth", config);
      std::cout << "synthetic dataset (" << spec.n_subjects << " subjects x "
                << spec.n_trials << " trials) written to " << synth_out << '\n';
      return 0;
    }
    if (pre->parsed())
      return run_preprocess(pre_in, pre_out, band_lo, band_hi, pre_reref, pre_coords,
                            keep_last, jump_threshold);
    if (train->parsed()) {
      const auto seed = resolve_seed(train_seed);
      return train_precision == 64
                 ? run_train<double>(train_data, train_out, train_hyper, seed, 64)
                 : run_train<float>(train_data, train_out, train_hyper, seed, 32);
    }
    if (feats->parsed()) {
      if (feat_mode == "trained" && feat_ckpt.empty())
        throw clisa::data_error("features: --checkpoint required in trained mode");
      return feat_precision == 64
                 ? run_features<double>(feat_data, feat_ckpt, feat_out, feat_mode,
                                        feat_window, feat_q, 64)
                 : run_features<float>(feat_data, feat_ckpt, feat_out, feat_mode,
                                       feat_window, feat_q, 32);
    }
    if (classify->parsed()) {
      const auto seed = resolve_seed(clf_seed);
      return clf_precision == 64
                 ? run_classify<double>(clf_train_dir, clf_eval_dir, clf_out, clf_flags,
                                        seed, 64)
                 : run_classify<float>(clf_train_dir, clf_eval_dir, clf_out, clf_flags,
                                       seed, 32);
    }
    if (eval->parsed())
      return eval_args.precision == 64 ? run_evaluate<double>(eval_args)
                                       : run_evaluate<float>(eval_args);
    if (ablate->parsed())
      return ablate_args.precision == 64 ? run_ablate<double>(ablate_args)
                                         : run_ablate<float>(ablate_args);
    if (explain->parsed())
      return run_explain<double>(ex_clf, ex_features, ex_class, ex_steps, ex_sample, ex_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
