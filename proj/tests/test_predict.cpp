#include <cmath>
#include <filesystem>
#include <fstream>

#include "clisa/classifier.hpp"
#include "clisa/features.hpp"
#include "clisa/gradcheck.hpp"
#include "clisa/rng.hpp"
#include "doctest.h"

using namespace clisa;

namespace {

constexpr double kPi = 3.14159265358979323846;

EncoderParams<double> identity_encoder(std::size_t m, std::size_t p1) {
  EncoderParams<double> enc;
  enc.spatial = Tensor<double>({m, m});
  for (std::size_t i = 0; i < m; ++i) enc.spatial.at2(i, i) = 1.0;
  enc.temporal = Tensor<double>({1, p1});
  enc.temporal.at2(0, p1 / 2) = 1.0;
  return enc;
}

}  // namespace

TEST_CASE("trained_de: unit-variance latent gives 0.5 ln(2 pi e)") {
  // identity encoder passes the input through; feed N(0,1) channels
  const auto enc = identity_encoder(3, 5);
  Rng rng(1);
  Tensor<double> x({3, 250});
  for (auto& v : x.data) v = rng.gaussian();
  // force unit population variance per channel: the identity is then exact
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::size_t t = 0; t < 250; ++t) mean += x.at2(c, t);
    mean /= 250.0;
    for (std::size_t t = 0; t < 250; ++t) {
      const double d = x.at2(c, t) - mean;
      var += d * d;
    }
    var /= 250.0;
    for (std::size_t t = 0; t < 250; ++t) x.at2(c, t) = (x.at2(c, t) - mean) / std::sqrt(var);
  }
  const auto de = trained_de(x, enc);
  REQUIRE(de.shape == std::vector<std::size_t>{1, 3});
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(de.at2(0, c) == doctest::Approx(1.41894).epsilon(0.02));
}

TEST_CASE("trained_de: scaling the input by e shifts DE by exactly 1") {
  const Hyperparams hp;
  const auto model = init_params<double>(hp, 8, 3);
  Rng rng(2);
  Tensor<double> x({8, 400});
  for (auto& v : x.data) v = rng.gaussian();
  Tensor<double> xe({8, 400});
  const double e = std::exp(1.0);
  for (std::size_t i = 0; i < x.size(); ++i) xe[i] = e * x[i];
  const auto d0 = trained_de(x, model.encoder);
  const auto d1 = trained_de(xe, model.encoder);
  for (std::size_t i = 0; i < d0.size(); ++i)
    CHECK(d1[i] - d0[i] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("trained_de: white noise through defaults has shape K2 x K1") {
  const Hyperparams hp;
  const auto model = init_params<double>(hp, 32, 5);
  Rng rng(3);
  Tensor<double> x({32, 250});
  for (auto& v : x.data) v = rng.gaussian();
  const auto de = trained_de(x, model.encoder);
  CHECK(de.shape == std::vector<std::size_t>{16, 16});
  CHECK(de.all_finite());
}

TEST_CASE("raw_de: dimension count and band dominance") {
  const double fs = 250.0;
  Tensor<double> x({32, 500});
  for (std::size_t c = 0; c < 32; ++c)
    for (std::size_t t = 0; t < 500; ++t)
      x.at2(c, t) = std::sin(2.0 * kPi * 10.0 * static_cast<double>(t) / fs);
  const auto de = raw_de(x, default_bands(), fs);
  CHECK(de.shape == std::vector<std::size_t>{4, 32});  // 128 features
  // 10 Hz sits in alpha (8-13); its DE must beat every other band
  for (std::size_t c = 0; c < 32; ++c) {
    CHECK(de.at2(1, c) > de.at2(0, c));
    CHECK(de.at2(1, c) > de.at2(2, c));
    CHECK(de.at2(1, c) > de.at2(3, c));
  }
}

TEST_CASE("raw_de: zero signal hits the variance floor") {
  Tensor<double> x({2, 300});
  const auto de = raw_de(x, default_bands(), 250.0);
  const double floor_de = 0.5 * std::log(2.0 * kPi * std::exp(1.0) * 1e-12);
  for (double v : de.data) CHECK(v == doctest::Approx(floor_de).epsilon(1e-9));
}

TEST_CASE("raw_de: band above Nyquist is a parameter error") {
  Tensor<double> x({2, 300});
  CHECK_THROWS_AS(raw_de(x, {{30.0, 47.0}}, 80.0), signal::param_error);
}

TEST_CASE("lds_smooth: constant sequences are fixed points") {
  std::vector<std::vector<double>> seq(20, std::vector<double>{3.5, -1.0});
  lds_smooth(seq, 0.1);
  for (const auto& row : seq) {
    CHECK(row[0] == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(row[1] == doctest::Approx(-1.0).epsilon(1e-12));
  }
}

TEST_CASE("lds_smooth: impulse mass is preserved and spread") {
  std::vector<std::vector<double>> seq(21, std::vector<double>{0.0});
  seq[10][0] = 1.0;
  lds_smooth(seq, 0.1);
  double total = 0, peak = 0;
  for (const auto& row : seq) {
    total += row[0];
    peak = std::max(peak, row[0]);
  }
  CHECK(peak < 1.0);
  CHECK(total == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("lds_smooth: huge process noise trusts the observations") {
  Rng rng(4);
  std::vector<std::vector<double>> seq(15, std::vector<double>(3));
  for (auto& row : seq)
    for (auto& v : row) v = rng.gaussian();
  auto smoothed = seq;
  lds_smooth(smoothed, 1e9);
  for (std::size_t i = 0; i < seq.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(smoothed[i][j] == doctest::Approx(seq[i][j]).epsilon(1e-6));
}

TEST_CASE("lds_smooth: output variance does not exceed input variance") {
  for (std::uint64_t seed : {7ull, 8ull, 9ull}) {
    Rng rng(seed);
    std::vector<std::vector<double>> seq(120, std::vector<double>(1));
    for (auto& row : seq) row[0] = rng.gaussian();
    auto smoothed = seq;
    lds_smooth(smoothed, 0.5);
    auto variance = [](const std::vector<std::vector<double>>& s) {
      double mean = 0;
      for (const auto& r : s) mean += r[0];
      mean /= static_cast<double>(s.size());
      double var = 0;
      for (const auto& r : s) var += (r[0] - mean) * (r[0] - mean);
      return var / static_cast<double>(s.size());
    };
    CHECK(variance(smoothed) <= variance(seq));
  }
  std::vector<std::vector<double>> empty;
  lds_smooth(empty, 0.1);  // no-op
  CHECK(empty.empty());
}

namespace {

std::vector<FeatureRow<double>> toy_rows(std::size_t n_per_class, std::uint64_t seed,
                                         bool separable) {
  Rng rng(seed);
  std::vector<FeatureRow<double>> rows;
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    FeatureRow<double> r;
    r.subject = "s" + std::to_string(i % 4);
    r.trial_id = static_cast<int>(i % 10);
    r.sample_idx = static_cast<int>(i);
    r.label = static_cast<int>(i % 2);
    const double mu = separable ? (r.label == 0 ? -2.0 : 2.0) : 0.0;
    r.values = {mu + 0.3 * rng.gaussian(), mu + 0.3 * rng.gaussian(),
                0.3 * rng.gaussian()};
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

TEST_CASE("train_classifier: linearly separable toy set reaches 99% train accuracy") {
  const auto rows = toy_rows(100, 11, true);
  ClassifierConfig cfg;
  cfg.epochs = 100;
  cfg.weight_decay_grid = {0.005};
  auto [params, report] = train_classifier(rows, 2, cfg, 5);
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  for (const auto& r : rows) {
    feats.push_back(r.values);
    labels.push_back(r.label);
  }
  const auto pred = predict_labels(params, feats);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (pred.labels[i] == labels[i]) ++hits;
  CHECK(static_cast<double>(hits) / static_cast<double>(labels.size()) >= 0.99);
}

TEST_CASE("train_classifier: label noise stays at chance on held-out data") {
  auto rows = toy_rows(150, 13, false);
  Rng rng(14);
  for (auto& r : rows) r.label = static_cast<int>(rng.uniform_index(2));
  ClassifierConfig cfg;
  cfg.epochs = 40;
  cfg.weight_decay_grid = {0.011};
  auto [params, report] = train_classifier(rows, 2, cfg, 7);
  const auto holdout = toy_rows(300, 99, false);
  std::vector<std::vector<double>> feats;
  for (const auto& r : holdout) feats.push_back(r.values);
  const auto pred = predict_labels(params, feats);
  Rng lrng(101);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < holdout.size(); ++i)
    if (pred.labels[i] == static_cast<int>(lrng.uniform_index(2))) ++hits;
  const double acc = static_cast<double>(hits) / static_cast<double>(holdout.size());
  CHECK(acc > 0.4);
  CHECK(acc < 0.6);
}

TEST_CASE("train_classifier rejects single-class training sets") {
  auto rows = toy_rows(20, 15, true);
  for (auto& r : rows) r.label = 0;
  ClassifierConfig cfg;
  CHECK_THROWS_AS(train_classifier(rows, 2, cfg, 1), config_error);
}

TEST_CASE("zero output layer gives uniform posteriors and ln(k) loss") {
  MlpParams<double> p = init_mlp<double>(4, 8, 3, 21);
  p.w3 = Tensor<double>({3, 8});
  p.b3 = Tensor<double>({3});
  Rng rng(22);
  Tensor<double> x({5, 4});
  for (auto& v : x.data) v = rng.gaussian();
  const auto post = softmax_rows(mlp_logits(p, x));
  for (const auto& row : post)
    for (double v : row) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  Graph<double> g;
  auto logits = g.linear(
      g.relu(g.linear(g.relu(g.linear(g.input(x), g.input(p.w1), g.input(p.b1))),
                      g.input(p.w2), g.input(p.b2))),
      g.input(p.w3), g.input(p.b3));
  auto loss = g.softmax_cross_entropy(logits, {0, 1, 2, 0, 1});
  CHECK(g.value(loss)[0] == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("predict_labels: argmax, tie break, posterior normalization") {
  CHECK(argmax_class({0.7, 0.3}) == 0);
  CHECK(argmax_class({0.5, 0.5}) == 0);  // documented tie break toward class 0
  CHECK(argmax_class({0.2, 0.3, 0.5}) == 2);

  const auto params = init_mlp<double>(6, 10, 4, 31);
  Rng rng(32);
  std::vector<std::vector<double>> feats(9, std::vector<double>(6));
  for (auto& f : feats)
    for (auto& v : f) v = rng.gaussian();
  const auto pred = predict_labels(params, feats);
  REQUIRE(pred.labels.size() == 9);
  for (const auto& row : pred.posteriors) {
    double s = 0;
    for (double v : row) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  std::vector<std::vector<double>> bad = {{1.0, 2.0}};
  CHECK_THROWS_AS(predict_labels(params, bad), signal::param_error);
}

TEST_CASE("prediction is invariant to constant logit shifts") {
  Rng rng(61);
  std::vector<double> logits(5);
  for (auto& v : logits) v = rng.gaussian();
  Tensor<double> t({1, 5}, std::vector<double>(logits.begin(), logits.end()));
  const auto base = softmax_rows(t)[0];
  for (auto& v : t.data) v += 7.5;
  const auto shifted = softmax_rows(t)[0];
  CHECK(argmax_class(base) == argmax_class(shifted));
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(base[i] == doctest::Approx(shifted[i]).epsilon(1e-9));
}

TEST_CASE("classifier gradient passes gradcheck") {
  Rng rng(41);
  auto mk = [&](std::vector<std::size_t> s, double scale) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = scale * rng.gaussian();
    return t;
  };
  std::vector<Tensor<double>> params = {mk({6, 4}, 0.5),  mk({6}, 0.1), mk({6, 6}, 0.5),
                                        mk({6}, 0.1),     mk({3, 6}, 0.5), mk({3}, 0.1)};
  Tensor<double> x = mk({5, 4}, 1.0);
  const double err = gradcheck<double>(
      [&](Graph<double>& g, const std::vector<Graph<double>::Id>& p) {
        auto logits = g.linear(
            g.relu(g.linear(g.relu(g.linear(g.input(x), p[0], p[1])), p[2], p[3])), p[4],
            p[5]);
        return g.softmax_cross_entropy(logits, {0, 2, 1, 0, 2});
      },
      params, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("classifier checkpoint round trip") {
  const auto p = init_mlp<float>(12, 30, 2, 77);
  save_classifier(p, "clf_roundtrip.clsm");
  const auto q = load_classifier<float>("clf_roundtrip.clsm");
  CHECK(q.w1.data == p.w1.data);
  CHECK(q.b3.data == p.b3.data);
  CHECK(q.input_dim() == 12);
  CHECK(q.n_classes() == 2);
  std::filesystem::remove("clf_roundtrip.clsm");
}

TEST_CASE("feature CSV round trip keeps the pinned header") {
  std::vector<FeatureRow<double>> rows;
  FeatureRow<double> r;
  r.subject = "s00";
  r.trial_id = 3;
  r.sample_idx = 1;
  r.label = 1;
  r.values = {0.5, -1.25, 3.0};
  rows.push_back(r);
  write_features_csv(rows, "features_test.csv");
  std::ifstream in("features_test.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "trial_id,sample_idx,label,f0,f1,f2");
  const auto back = read_features_csv<double>("features_test.csv", "s00");
  REQUIRE(back.size() == 1);
  CHECK(back[0].trial_id == 3);
  CHECK(back[0].values == rows[0].values);
  std::filesystem::remove("features_test.csv");
}

TEST_CASE("DE shift law: trained_de(aX) = trained_de(X) + ln|a|") {
  const Hyperparams hp;
  const auto model = init_params<double>(hp, 6, 51);
  Rng rng(52);
  Tensor<double> x({6, 300});
  for (auto& v : x.data) v = rng.gaussian();
  const double a = 0.37;
  Tensor<double> ax({6, 300});
  for (std::size_t i = 0; i < x.size(); ++i) ax[i] = a * x[i];
  const auto d0 = trained_de(x, model.encoder);
  const auto d1 = trained_de(ax, model.encoder);
  for (std::size_t i = 0; i < d0.size(); ++i)
    CHECK(d1[i] - d0[i] == doctest::Approx(std::log(a)).epsilon(1e-6));
}
