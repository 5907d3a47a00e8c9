#include <cmath>
#include <filesystem>
#include <fstream>

#include "clisa/contrastive.hpp"
#include "clisa/gradcheck.hpp"
#include "clisa/synth.hpp"
#include "doctest.h"

using namespace clisa;

namespace {

// literal loss definition as the oracle: loops over the 2N-1 denominator terms
double brute_force_ntxent(const Tensor<double>& z, std::size_t n, double tau,
                          std::size_t* term_count = nullptr) {
  const std::size_t d = z.dim(1);
  auto row = [&](std::size_t i) { return std::span<const double>(&z.data[i * d], d); };
  auto sim = [&](std::size_t i, std::size_t j) { return cosine_sim(row(i), row(j)); };
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t side = 0; side < 2; ++side) {
    const std::size_t base = side == 0 ? 0 : n;
    const std::size_t other = side == 0 ? n : 0;
    for (std::size_t i = 0; i < n; ++i) {
      double denom = 0;
      std::size_t terms = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) {
          denom += std::exp(sim(base + i, base + j) / tau);
          ++terms;
        }
      }
      for (std::size_t j = 0; j < n; ++j) {
        denom += std::exp(sim(base + i, other + j) / tau);
        ++terms;
      }
      counted = terms;
      total += -std::log(std::exp(sim(base + i, other + i) / tau) / denom);
    }
  }
  if (term_count) *term_count = counted;
  return total;
}

Tensor<double> random_embeddings(std::size_t n2, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> z({n2, d});
  for (auto& v : z.data) v = rng.gaussian();
  return z;
}

}  // namespace

TEST_CASE("cosine similarity basics") {
  const std::vector<double> v = {1, 2, 3};
  CHECK(cosine_sim(std::span<const double>(v.data(), 3),
                   std::span<const double>(v.data(), 3)) == doctest::Approx(1.0));
  const std::vector<double> a = {1, 0}, b = {0, 1};
  CHECK(cosine_sim(std::span<const double>(a.data(), 2),
                   std::span<const double>(b.data(), 2)) == doctest::Approx(0.0));
  const std::vector<double> u = {1, 2}, w = {2, 1};
  CHECK(cosine_sim(std::span<const double>(u.data(), 2),
                   std::span<const double>(w.data(), 2)) == doctest::Approx(0.8));
  const std::vector<double> zero = {0, 0};
  CHECK_THROWS_AS(cosine_sim(std::span<const double>(zero.data(), 2),
                             std::span<const double>(u.data(), 2)),
                  numeric_error);
}

TEST_CASE("cosine similarity is scale invariant") {
  Rng rng(3);
  std::vector<double> u(5), v(5);
  for (auto& x : u) x = rng.gaussian();
  for (auto& x : v) x = rng.gaussian();
  const double s = cosine_sim(std::span<const double>(u.data(), 5),
                              std::span<const double>(v.data(), 5));
  std::vector<double> u2 = u, v2 = v;
  for (auto& x : u2) x *= 7.0;
  for (auto& x : v2) x *= 0.01;
  CHECK(cosine_sim(std::span<const double>(u2.data(), 5),
                   std::span<const double>(v2.data(), 5)) == doctest::Approx(s));
}

TEST_CASE("nt_xent: identical embeddings give 2N ln(2N-1)") {
  const std::size_t n = 28;
  Tensor<double> z({2 * n, 6});
  for (std::size_t i = 0; i < 2 * n; ++i)
    for (std::size_t j = 0; j < 6; ++j) z.at2(i, j) = 0.37 * (static_cast<double>(j) + 1.0);
  EmbeddingBatch<double> batch{z, 0.5};
  const double loss = nt_xent(batch);
  const double expected = 2.0 * 28.0 * std::log(55.0);
  CHECK(std::abs(loss - expected) < 1e-9);
  CHECK(expected == doctest::Approx(224.41).epsilon(1e-3));
}

TEST_CASE("nt_xent: N=2 hand-computed positive pair") {
  // sims: (1A,1B) = 1, every other pair 0
  Tensor<double> z({4, 3});
  z.at2(0, 0) = 1;  // 1A
  z.at2(1, 1) = 1;  // 2A
  z.at2(2, 0) = 1;  // 1B, identical to 1A
  z.at2(3, 2) = 1;  // 2B
  const double e = std::exp(1.0);
  // anchor 1A: denominator e^0 (2A) + e^1 (1B) + e^0 (2B) = e + 2
  const double l1a = std::log((e + 2.0) / e);
  CHECK(l1a == doctest::Approx(0.5514).epsilon(1e-3));
  // the other anchors by hand: 1B mirrors 1A; anchors 2A/2B see three
  // unit terms in the denominator (all their sims are 0)
  const double l2 = std::log(3.0);
  const double expected_total = 2.0 * l1a + 2.0 * l2;
  EmbeddingBatch<double> batch{z, 1.0};
  CHECK(nt_xent(batch) == doctest::Approx(expected_total).epsilon(1e-12));
  std::size_t terms = 0;
  CHECK(nt_xent(batch) == doctest::Approx(brute_force_ntxent(z, 2, 1.0, &terms)).epsilon(1e-12));
  CHECK(terms == 3);  // 2N - 1
}

TEST_CASE("nt_xent matches the brute-force oracle on random batches") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const std::size_t n = 5;
    const auto z = random_embeddings(2 * n, 7, seed);
    EmbeddingBatch<double> batch{z, 0.37};
    CHECK(nt_xent(batch) == doctest::Approx(brute_force_ntxent(z, n, 0.37)).epsilon(1e-10));
  }
}

TEST_CASE("nt_xent graph path agrees with the plain path") {
  const std::size_t n = 4;
  const auto z = random_embeddings(2 * n, 6, 17);
  EmbeddingBatch<double> batch{z, 0.5};
  Graph<double> g;
  auto sims = g.gram(g.l2_normalize_rows(g.input(z)));
  auto loss = g.ntxent_from_gram(sims, 0.5, n);
  CHECK(g.value(loss)[0] == doctest::Approx(nt_xent(batch)).epsilon(1e-10));
}

TEST_CASE("nt_xent denominator has exactly 2N-1 terms per anchor") {
  for (std::size_t n : {std::size_t{2}, std::size_t{5}, std::size_t{28}}) {
    for (std::size_t anchor : {std::size_t{0}, n - 1, n, 2 * n - 1}) {
      const auto denom = ntxent_denominator(n, anchor);
      CHECK(denom.size() == 2 * n - 1);
      const std::size_t pos = anchor < n ? anchor + n : anchor - n;
      CHECK(std::count(denom.begin(), denom.end(), pos) == 1);
      CHECK(std::count(denom.begin(), denom.end(), anchor) == 0);
    }
  }
}

TEST_CASE("nt_xent with tau -> 0 and perfectly separated sims approaches 0") {
  Tensor<double> z({4, 2});
  z.at2(0, 0) = 1;
  z.at2(2, 0) = 1;  // pair 1 aligned
  z.at2(1, 0) = -1;
  z.at2(3, 0) = -1;  // pair 2 aligned, opposed to pair 1
  EmbeddingBatch<double> batch{z, 1e-3};
  CHECK(nt_xent(batch) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("nt_xent is invariant to positive rescaling of single embeddings") {
  const std::size_t n = 4;
  auto z = random_embeddings(2 * n, 6, 11);
  EmbeddingBatch<double> batch{z, 0.5};
  const double base = nt_xent(batch);
  Rng rng(12);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const double a = 0.1 + 5.0 * rng.uniform();
    for (std::size_t j = 0; j < 6; ++j) z.at2(i, j) *= a;
  }
  EmbeddingBatch<double> scaled{z, 0.5};
  CHECK(nt_xent(scaled) == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("nt_xent is symmetric under swapping subjects A and B") {
  const std::size_t n = 5;
  const auto z = random_embeddings(2 * n, 4, 21);
  Tensor<double> swapped({2 * n, 4});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      swapped.at2(i, j) = z.at2(n + i, j);
      swapped.at2(n + i, j) = z.at2(i, j);
    }
  EmbeddingBatch<double> a{z, 0.5}, b{swapped, 0.5};
  CHECK(nt_xent(a) == doctest::Approx(nt_xent(b)).epsilon(1e-12));
  CHECK_THROWS_AS(nt_xent(EmbeddingBatch<double>{random_embeddings(2, 3, 1), 0.5}),
                  config_error);
}

TEST_CASE("nt_xent graph op gradient passes gradcheck") {
  std::vector<Tensor<double>> params = {random_embeddings(8, 5, 31)};
  const double err = gradcheck<double>(
      [](Graph<double>& g, const std::vector<Graph<double>::Id>& p) {
        auto sims = g.gram(g.l2_normalize_rows(p[0]));
        return g.ntxent_from_gram(sims, 0.5, 4);
      },
      params, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("adam: bias-corrected first step and decoupled decay") {
  SUBCASE("first step moves by ~lr for unit gradient") {
    Tensor<double> p({1}, {1.0});
    Tensor<double> g({1}, {1.0});
    AdamState<double> st;
    std::vector<Tensor<double>*> ps = {&p};
    st.init(ps);
    CHECK(adam_step(st, ps, {&g}, 0.01));
    CHECK(p[0] == doctest::Approx(1.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-10));
  }
  SUBCASE("zero gradients with zero decay leave parameters untouched") {
    Tensor<double> p({2}, {0.5, -0.5});
    Tensor<double> g({2});
    AdamState<double> st;
    std::vector<Tensor<double>*> ps = {&p};
    st.init(ps);
    adam_step(st, ps, {&g}, 0.01);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == -0.5);
  }
  SUBCASE("decoupled decay scales by (1 - lr*lambda) per step") {
    Tensor<double> p({1}, {2.0});
    Tensor<double> g({1});
    AdamState<double> st;
    st.weight_decay = 0.015;
    std::vector<Tensor<double>*> ps = {&p};
    st.init(ps);
    adam_step(st, ps, {&g}, 7e-4);
    CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 1.05e-5)).epsilon(1e-12));
  }
  SUBCASE("non-finite gradients abort the step") {
    Tensor<double> p({1}, {1.0});
    Tensor<double> g({1}, {std::nan("")});
    AdamState<double> st;
    std::vector<Tensor<double>*> ps = {&p};
    st.init(ps);
    CHECK_FALSE(adam_step(st, ps, {&g}, 0.01));
    CHECK(p[0] == 1.0);
    CHECK(st.step == 0);
  }
}

TEST_CASE("cosine warm-restart schedule") {
  const auto sched = make_warm_restart_schedule(100, 1, 7e-4);
  REQUIRE(sched.cycle_steps.size() == 4);
  CHECK(sched.cycle_steps[0] == 12);
  CHECK(sched.cycle_steps[1] == 12);
  CHECK(sched.cycle_steps[2] == 25);
  CHECK(sched.cycle_steps[3] == 51);

  // t = 0 of every cycle restarts at lr_max
  CHECK(cosine_warm_restart_lr(0, sched) == doctest::Approx(7e-4));
  CHECK(cosine_warm_restart_lr(12, sched) == doctest::Approx(7e-4));
  CHECK(cosine_warm_restart_lr(24, sched) == doctest::Approx(7e-4));
  CHECK(cosine_warm_restart_lr(49, sched) == doctest::Approx(7e-4));

  // pure cosine form at the endpoints and midpoint
  CHECK(cosine_lr(0.0, 10.0, 7e-4, 0.0) == doctest::Approx(7e-4));
  CHECK(cosine_lr(10.0, 10.0, 7e-4, 1e-5) == doctest::Approx(1e-5));
  CHECK(cosine_lr(5.0, 10.0, 7e-4, 1e-5) == doctest::Approx((7e-4 + 1e-5) / 2.0));
}

TEST_CASE("retrieval accuracy") {
  SUBCASE("exact copies win against random negatives") {
    Rng rng(41);
    const std::size_t n = 6, d = 8;
    Tensor<double> z({2 * n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double v = rng.gaussian();
        z.at2(i, j) = v;
        z.at2(n + i, j) = v;
      }
    CHECK(retrieval_accuracy(z, n) == doctest::Approx(1.0));
  }
  SUBCASE("random embeddings sit near chance 1/(2N-1)") {
    const std::size_t n = 28;
    double total = 0;
    const int runs = 60;
    for (int r = 0; r < runs; ++r)
      total += retrieval_accuracy(random_embeddings(2 * n, 16, 1000 + r), n);
    const double mean = total / runs;
    CHECK(mean > 0.3 / 55.0);
    CHECK(mean < 3.0 / 55.0);
  }
}

TEST_CASE("train_contrastive: loss decreases on an easy pair") {
  SynthSpec spec;
  spec.n_subjects = 2;
  spec.n_trials = 6;
  spec.channels = 4;
  spec.n_sources = 2;
  spec.n_distractors = 1;
  spec.snr = 3.0;
  spec.trial_seconds = 4.0;
  spec.seed = 5;
  const auto corpus = gen_synthetic(spec);
  const auto recs = cast_recordings<float>(corpus.recordings);

  Hyperparams hp;
  hp.k1 = 4;
  hp.k2 = 4;
  hp.p1 = 12;
  hp.pool = 8;
  hp.p2 = 3;
  hp.c = 2;
  hp.sample_len_s = 4.0;  // == trial length: the same minibatch every epoch
  hp.lr = 3e-3;
  hp.epochs = 5;
  hp.patience = 5;
  auto [params, report] = train_contrastive(recs, hp, 77, 0);
  REQUIRE(report.epochs.size() == 5);
  CHECK(report.epochs.back().mean_loss < report.epochs.front().mean_loss);
  CHECK(report.stop_reason == "max_epochs");
}

TEST_CASE("train_contrastive: patience 0 stops after first non-improving epoch") {
  SynthSpec spec;
  spec.n_subjects = 3;
  spec.n_trials = 4;
  spec.channels = 3;
  spec.n_sources = 2;
  spec.n_distractors = 1;
  spec.snr = 0.05;  // hard task so retrieval stalls quickly
  spec.trial_seconds = 6.0;
  spec.seed = 6;
  const auto recs = cast_recordings<float>(gen_synthetic(spec).recordings);

  Hyperparams hp;
  hp.k1 = 3;
  hp.k2 = 2;
  hp.p1 = 8;
  hp.pool = 5;
  hp.p2 = 2;
  hp.sample_len_s = 1.5;
  hp.epochs = 50;
  hp.patience = 0;
  auto [params, report] = train_contrastive(recs, hp, 3, 1);
  CHECK(report.stop_reason == "patience");
  CHECK(report.epochs.size() == report.best_epoch + 1);
}

TEST_CASE("train_contrastive requires a validation pair holdout to fit") {
  SynthSpec spec;
  spec.n_subjects = 2;
  spec.n_trials = 4;
  spec.channels = 3;
  spec.trial_seconds = 6.0;
  const auto recs = cast_recordings<float>(gen_synthetic(spec).recordings);
  Hyperparams hp;
  hp.sample_len_s = 1.0;
  CHECK_THROWS_AS(train_contrastive(recs, hp, 1, 1), config_error);
}

TEST_CASE("train report CSV has the pinned column layout") {
  TrainReport report;
  report.epochs.push_back({1, 3.25, 0.5, 7e-4});
  report.epochs.push_back({2, 2.5, 0.625, 6.8e-4});
  write_train_report_csv(report, "train_report_test.csv");
  std::ifstream in("train_report_test.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,mean_loss,val_retrieval_acc,lr");
  std::getline(in, line);
  CHECK(line.substr(0, 7) == "1,3.25,");
  std::filesystem::remove("train_report_test.csv");
}
