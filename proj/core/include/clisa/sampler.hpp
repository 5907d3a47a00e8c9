#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "clisa/normalize.hpp"
#include "clisa/recording.hpp"
#include "clisa/rng.hpp"

namespace clisa {

/// 2N time-aligned samples from one subject pair: one segment per trial,
/// the same offset for both subjects, so (i, A) and (i, B) are a positive pair.
template <class Real>
struct Minibatch {
  std::string subject_a, subject_b;
  std::vector<Tensor<Real>> samples_a;  // N tensors [M x T]
  std::vector<Tensor<Real>> samples_b;
  std::vector<std::size_t> segment_offsets;  // per trial, shared by A and B
  std::vector<int> labels;                   // per trial

  std::size_t n_trials() const { return samples_a.size(); }
};

/// All C(n,2) unordered subject pairs in seeded shuffled order. Reshuffle once
/// per epoch by passing a per-epoch derived seed.
inline std::vector<std::pair<std::size_t, std::size_t>> enumerate_subject_pairs(
    std::size_t n_subjects, std::uint64_t seed) {
  if (n_subjects < 2)
    throw config_error("enumerate_subject_pairs: need at least 2 subjects");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n_subjects * (n_subjects - 1) / 2);
  for (std::size_t a = 0; a < n_subjects; ++a)
    for (std::size_t b = a + 1; b < n_subjects; ++b) pairs.emplace_back(a, b);
  Rng rng(seed);
  rng.shuffle(pairs);
  return pairs;
}

/// One minibatch for a subject pair. Offsets are drawn uniformly on a grid of
/// step = half the sample length, identically for both subjects. Trials are
/// matched by stimulus_id.
template <class Real>
Minibatch<Real> draw_minibatch(const Recording<Real>& rec_a, const Recording<Real>& rec_b,
                               std::size_t sample_len, Rng& rng) {
  if (rec_a.trials.size() != rec_b.trials.size())
    throw data_error("draw_minibatch: trial count mismatch between " + rec_a.subject_id +
                     " and " + rec_b.subject_id);
  Minibatch<Real> mb;
  mb.subject_a = rec_a.subject_id;
  mb.subject_b = rec_b.subject_id;
  const std::size_t step = std::max<std::size_t>(1, sample_len / 2);
  for (std::size_t i = 0; i < rec_a.trials.size(); ++i) {
    const auto& ta = rec_a.trials[i];
    const auto& tb = rec_b.trials[i];
    if (ta.stimulus_id != tb.stimulus_id)
      throw data_error("draw_minibatch: stimulus mismatch at trial index " +
                       std::to_string(i));
    const std::size_t len = std::min(ta.signal.dim(1), tb.signal.dim(1));
    if (sample_len > len)
      throw data_error("draw_minibatch: trial " + std::to_string(ta.trial_id) +
                       " shorter than sample length");
    const std::size_t slots = (len - sample_len) / step + 1;
    const std::size_t off = step * rng.uniform_index(slots);
    mb.segment_offsets.push_back(off);
    mb.samples_a.push_back(signal::slice_time(ta.signal, off, sample_len));
    mb.samples_b.push_back(signal::slice_time(tb.signal, off, sample_len));
    mb.labels.push_back(ta.label);
  }
  return mb;
}

/// Stratified normalization of a minibatch: per subject, per channel, z-score
/// the channel's concatenation across that subject's samples. In place.
template <class Real>
void stratified_normalize(Minibatch<Real>& mb) {
  std::vector<Tensor<Real>*> group;
  for (auto* side : {&mb.samples_a, &mb.samples_b}) {
    group.clear();
    for (auto& t : *side) group.push_back(&t);
    stratified_normalize_group(group);
  }
}

/// One contrastive epoch: every subject pair exactly once, in the seeded
/// order, each with a freshly drawn time-aligned minibatch.
template <class Real>
std::vector<Minibatch<Real>> epoch(const std::vector<Recording<Real>>& recordings,
                                   std::size_t sample_len, std::uint64_t seed) {
  if (recordings.size() < 2) throw config_error("epoch: need at least 2 recordings");
  auto pairs = enumerate_subject_pairs(recordings.size(), derive_seed(seed, "pair-order"));
  std::vector<Minibatch<Real>> out;
  out.reserve(pairs.size());
  Rng rng(derive_seed(seed, "offsets"));
  for (auto [a, b] : pairs)
    out.push_back(draw_minibatch(recordings[a], recordings[b], sample_len, rng));
  return out;
}

}  // namespace clisa
