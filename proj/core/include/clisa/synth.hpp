#pragma once

#include <cstdint>
#include <vector>

#include "clisa/recording.hpp"
#include "clisa/signal.hpp"

namespace clisa {

/// Synthetic multi-subject corpus: per stimulus, class-conditioned band-limited
/// latent sources whose time courses are identical across subjects; per
/// subject, a fixed mixing of those sources plus subject-specific banded
/// distractors and sensor noise at the requested SNR.
struct SynthSpec {
  std::size_t n_subjects = 8;
  std::size_t n_trials = 12;   // one stimulus per trial, labels balanced round-robin
  std::size_t n_classes = 2;
  std::size_t channels = 20;
  double fs = 100.0;
  double trial_seconds = 22.0;
  std::size_t n_sources = 2;      // shared class-coding sources
  std::size_t n_distractors = 3;  // subject-specific confounds, same bands as sources
  double snr = 0.15;              // shared signal power / noise power, per channel
  double mixing_jitter = 0.7;     // subject deviation from the common topography
  bool identity_mixing = false;   // requires channels == n_sources
  double class_gain_hi = 1.0;
  double class_gain_lo = 0.35;
  bool single_band = true;           // all sources share one band: class is spatial only
  bool rotating_distractors = true;  // redraw distractor topographies per trial
  double channel_gain_sigma = 0.4;   // per-subject lognormal electrode gain spread
  std::uint64_t seed = 1;

  void validate() const;
  int label_of(std::size_t stimulus) const {
    return static_cast<int>(stimulus % n_classes);
  }
};

struct SynthCorpus {
  std::vector<Recording<float>> recordings;
  std::vector<int> labels;  // per stimulus
  // post-gain latent time courses, [n_sources x T] per trial (test oracles)
  std::vector<Tensor<double>> latents;
  std::vector<signal::ChannelPos> positions;
  std::vector<std::pair<double, double>> source_bands;  // Hz
};

SynthCorpus gen_synthetic(const SynthSpec& spec);

template <class Real>
std::vector<Recording<Real>> cast_recordings(const std::vector<Recording<float>>& recs) {
  std::vector<Recording<Real>> out;
  out.reserve(recs.size());
  for (const auto& r : recs) {
    Recording<Real> c;
    c.subject_id = r.subject_id;
    c.sampling_rate = r.sampling_rate;
    c.channel_names = r.channel_names;
    for (const auto& t : r.trials) {
      Trial<Real> tc;
      tc.trial_id = t.trial_id;
      tc.stimulus_id = t.stimulus_id;
      tc.label = t.label;
      tc.signal = t.signal.template cast<Real>();
      c.trials.push_back(std::move(tc));
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace clisa
