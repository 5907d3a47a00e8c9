#include "clisa/synth.hpp"

#include <cmath>

#include "clisa/rng.hpp"

namespace clisa {

namespace {
constexpr double kTwoPi = 6.28318530717958647692;

/// Band-limited unit-variance noise: a seeded sum of 24 random sinusoids
/// drawn inside the band. Smooth, deterministic, no transform needed.
std::vector<double> banded_noise(std::size_t t_len, double fs, double lo, double hi,
                                 std::uint64_t seed) {
  constexpr std::size_t kComponents = 24;
  Rng rng(seed);
  std::vector<double> freq(kComponents), phase(kComponents), amp(kComponents);
  for (std::size_t r = 0; r < kComponents; ++r) {
    freq[r] = rng.uniform(lo, hi);
    phase[r] = rng.uniform(0.0, kTwoPi);
    amp[r] = rng.gaussian();
  }
  std::vector<double> out(t_len, 0.0);
  for (std::size_t r = 0; r < kComponents; ++r) {
    const double w = kTwoPi * freq[r] / fs;
    for (std::size_t t = 0; t < t_len; ++t) out[t] += amp[r] * std::sin(w * t + phase[r]);
  }
  double mean = 0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(t_len);
  double var = 0;
  for (double v : out) var += (v - mean) * (v - mean);
  var /= static_cast<double>(t_len);
  const double inv = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
  for (double& v : out) v = (v - mean) * inv;
  return out;
}

std::vector<double> unit_topography(std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(m);
  double norm = 0;
  for (auto& x : v) {
    x = rng.gaussian();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}
}  // namespace

void SynthSpec::validate() const {
  if (n_subjects < 2 || n_trials < 2 || n_classes < 2 || channels < 1)
    throw signal::param_error("synth: need >= 2 subjects, >= 2 trials, >= 2 classes");
  if (!(snr > 0)) throw signal::param_error("synth: SNR must be positive");
  if (!(fs > 0) || !(trial_seconds > 0)) throw signal::param_error("synth: bad timing");
  if (n_sources < 1 || n_sources > channels)
    throw signal::param_error("synth: sources must be in [1, channels]");
  if (identity_mixing && channels != n_sources)
    throw signal::param_error("synth: identity mixing requires channels == sources");
  if (n_classes > n_trials) throw signal::param_error("synth: more classes than trials");
  const double top = 0.4 * fs;  // keep inside a plausible pass band
  if (top <= 8.0) throw signal::param_error("synth: sampling rate too low");
}

SynthCorpus gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  const auto t_len = static_cast<std::size_t>(std::llround(spec.trial_seconds * spec.fs));
  const std::size_t m = spec.channels;

  SynthCorpus corpus;

  // source bands inside [6 Hz, 0.4 fs]: disjoint chunks, or one shared band
  // (single_band) so class information lives in the spatial pattern alone
  const double band_lo = 6.0, band_hi = 0.4 * spec.fs;
  const double chunk = (band_hi - band_lo) / static_cast<double>(spec.n_sources);
  for (std::size_t k = 0; k < spec.n_sources; ++k) {
    const double lo = spec.single_band ? band_lo : band_lo + chunk * static_cast<double>(k);
    corpus.source_bands.emplace_back(lo, lo + chunk * 0.7);
  }

  // ring electrode layout, unit radius
  for (std::size_t c = 0; c < m; ++c) {
    const double theta = kTwoPi * static_cast<double>(c) / static_cast<double>(m);
    corpus.positions.push_back({"ch" + std::to_string(c), std::cos(theta), std::sin(theta), 0.0});
  }

  // common topography plus per-subject jitter, unit columns; columns are
  // Gram-Schmidt orthogonalized so the sources have distinct spatial supports
  std::vector<std::vector<double>> common(spec.n_sources);
  for (std::size_t k = 0; k < spec.n_sources; ++k) {
    common[k] = unit_topography(m, derive_seed(spec.seed, "common-mixing", k));
    for (std::size_t prev = 0; prev < k; ++prev) {
      double dot = 0;
      for (std::size_t c = 0; c < m; ++c) dot += common[k][c] * common[prev][c];
      for (std::size_t c = 0; c < m; ++c) common[k][c] -= dot * common[prev][c];
    }
    double norm = 0;
    for (double v : common[k]) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : common[k]) v /= norm;
  }
  std::vector<std::vector<std::vector<double>>> mixing(spec.n_subjects);
  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    mixing[s].resize(spec.n_sources);
    for (std::size_t k = 0; k < spec.n_sources; ++k) {
      if (spec.identity_mixing) {
        mixing[s][k].assign(m, 0.0);
        mixing[s][k][k] = 1.0;
        continue;
      }
      auto jitter = unit_topography(m, derive_seed(spec.seed, "mixing-jitter", s * 64 + k));
      auto col = common[k];
      double norm = 0;
      for (std::size_t c = 0; c < m; ++c) {
        col[c] += spec.mixing_jitter * jitter[c];
        norm += col[c] * col[c];
      }
      norm = std::sqrt(norm);
      for (auto& v : col) v /= norm;
      mixing[s][k] = std::move(col);
    }
  }

  // distractor topographies are redrawn per (subject, trial): non-stationary
  // confounds that no fixed spatial pattern can cancel
  auto distractor_topo = [&](std::size_t s, std::size_t j, std::size_t d) {
    const std::uint64_t ix =
        spec.rotating_distractors ? (s * 64 + j) * 64 + d : s * 64 + d;
    return unit_topography(m, derive_seed(spec.seed, "distractor-topo", ix));
  };

  // shared latent sources per trial (identical across subjects), post-gain
  std::vector<std::vector<std::vector<double>>> sources(spec.n_trials);
  for (std::size_t j = 0; j < spec.n_trials; ++j) {
    const int label = spec.label_of(j);
    corpus.labels.push_back(label);
    Tensor<double> lat({spec.n_sources, t_len});
    sources[j].resize(spec.n_sources);
    for (std::size_t k = 0; k < spec.n_sources; ++k) {
      auto src = banded_noise(t_len, spec.fs, corpus.source_bands[k].first,
                              corpus.source_bands[k].second,
                              derive_seed(spec.seed, "source", j * 64 + k));
      const double gain = (k % spec.n_classes) == static_cast<std::size_t>(label)
                              ? spec.class_gain_hi
                              : spec.class_gain_lo;
      for (auto& v : src) v *= gain;
      for (std::size_t t = 0; t < t_len; ++t) lat.at2(k, t) = src[t];
      sources[j][k] = std::move(src);
    }
    corpus.latents.push_back(std::move(lat));
  }

  // assemble subjects
  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    std::vector<double> gains(m, 1.0);
    if (spec.channel_gain_sigma > 0) {
      Rng grng(derive_seed(spec.seed, "channel-gain", s));
      for (auto& g : gains) g = std::exp(spec.channel_gain_sigma * grng.gaussian());
    }
    Recording<float> rec;
    rec.subject_id = "s" + std::string(s < 10 ? "0" : "") + std::to_string(s);
    rec.sampling_rate = spec.fs;
    for (std::size_t c = 0; c < m; ++c) rec.channel_names.push_back(corpus.positions[c].name);

    for (std::size_t j = 0; j < spec.n_trials; ++j) {
      std::vector<double> shared(m * t_len, 0.0);
      for (std::size_t k = 0; k < spec.n_sources; ++k)
        for (std::size_t c = 0; c < m; ++c) {
          const double a = mixing[s][k][c];
          if (a == 0.0) continue;
          const auto& src = sources[j][k];
          for (std::size_t t = 0; t < t_len; ++t) shared[c * t_len + t] += a * src[t];
        }

      std::vector<double> noise(m * t_len, 0.0);
      for (std::size_t d = 0; d < spec.n_distractors; ++d) {
        const auto band = corpus.source_bands[d % spec.n_sources];
        auto course = banded_noise(t_len, spec.fs, band.first, band.second,
                                   derive_seed(spec.seed, "distractor", (s * 64 + j) * 64 + d));
        const auto topo = distractor_topo(s, j, d);
        for (std::size_t c = 0; c < m; ++c) {
          const double b = topo[c];
          for (std::size_t t = 0; t < t_len; ++t) noise[c * t_len + t] += b * course[t];
        }
      }
      {
        Rng wrng(derive_seed(spec.seed, "sensor", s * 64 + j));
        for (auto& v : noise) v += 0.3 * wrng.gaussian();
      }

      double p_shared = 0, p_noise = 0;
      for (double v : shared) p_shared += v * v;
      for (double v : noise) p_noise += v * v;
      const double alpha =
          p_noise > 0 ? std::sqrt(p_shared / (spec.snr * p_noise)) : 0.0;

      Trial<float> tr;
      tr.trial_id = static_cast<int>(j);
      tr.stimulus_id = static_cast<int>(j);
      tr.label = corpus.labels[j];
      tr.signal = Tensor<float>({m, t_len});
      for (std::size_t c = 0; c < m; ++c)
        for (std::size_t t = 0; t < t_len; ++t)
          tr.signal.at2(c, t) = static_cast<float>(
              gains[c] * (shared[c * t_len + t] + alpha * noise[c * t_len + t]));
      rec.trials.push_back(std::move(tr));
    }
    rec.validate();
    corpus.recordings.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace clisa
