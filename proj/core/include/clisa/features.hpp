#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "clisa/model.hpp"
#include "clisa/recording.hpp"
#include "clisa/signal.hpp"

namespace clisa {

constexpr double kDeVarianceFloor = 1e-12;

/// Differential entropy of a variance in nats: 0.5 ln(2 pi e var).
inline double de_of_variance(double var) {
  return 0.5 * std::log(2.0 * 3.14159265358979323846 * 2.71828182845904523536 *
                        std::max(var, kDeVarianceFloor));
}

/// Frozen-encoder latents, then per-(k2,k1) differential entropy over time.
/// Population variance, natural log, variance floored at 1e-12.
template <class Real>
Tensor<Real> trained_de(const Tensor<Real>& x, const EncoderParams<Real>& enc) {
  const Tensor<Real> h = encoder_forward(x, enc);
  const std::size_t k2 = h.dim(0), k1 = h.dim(1), t = h.dim(2);
  Tensor<Real> out({k2, k1});
  for (std::size_t a = 0; a < k2; ++a)
    for (std::size_t b = 0; b < k1; ++b) {
      double mean = 0;
      for (std::size_t u = 0; u < t; ++u) mean += h.at3(a, b, u);
      mean /= static_cast<double>(t);
      double var = 0;
      for (std::size_t u = 0; u < t; ++u) {
        const double d = static_cast<double>(h.at3(a, b, u)) - mean;
        var += d * d;
      }
      var /= static_cast<double>(t);
      out.at2(a, b) = static_cast<Real>(de_of_variance(var));
    }
  return out;
}

/// Classic frequency-band DE baseline: theta, alpha, beta, gamma.
inline std::vector<std::pair<double, double>> default_bands() {
  return {{4.0, 8.0}, {8.0, 13.0}, {13.0, 30.0}, {30.0, 47.0}};
}

/// Band-pass each channel into each band, then DE per (band, channel).
template <class Real>
Tensor<Real> raw_de(const Tensor<Real>& x, const std::vector<std::pair<double, double>>& bands,
                    double fs) {
  require_shape(x, 2, "raw_de input");
  const std::size_t m = x.dim(0), t = x.dim(1);
  Tensor<Real> out({bands.size(), m});
  for (std::size_t b = 0; b < bands.size(); ++b) {
    if (!(bands[b].second < fs / 2.0))
      throw signal::param_error("raw_de: band above Nyquist");
    const Tensor<Real> filtered = signal::bandpass(x, bands[b].first, bands[b].second, fs);
    for (std::size_t c = 0; c < m; ++c) {
      double mean = 0;
      for (std::size_t u = 0; u < t; ++u) mean += filtered.at2(c, u);
      mean /= static_cast<double>(t);
      double var = 0;
      for (std::size_t u = 0; u < t; ++u) {
        const double d = static_cast<double>(filtered.at2(c, u)) - mean;
        var += d * d;
      }
      var /= static_cast<double>(t);
      out.at2(b, c) = static_cast<Real>(de_of_variance(var));
    }
  }
  return out;
}

// ---- linear dynamical system smoothing -------------------------------------------

/// Scalar random-walk Kalman filter + RTS smoother per feature dimension.
/// State transition 1, observation 1, process/observation variance ratio q.
/// Sequences must not cross trial boundaries; empty input is a no-op.
template <class Real>
void lds_smooth(std::vector<std::vector<Real>>& seq, double q) {
  if (!(q > 0)) throw signal::param_error("lds_smooth: noise ratio must be positive");
  const std::size_t n = seq.size();
  if (n < 2) return;
  const std::size_t d = seq[0].size();
  for (const auto& row : seq)
    if (row.size() != d) throw dim_error("lds_smooth: ragged feature rows");

  std::vector<double> xf(n), pf(n), xp(n), pp(n);
  for (std::size_t f = 0; f < d; ++f) {
    // forward pass; observation variance 1, process variance q
    xf[0] = static_cast<double>(seq[0][f]);
    pf[0] = 1.0;
    for (std::size_t t = 1; t < n; ++t) {
      xp[t] = xf[t - 1];
      pp[t] = pf[t - 1] + q;
      const double gain = pp[t] / (pp[t] + 1.0);
      xf[t] = xp[t] + gain * (static_cast<double>(seq[t][f]) - xp[t]);
      pf[t] = (1.0 - gain) * pp[t];
    }
    // backward (Rauch-Tung-Striebel)
    double xs = xf[n - 1];
    seq[n - 1][f] = static_cast<Real>(xs);
    for (std::size_t t = n - 1; t-- > 0;) {
      const double c = pf[t] / pp[t + 1];
      xs = xf[t] + c * (xs - xp[t + 1]);
      seq[t][f] = static_cast<Real>(xs);
    }
  }
}

// ---- windowed extraction over recordings -------------------------------------------

template <class Real>
struct FeatureRow {
  std::string subject;
  int trial_id = 0;
  int stimulus_id = 0;
  int sample_idx = 0;
  int label = 0;
  std::vector<Real> values;
};

enum class FeatureKind { trained, raw };

/// Consecutive non-overlapping windows of `window_s` seconds per trial,
/// DE per window, then LDS smoothing along each trial. The trained path runs
/// the frozen encoder per window; the raw path band-passes whole trials once
/// (windowed variances afterwards) to keep filter transients out of the
/// 1-second windows. Feature order is k2-major (trained) or band-major (raw).
template <class Real>
std::vector<FeatureRow<Real>> extract_features(const Recording<Real>& rec,
                                               const EncoderParams<Real>* enc,
                                               FeatureKind kind, double window_s,
                                               double lds_q,
                                               const std::vector<int>* stimulus_filter) {
  const auto window = static_cast<std::size_t>(std::llround(window_s * rec.sampling_rate));
  if (window == 0) throw signal::param_error("extract_features: empty window");
  const auto bands = default_bands();
  std::vector<FeatureRow<Real>> out;
  for (const auto& trial : rec.trials) {
    if (stimulus_filter &&
        std::find(stimulus_filter->begin(), stimulus_filter->end(), trial.stimulus_id) ==
            stimulus_filter->end())
      continue;
    const std::size_t t_len = trial.signal.dim(1);
    if (t_len < window) continue;

    std::vector<std::vector<Real>> rows;
    if (kind == FeatureKind::trained) {
      for (std::size_t off = 0; off + window <= t_len; off += window) {
        const auto x = signal::slice_time(trial.signal, off, window);
        auto de = trained_de(x, *enc);
        rows.push_back(std::move(de.data));
      }
    } else {
      const std::size_t m = trial.signal.dim(0);
      // per-band full-trial filtering, then per-window variances
      std::vector<Tensor<Real>> banded;
      for (const auto& band : bands) {
        if (!(band.second < rec.sampling_rate / 2.0))
          throw signal::param_error("extract_features: band above Nyquist");
        banded.push_back(signal::bandpass(trial.signal, band.first, band.second,
                                          rec.sampling_rate));
      }
      for (std::size_t off = 0; off + window <= t_len; off += window) {
        std::vector<Real> row(bands.size() * m);
        for (std::size_t b = 0; b < bands.size(); ++b)
          for (std::size_t c = 0; c < m; ++c) {
            double mean = 0;
            for (std::size_t u = 0; u < window; ++u) mean += banded[b].at2(c, off + u);
            mean /= static_cast<double>(window);
            double var = 0;
            for (std::size_t u = 0; u < window; ++u) {
              const double dv = static_cast<double>(banded[b].at2(c, off + u)) - mean;
              var += dv * dv;
            }
            var /= static_cast<double>(window);
            row[b * m + c] = static_cast<Real>(de_of_variance(var));
          }
        rows.push_back(std::move(row));
      }
    }

    lds_smooth(rows, lds_q);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      FeatureRow<Real> fr;
      fr.subject = rec.subject_id;
      fr.trial_id = trial.trial_id;
      fr.stimulus_id = trial.stimulus_id;
      fr.sample_idx = static_cast<int>(i);
      fr.label = trial.label;
      fr.values = std::move(rows[i]);
      out.push_back(std::move(fr));
    }
  }
  return out;
}

// ---- CSV interchange ------------------------------------------------------------------

template <class Real>
void write_features_csv(const std::vector<FeatureRow<Real>>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw data_error("cannot write feature file " + path);
  if (rows.empty()) {
    os << "trial_id,sample_idx,label\n";
    return;
  }
  os << "trial_id,sample_idx,label";
  for (std::size_t i = 0; i < rows[0].values.size(); ++i) os << ",f" << i;
  os << '\n';
  char buf[64];
  for (const auto& r : rows) {
    os << r.trial_id << ',' << r.sample_idx << ',' << r.label;
    for (Real v : r.values) {
      std::snprintf(buf, sizeof buf, ",%.17g", static_cast<double>(v));
      os << buf;
    }
    os << '\n';
  }
}

template <class Real>
std::vector<FeatureRow<Real>> read_features_csv(const std::string& path,
                                                const std::string& subject) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open feature file " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error("empty feature file " + path);
  std::vector<FeatureRow<Real>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    FeatureRow<Real> r;
    r.subject = subject;
    const char* p = line.c_str();
    char* end = nullptr;
    r.trial_id = static_cast<int>(std::strtol(p, &end, 10));
    p = end + 1;
    r.sample_idx = static_cast<int>(std::strtol(p, &end, 10));
    p = end + 1;
    r.label = static_cast<int>(std::strtol(p, &end, 10));
    p = end;
    while (*p == ',') {
      ++p;
      r.values.push_back(static_cast<Real>(std::strtod(p, &end)));
      p = end;
    }
    r.stimulus_id = r.trial_id;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace clisa
