#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clisa/tensor.hpp"

namespace clisa::signal {

/// Invalid filter band, missing channel, bad segmentation request.
struct param_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ChannelPos {
  std::string name;
  double x = 0, y = 0, z = 0;
};

/// Plain-text electrode coordinates, one `name x y z` line per channel.
std::vector<ChannelPos> load_channel_positions(const std::string& path);

// ---- zero-phase band-pass ----------------------------------------------------

/// One second-order section, direct form II transposed, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

/// Order-4 Butterworth high-pass + order-4 low-pass as biquad cascades.
std::vector<Biquad> butter_bandpass_sections(double low_hz, double high_hz, double fs);

/// Forward-backward (zero-phase) filtering with odd-reflection padding.
void filtfilt(const std::vector<Biquad>& sos, std::vector<double>& x);

/// Band-pass every channel of [M x T] in place (double internally).
void bandpass_rows(std::vector<double>& data, std::size_t channels, std::size_t time,
                   double low_hz, double high_hz, double fs);

template <class Real>
Tensor<Real> bandpass(const Tensor<Real>& sig, double low_hz, double high_hz, double fs) {
  require_shape(sig, 2, "bandpass input");
  std::vector<double> work(sig.data.begin(), sig.data.end());
  bandpass_rows(work, sig.dim(0), sig.dim(1), low_hz, high_hz, fs);
  Tensor<Real> out(sig.shape);
  for (std::size_t i = 0; i < work.size(); ++i) out[i] = static_cast<Real>(work[i]);
  return out;
}

// ---- re-referencing ------------------------------------------------------------

enum class RerefMode { average, mastoids };

/// average: subtract the per-time-point channel mean. mastoids: subtract
/// (ch_a + ch_b)/2 where the indices name the mastoid channels.
template <class Real>
Tensor<Real> rereference(const Tensor<Real>& sig, RerefMode mode, std::size_t ch_a = 0,
                         std::size_t ch_b = 0) {
  require_shape(sig, 2, "rereference input");
  const std::size_t m = sig.dim(0), t = sig.dim(1);
  if (mode == RerefMode::mastoids && (ch_a >= m || ch_b >= m))
    throw param_error("rereference: mastoid channel index out of range");
  Tensor<Real> out(sig.shape);
  for (std::size_t u = 0; u < t; ++u) {
    double ref = 0;
    if (mode == RerefMode::average) {
      for (std::size_t c = 0; c < m; ++c) ref += sig.at2(c, u);
      ref /= static_cast<double>(m);
    } else {
      ref = 0.5 * (static_cast<double>(sig.at2(ch_a, u)) + sig.at2(ch_b, u));
    }
    for (std::size_t c = 0; c < m; ++c)
      out.at2(c, u) = static_cast<Real>(sig.at2(c, u) - ref);
  }
  return out;
}

/// Resolve a channel name to its row index.
std::size_t channel_index(const std::vector<std::string>& names, const std::string& name);

// ---- outlier repair -------------------------------------------------------------

struct RepairReport {
  std::vector<std::size_t> interpolated_channels;
  std::vector<std::size_t> jump_repairs;  // per channel
  std::size_t total_jumps = 0;
};

/// Channel-level repair: channels whose fraction of |x| > 3 * median(|x|)
/// exceeds 30% are replaced by the mean of their three nearest clean channels
/// (Euclidean distance on electrode positions). Then a left-to-right scan
/// clamps amplitude jumps: |x_t| - |x_{t-1}| > jump_threshold (repaired
/// predecessor) sets x_t := x_{t-1}. Idempotent.
void repair_outliers_rows(std::vector<double>& data, std::size_t channels, std::size_t time,
                          const std::vector<ChannelPos>& positions, double jump_threshold,
                          RepairReport& report);

template <class Real>
std::pair<Tensor<Real>, RepairReport> repair_outliers(const Tensor<Real>& sig,
                                                      const std::vector<ChannelPos>& positions,
                                                      double jump_threshold = 100.0) {
  require_shape(sig, 2, "repair_outliers input");
  std::vector<double> work(sig.data.begin(), sig.data.end());
  RepairReport report;
  repair_outliers_rows(work, sig.dim(0), sig.dim(1), positions, jump_threshold, report);
  Tensor<Real> out(sig.shape);
  for (std::size_t i = 0; i < work.size(); ++i) out[i] = static_cast<Real>(work[i]);
  return {std::move(out), std::move(report)};
}

// ---- segmentation ----------------------------------------------------------------

/// Window start offsets 0, step, 2*step, ... fully inside [0, total).
/// Count is floor((total - len) / step) + 1.
std::vector<std::size_t> segment_offsets(std::size_t total, std::size_t len, std::size_t step);

template <class Real>
Tensor<Real> slice_time(const Tensor<Real>& sig, std::size_t offset, std::size_t len) {
  require_shape(sig, 2, "slice_time input");
  const std::size_t m = sig.dim(0), t = sig.dim(1);
  if (offset + len > t) throw param_error("slice_time: window exceeds trial length");
  Tensor<Real> out({m, len});
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t u = 0; u < len; ++u) out.at2(c, u) = sig.at2(c, offset + u);
  return out;
}

template <class Real>
std::vector<Tensor<Real>> segment(const Tensor<Real>& sig, std::size_t len, std::size_t step) {
  require_shape(sig, 2, "segment input");
  if (len > sig.dim(1)) throw param_error("segment: sample longer than trial");
  std::vector<Tensor<Real>> out;
  for (std::size_t off : segment_offsets(sig.dim(1), len, step))
    out.push_back(slice_time(sig, off, len));
  return out;
}

}  // namespace clisa::signal
