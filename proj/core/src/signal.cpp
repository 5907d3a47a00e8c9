#include "clisa/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace clisa::signal {

namespace {
constexpr double kPi = 3.14159265358979323846;

// Butterworth pole-pair Q values for order 4: 1/(2 cos(pi/8)), 1/(2 cos(3pi/8)).
const double kButterQ4[2] = {0.54119610014619698, 1.30656296487637652};

Biquad biquad_lowpass(double fc, double fs, double q) {
  const double w0 = 2.0 * kPi * fc / fs;
  const double cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  return {(1.0 - cw) / 2.0 / a0, (1.0 - cw) / a0, (1.0 - cw) / 2.0 / a0,
          -2.0 * cw / a0, (1.0 - alpha) / a0};
}

Biquad biquad_highpass(double fc, double fs, double q) {
  const double w0 = 2.0 * kPi * fc / fs;
  const double cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  return {(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0,
          -2.0 * cw / a0, (1.0 - alpha) / a0};
}

void run_sections(const std::vector<Biquad>& sos, std::vector<double>& x) {
  for (const auto& s : sos) {
    double z1 = 0, z2 = 0;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}
}  // namespace

std::vector<Biquad> butter_bandpass_sections(double low_hz, double high_hz, double fs) {
  if (!(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < fs / 2.0))
    throw param_error("bandpass: need 0 < low < high < fs/2, got [" +
                      std::to_string(low_hz) + ", " + std::to_string(high_hz) +
                      "] at fs " + std::to_string(fs));
  std::vector<Biquad> sos;
  for (double q : kButterQ4) sos.push_back(biquad_highpass(low_hz, fs, q));
  for (double q : kButterQ4) sos.push_back(biquad_lowpass(high_hz, fs, q));
  return sos;
}

void filtfilt(const std::vector<Biquad>& sos, std::vector<double>& x) {
  const std::size_t t = x.size();
  if (t < 2) return;
  // odd reflection padding keeps the operator linear and tames edge transients
  const std::size_t padlen = std::min<std::size_t>(t - 1, 3 * (2 * sos.size() * 2 + 1));
  std::vector<double> ext;
  ext.reserve(t + 2 * padlen);
  for (std::size_t i = 0; i < padlen; ++i) ext.push_back(2.0 * x[0] - x[padlen - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < padlen; ++i) ext.push_back(2.0 * x[t - 1] - x[t - 2 - i]);

  run_sections(sos, ext);
  std::reverse(ext.begin(), ext.end());
  run_sections(sos, ext);
  std::reverse(ext.begin(), ext.end());

  std::copy(ext.begin() + static_cast<std::ptrdiff_t>(padlen),
            ext.begin() + static_cast<std::ptrdiff_t>(padlen + t), x.begin());
}

void bandpass_rows(std::vector<double>& data, std::size_t channels, std::size_t time,
                   double low_hz, double high_hz, double fs) {
  const auto sos = butter_bandpass_sections(low_hz, high_hz, fs);
  std::vector<double> row(time);
  for (std::size_t c = 0; c < channels; ++c) {
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(c * time),
              data.begin() + static_cast<std::ptrdiff_t>((c + 1) * time), row.begin());
    filtfilt(sos, row);
    std::copy(row.begin(), row.end(), data.begin() + static_cast<std::ptrdiff_t>(c * time));
  }
}

std::size_t channel_index(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw param_error("unknown channel name: " + name);
}

std::vector<ChannelPos> load_channel_positions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw param_error("cannot open channel position file: " + path);
  std::vector<ChannelPos> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    ChannelPos p;
    if (!(is >> p.name >> p.x >> p.y >> p.z))
      throw param_error("malformed channel position line: " + line);
    out.push_back(p);
  }
  return out;
}

void repair_outliers_rows(std::vector<double>& data, std::size_t channels, std::size_t time,
                          const std::vector<ChannelPos>& positions, double jump_threshold,
                          RepairReport& report) {
  report.jump_repairs.assign(channels, 0);
  report.interpolated_channels.clear();
  report.total_jumps = 0;

  // pass 1: flag noisy channels (> 30% outliers vs 3x median absolute value)
  std::vector<bool> noisy(channels, false);
  std::vector<double> mags(time);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t u = 0; u < time; ++u) mags[u] = std::abs(data[c * time + u]);
    std::vector<double> sorted = mags;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(time / 2),
                     sorted.end());
    double med = sorted[time / 2];
    if (time % 2 == 0) {
      double lo = *std::max_element(sorted.begin(),
                                    sorted.begin() + static_cast<std::ptrdiff_t>(time / 2));
      med = 0.5 * (med + lo);
    }
    std::size_t outliers = 0;
    for (std::size_t u = 0; u < time; ++u)
      if (mags[u] > 3.0 * med) ++outliers;
    noisy[c] = static_cast<double>(outliers) > 0.30 * static_cast<double>(time);
  }

  // interpolate each noisy channel from its three nearest clean channels,
  // using pre-repair donor values so the result is order independent
  const bool any_noisy = std::any_of(noisy.begin(), noisy.end(), [](bool b) { return b; });
  if (any_noisy) {
    if (positions.size() != channels)
      throw param_error("repair_outliers: channel positions required for interpolation");
    const std::size_t clean =
        static_cast<std::size_t>(std::count(noisy.begin(), noisy.end(), false));
    if (clean < 3 || channels < 4)
      throw param_error("repair_outliers: need at least 3 clean channels to interpolate");
    std::vector<double> original = data;
    for (std::size_t c = 0; c < channels; ++c) {
      if (!noisy[c]) continue;
      std::vector<std::pair<double, std::size_t>> dist;
      for (std::size_t o = 0; o < channels; ++o) {
        if (o == c || noisy[o]) continue;
        const double dx = positions[c].x - positions[o].x;
        const double dy = positions[c].y - positions[o].y;
        const double dz = positions[c].z - positions[o].z;
        dist.emplace_back(dx * dx + dy * dy + dz * dz, o);
      }
      std::sort(dist.begin(), dist.end());
      for (std::size_t u = 0; u < time; ++u) {
        double acc = 0;
        for (std::size_t k = 0; k < 3; ++k) acc += original[dist[k].second * time + u];
        data[c * time + u] = acc / 3.0;
      }
      report.interpolated_channels.push_back(c);
    }
  }

  // pass 2: sequential jump clamp on already-repaired values
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t u = 1; u < time; ++u) {
      if (std::abs(data[c * time + u]) - std::abs(data[c * time + u - 1]) > jump_threshold) {
        data[c * time + u] = data[c * time + u - 1];
        ++report.jump_repairs[c];
        ++report.total_jumps;
      }
    }
  }
}

std::vector<std::size_t> segment_offsets(std::size_t total, std::size_t len, std::size_t step) {
  if (len == 0 || len > total) throw param_error("segment: sample longer than trial");
  if (step == 0) throw param_error("segment: zero step");
  std::vector<std::size_t> out;
  for (std::size_t off = 0; off + len <= total; off += step) out.push_back(off);
  return out;
}

}  // namespace clisa::signal
