#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clisa/recording.hpp"
#include "clisa/signal.hpp"

namespace clisa {

/// On-disk dataset description. Signal files are raw little-endian 32-bit
/// floats, channel-major (M rows by T columns), one file per trial; paths in
/// the manifest are relative to the manifest's directory.
struct ManifestTrial {
  int trial_id = 0;
  int stimulus_id = 0;
  int label = 0;
  std::string file;
  std::size_t samples = 0;  // T
};

struct ManifestSubject {
  std::string id;
  std::vector<ManifestTrial> trials;
};

struct ManifestChannel {
  std::string name;
  bool has_position = false;
  double x = 0, y = 0, z = 0;
};

struct DatasetManifest {
  std::string name;
  double sampling_rate = 0;
  std::vector<ManifestChannel> channels;
  std::vector<ManifestSubject> subjects;

  std::vector<std::string> subject_ids() const;
  std::vector<int> stimulus_ids() const;
  std::vector<signal::ChannelPos> positions() const;
};

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

/// Raw f32 trial files.
std::vector<float> read_signal_file(const std::string& path, std::size_t channels,
                                    std::size_t samples);
void write_signal_file(const std::string& path, const std::vector<float>& data);

/// Load the full dataset into memory, verifying each referenced file's size.
template <class Real>
std::vector<Recording<Real>> load_recordings(const DatasetManifest& m,
                                             const std::string& base_dir) {
  std::vector<Recording<Real>> out;
  for (const auto& subj : m.subjects) {
    Recording<Real> rec;
    rec.subject_id = subj.id;
    rec.sampling_rate = m.sampling_rate;
    for (const auto& ch : m.channels) rec.channel_names.push_back(ch.name);
    for (const auto& tr : subj.trials) {
      Trial<Real> t;
      t.trial_id = tr.trial_id;
      t.stimulus_id = tr.stimulus_id;
      t.label = tr.label;
      const auto raw =
          read_signal_file(base_dir + "/" + tr.file, m.channels.size(), tr.samples);
      t.signal = Tensor<Real>({m.channels.size(), tr.samples});
      for (std::size_t i = 0; i < raw.size(); ++i) t.signal[i] = static_cast<Real>(raw[i]);
      rec.trials.push_back(std::move(t));
    }
    rec.validate();
    out.push_back(std::move(rec));
  }
  return out;
}

void ensure_dir(const std::string& dir);

/// Write recordings + manifest under `dir` (creates it). Data is stored f32.
template <class Real>
DatasetManifest save_recordings(const std::vector<Recording<Real>>& recs,
                                const std::string& name, const std::string& dir,
                                const std::vector<signal::ChannelPos>* positions = nullptr) {
  ensure_dir(dir);
  ensure_dir(dir + "/signals");
  DatasetManifest m;
  m.name = name;
  if (recs.empty()) throw data_error("save_recordings: empty dataset");
  m.sampling_rate = recs[0].sampling_rate;
  for (std::size_t c = 0; c < recs[0].channel_names.size(); ++c) {
    ManifestChannel ch;
    ch.name = recs[0].channel_names[c];
    if (positions && c < positions->size()) {
      ch.has_position = true;
      ch.x = (*positions)[c].x;
      ch.y = (*positions)[c].y;
      ch.z = (*positions)[c].z;
    }
    m.channels.push_back(ch);
  }
  for (const auto& rec : recs) {
    ManifestSubject subj;
    subj.id = rec.subject_id;
    for (const auto& tr : rec.trials) {
      ManifestTrial mt;
      mt.trial_id = tr.trial_id;
      mt.stimulus_id = tr.stimulus_id;
      mt.label = tr.label;
      mt.samples = tr.signal.dim(1);
      mt.file = "signals/" + rec.subject_id + "_t" + std::to_string(tr.trial_id) + ".f32";
      std::vector<float> raw(tr.signal.size());
      for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(tr.signal[i]);
      write_signal_file(dir + "/" + mt.file, raw);
      subj.trials.push_back(std::move(mt));
    }
    m.subjects.push_back(std::move(subj));
  }
  write_manifest(m, dir + "/manifest.json");
  return m;
}

}  // namespace clisa
