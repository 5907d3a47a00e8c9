#include "clisa/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace clisa {

using nlohmann::json;

std::vector<std::string> DatasetManifest::subject_ids() const {
  std::vector<std::string> out;
  for (const auto& s : subjects) out.push_back(s.id);
  return out;
}

std::vector<int> DatasetManifest::stimulus_ids() const {
  std::vector<int> out;
  if (subjects.empty()) return out;
  for (const auto& t : subjects[0].trials) out.push_back(t.stimulus_id);
  return out;
}

std::vector<signal::ChannelPos> DatasetManifest::positions() const {
  std::vector<signal::ChannelPos> out;
  for (const auto& c : channels) {
    if (!c.has_position) return {};
    out.push_back({c.name, c.x, c.y, c.z});
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw data_error("cannot create directory " + dir + ": " + ec.message());
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open manifest " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw data_error("malformed manifest " + path + ": " + e.what());
  }
  DatasetManifest m;
  m.name = j.at("name").get<std::string>();
  m.sampling_rate = j.at("sampling_rate").get<double>();
  for (const auto& jc : j.at("channels")) {
    ManifestChannel c;
    c.name = jc.at("name").get<std::string>();
    if (jc.contains("position")) {
      c.has_position = true;
      c.x = jc["position"][0].get<double>();
      c.y = jc["position"][1].get<double>();
      c.z = jc["position"][2].get<double>();
    }
    m.channels.push_back(c);
  }
  for (const auto& js : j.at("subjects")) {
    ManifestSubject s;
    s.id = js.at("id").get<std::string>();
    for (const auto& jt : js.at("trials")) {
      ManifestTrial t;
      t.trial_id = jt.at("trial_id").get<int>();
      t.stimulus_id = jt.at("stimulus_id").get<int>();
      t.label = jt.at("label").get<int>();
      t.file = jt.at("file").get<std::string>();
      t.samples = jt.at("samples").get<std::size_t>();
      s.trials.push_back(std::move(t));
    }
    m.subjects.push_back(std::move(s));
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["name"] = m.name;
  j["sampling_rate"] = m.sampling_rate;
  j["channels"] = json::array();
  for (const auto& c : m.channels) {
    json jc;
    jc["name"] = c.name;
    if (c.has_position) jc["position"] = {c.x, c.y, c.z};
    j["channels"].push_back(jc);
  }
  j["subjects"] = json::array();
  for (const auto& s : m.subjects) {
    json js;
    js["id"] = s.id;
    js["trials"] = json::array();
    for (const auto& t : s.trials) {
      json jt;
      jt["trial_id"] = t.trial_id;
      jt["stimulus_id"] = t.stimulus_id;
      jt["label"] = t.label;
      jt["file"] = t.file;
      jt["samples"] = t.samples;
      js["trials"].push_back(jt);
    }
    j["subjects"].push_back(js);
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw data_error("cannot write manifest " + path);
  os << j.dump(2) << '\n';
}

std::vector<float> read_signal_file(const std::string& path, std::size_t channels,
                                    std::size_t samples) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("missing signal file " + path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = channels * samples * sizeof(float);
  if (bytes != expected)
    throw data_error("signal file " + path + " has " + std::to_string(bytes) +
                     " bytes, manifest declares " + std::to_string(expected));
  in.seekg(0);
  std::vector<float> out(channels * samples);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expected));
  if (!in) throw data_error("short read on signal file " + path);
  return out;
}

void write_signal_file(const std::string& path, const std::vector<float>& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot write signal file " + path);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!os) throw data_error("write failure on signal file " + path);
}

}  // namespace clisa
