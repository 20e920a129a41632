#include "ssl2/io/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ssl2/core/errors.hpp"
#include "ssl2/io/nifti.hpp"

namespace ssl2 {

namespace fs = std::filesystem;
using nlohmann::json;

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingFile("cannot open manifest: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("manifest parse error in " + path + ": " + e.what());
  }
  Manifest m;
  if (!j.contains("subjects") || !j["subjects"].is_array())
    throw ConfigError("manifest " + path + ": missing \"subjects\" array");
  for (const auto& s : j["subjects"]) {
    ManifestEntry e;
    try {
      e.subject_id = s.at("subject_id").get<std::string>();
      e.t1_path = s.at("t1_path").get<std::string>();
      e.flair_path = s.at("flair_path").get<std::string>();
      if (s.contains("mask_path") && !s["mask_path"].is_null())
        e.mask_path = s["mask_path"].get<std::string>();
      e.labeled = s.value("labeled", false);
    } catch (const json::exception& ex) {
      throw ConfigError("manifest " + path + ": bad subject entry: " + ex.what());
    }
    if (e.labeled && !e.mask_path)
      throw ConfigError("manifest " + path + ": subject " + e.subject_id + " labeled but has no mask_path");
    m.subjects.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::string& path, const Manifest& m) {
  json j;
  j["subjects"] = json::array();
  for (const auto& e : m.subjects) {
    json s;
    s["subject_id"] = e.subject_id;
    s["t1_path"] = e.t1_path;
    s["flair_path"] = e.flair_path;
    if (e.mask_path) s["mask_path"] = *e.mask_path;
    s["labeled"] = e.labeled;
    j["subjects"].push_back(std::move(s));
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IOError("cannot write manifest: " + path);
  f << j.dump(2) << "\n";
}

std::vector<Sample<float>> load_samples(const std::string& manifest_path, bool normalize) {
  const Manifest m = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q.string() : (base / q).string();
  };

  std::vector<Sample<float>> out;
  out.reserve(m.subjects.size());
  for (const auto& e : m.subjects) {
    Sample<float> s;
    s.subject_id = e.subject_id;
    s.t1 = read_nifti(resolve(e.t1_path), Modality::T1w);
    s.flair = read_nifti(resolve(e.flair_path), Modality::FLAIR);
    if (e.mask_path) s.lesion_mask = read_nifti(resolve(*e.mask_path), Modality::Mask);
    s.labeled = e.labeled;
    if (normalize) {
      s.t1 = normalize_intensity(s.t1);
      s.flair = normalize_intensity(s.flair);
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ssl2
