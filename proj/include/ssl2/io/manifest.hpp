#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ssl2/volume/volume.hpp"

namespace ssl2 {

// Dataset manifest: JSON file listing per-subject image paths. Paths are
// resolved relative to the manifest's directory.
struct ManifestEntry {
  std::string subject_id;
  std::string t1_path;
  std::string flair_path;
  std::optional<std::string> mask_path;
  bool labeled = false;
};

struct Manifest {
  std::vector<ManifestEntry> subjects;
};

Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& m);

// Loads every subject's volumes into memory. Set `normalize` to run
// normalize_intensity on the images (masks are never normalized).
std::vector<Sample<float>> load_samples(const std::string& manifest_path, bool normalize);

}  // namespace ssl2
