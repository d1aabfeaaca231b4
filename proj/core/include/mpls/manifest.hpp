#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mpls/volume.hpp"

namespace mpls {

/// One subject in a case manifest. Relative paths resolve against the
/// manifest's directory.
struct ManifestEntry {
  std::string subject_id;
  std::map<Phase, std::filesystem::path> phases;
  std::filesystem::path mask;   // optional for inference-only manifests
  std::filesystem::path organ;  // optional
};

struct CaseManifest {
  std::vector<ManifestEntry> cases;
  std::filesystem::path base_dir;

  const ManifestEntry* find(const std::string& subject_id) const;
};

/// JSON layout:
///   {"version": 1, "cases": [{"subject_id": "...",
///     "phases": {"arterial": "a.nii", "delay": "d.nii", "venous": "v.nii"},
///     "mask": "m.nii", "organ": "o.nii"}]}
CaseManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const CaseManifest& manifest);

/// Loads the listed volumes. Throws ConfigError naming any missing phase in
/// `required`. A missing mask yields an all-zero mask.
MultiPhaseCase load_case(const CaseManifest& manifest, const ManifestEntry& entry,
                         std::span<const Phase> required = kPhaseOrder);

/// Writes every volume of `c` as NIfTI under `dir` and returns the entry with
/// paths relative to `dir`.
ManifestEntry save_case(const MultiPhaseCase& c, const std::filesystem::path& dir,
                        std::string_view description = {});

}  // namespace mpls
