#include "mpls/manifest.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "mpls/errors.hpp"
#include "mpls/nifti.hpp"

namespace mpls {

namespace fs = std::filesystem;
using nlohmann::json;

const ManifestEntry* CaseManifest::find(const std::string& subject_id) const {
  for (const auto& e : cases) {
    if (e.subject_id == subject_id) return &e;
  }
  return nullptr;
}

CaseManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("manifest '" + path.string() + "': " + e.what());
  }
  CaseManifest m;
  m.base_dir = path.parent_path();
  if (!j.contains("cases") || !j["cases"].is_array()) {
    throw ConfigError("manifest '" + path.string() + "' has no 'cases' array");
  }
  for (const auto& c : j["cases"]) {
    ManifestEntry e;
    e.subject_id = c.at("subject_id").get<std::string>();
    for (const auto& [name, p] : c.at("phases").items()) {
      try {
        e.phases[parse_phase(name)] = p.get<std::string>();
      } catch (const std::invalid_argument& err) {
        throw ConfigError("manifest entry '" + e.subject_id + "': " + err.what());
      }
    }
    if (c.contains("mask")) e.mask = c["mask"].get<std::string>();
    if (c.contains("organ")) e.organ = c["organ"].get<std::string>();
    m.cases.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const fs::path& path, const CaseManifest& manifest) {
  json cases = json::array();
  for (const auto& e : manifest.cases) {
    json c;
    c["subject_id"] = e.subject_id;
    json phases = json::object();
    for (const auto& [p, file] : e.phases) phases[std::string(phase_name(p))] = file.generic_string();
    c["phases"] = phases;
    if (!e.mask.empty()) c["mask"] = e.mask.generic_string();
    if (!e.organ.empty()) c["organ"] = e.organ.generic_string();
    cases.push_back(c);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write manifest '" + path.string() + "'");
  out << json{{"version", 1}, {"cases", cases}}.dump(2) << "\n";
}

MultiPhaseCase load_case(const CaseManifest& manifest, const ManifestEntry& entry,
                         std::span<const Phase> required) {
  auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : manifest.base_dir / p; };
  for (auto p : required) {
    if (!entry.phases.contains(p)) {
      throw ConfigError("case '" + entry.subject_id + "' is missing the " +
                        std::string(phase_name(p)) + " phase");
    }
  }
  MultiPhaseCase c;
  c.subject_id = entry.subject_id;
  for (auto p : kPhaseOrder) {
    auto it = entry.phases.find(p);
    if (it == entry.phases.end()) continue;
    auto img = read_nifti(resolve(it->second));
    c.phases.push_back({std::move(img.voxels), img.spacing, p});
  }
  if (c.phases.empty()) throw ConfigError("case '" + entry.subject_id + "' lists no phases");
  c.mask = entry.mask.empty() ? Mask(c.dims()) : read_nifti_mask(resolve(entry.mask));
  if (!entry.organ.empty()) c.organ = read_nifti_mask(resolve(entry.organ));
  c.validate();
  return c;
}

ManifestEntry save_case(const MultiPhaseCase& c, const fs::path& dir, std::string_view description) {
  fs::create_directories(dir);
  ManifestEntry e;
  e.subject_id = c.subject_id;
  for (const auto& pv : c.phases) {
    const auto name = c.subject_id + "_" + std::string(phase_name(pv.phase)) + ".nii.gz";
    write_nifti(dir / name, pv.voxels, pv.spacing, NiftiType::Int16, description);
    e.phases[pv.phase] = name;
  }
  e.mask = c.subject_id + "_mask.nii.gz";
  write_nifti(dir / e.mask, c.mask, c.spacing(), description);
  if (!c.organ.empty()) {
    e.organ = c.subject_id + "_organ.nii.gz";
    write_nifti(dir / e.organ, c.organ, c.spacing(), description);
  }
  return e;
}

}  // namespace mpls
