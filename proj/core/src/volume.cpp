#include "mpls/volume.hpp"

#include <algorithm>

namespace mpls {

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Arterial:
      return "arterial";
    case Phase::Delay:
      return "delay";
    case Phase::Venous:
      return "venous";
  }
  return "unknown";
}

Phase parse_phase(std::string_view name) {
  for (auto p : kPhaseOrder) {
    if (phase_name(p) == name) return p;
  }
  throw std::invalid_argument("unknown phase '" + std::string(name) + "'");
}

void PhaseVolume::validate() const {
  for (double s : spacing) {
    if (!(s > 0.0)) throw std::invalid_argument("phase volume spacing must be positive");
  }
  for (auto n : voxels.dims()) {
    if (n < 1) throw std::invalid_argument("phase volume must have at least one voxel per axis");
  }
}

const PhaseVolume& MultiPhaseCase::phase(Phase p) const {
  for (const auto& pv : phases) {
    if (pv.phase == p) return pv;
  }
  throw std::invalid_argument("case '" + subject_id + "' has no " + std::string(phase_name(p)) +
                              " phase");
}

bool MultiPhaseCase::has_phase(Phase p) const {
  return std::any_of(phases.begin(), phases.end(), [p](const auto& pv) { return pv.phase == p; });
}

Dims3 MultiPhaseCase::dims() const {
  if (phases.empty()) return mask.dims();
  return phases.front().voxels.dims();
}

Vec3 MultiPhaseCase::spacing() const {
  if (phases.empty()) return {1.0, 1.0, 1.0};
  return phases.front().spacing;
}

void MultiPhaseCase::validate() const {
  if (phases.empty()) throw std::invalid_argument("case '" + subject_id + "' has no phases");
  const auto& ref = phases.front();
  ref.validate();
  for (const auto& pv : phases) {
    pv.validate();
    if (pv.voxels.dims() != ref.voxels.dims() || pv.spacing != ref.spacing) {
      throw std::invalid_argument("case '" + subject_id + "': phase grids differ");
    }
  }
  if (!mask.empty() && mask.dims() != ref.voxels.dims()) {
    throw std::invalid_argument("case '" + subject_id + "': mask grid differs from phases");
  }
  if (!organ.empty() && organ.dims() != ref.voxels.dims()) {
    throw std::invalid_argument("case '" + subject_id + "': organ grid differs from phases");
  }
  if (!is_binary(mask)) throw std::invalid_argument("case '" + subject_id + "': mask is not binary");
}

std::int64_t count_nonzero(const Mask& m) {
  return std::count_if(m.values().begin(), m.values().end(), [](auto v) { return v != 0; });
}

Mask threshold(const Volume& v, float t) {
  Mask out(v.dims());
  for (std::int64_t i = 0; i < v.size(); ++i) out[i] = v[i] >= t ? 1 : 0;
  return out;
}

bool is_binary(const Mask& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](auto v) { return v <= 1; });
}

}  // namespace mpls
