#include "mpls/config.hpp"

#include <cstdio>
#include <fstream>

#include "mpls/errors.hpp"

namespace mpls {

using nlohmann::json;

// Field-wise (de)serialisation where absent keys keep the member default.
#define MPLS_JSON_FROM(v1) nlohmann_json_t.v1 = nlohmann_json_j.value(#v1, nlohmann_json_t.v1);
#define MPLS_JSON_FIELDS(Type, ...)                                                        \
  inline void to_json(nlohmann::json& nlohmann_json_j, const Type& nlohmann_json_t) {      \
    NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(NLOHMANN_JSON_TO, __VA_ARGS__))               \
  }                                                                                        \
  inline void from_json(const nlohmann::json& nlohmann_json_j, Type& nlohmann_json_t) {    \
    NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(MPLS_JSON_FROM, __VA_ARGS__))                 \
  }

NLOHMANN_JSON_SERIALIZE_ENUM(CombineMode, {{CombineMode::Mean, "mean"}, {CombineMode::Sum, "sum"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Connectivity, {{Connectivity::Six, 6}, {Connectivity::TwentySix, 26}})

MPLS_JSON_FIELDS(Interval, lo, hi)
MPLS_JSON_FIELDS(BlockConfig, base_width, kernel, expansion, groupnorm_groups)
MPLS_JSON_FIELDS(FFAConfig, reduced_width, groupnorm_groups, combine, fine_kernel)
MPLS_JSON_FIELDS(SegModelConfig, in_channels, depth, block, ffa, deep_supervision,
                                                n_classes, blocks_per_level)
MPLS_JSON_FIELDS(FlaggerConfig, in_channels, block, levels, blocks_per_level,
                                                scales_mm)
MPLS_JSON_FIELDS(FusionConfig, base, branches)
MPLS_JSON_FIELDS(LossConfig, alpha_b, alpha_d, w_c, eps, threshold)
MPLS_JSON_FIELDS(AugmentPolicy, p_brightness, brightness_range, p_contrast,
                                                contrast_range, p_noise, noise_sigma_range, p_flip, flip_axes,
                                                p_rotate, rotation_deg, p_translate, translation_vox, p_scale,
                                                scale_range, p_shear, shear_range, p_elastic, elastic_alpha,
                                                elastic_sigma)
MPLS_JSON_FIELDS(ProfileOffsets, hyperenhancing, hypoenhancing, retention)
MPLS_JSON_FIELDS(PhantomSpec, dims, spacing, organ_radii, organ_jitter, lesions_min,
                                                lesions_max, diameter_min_mm, diameter_max_mm, axis_ratio_max,
                                                organ_hu, background_hu, offsets, noise_sigma_hu, texture_hu,
                                                texture_scale_mm, edge_softness_mm, max_retries)
MPLS_JSON_FIELDS(RefineOptions, threshold, margin, connectivity, divisor, min_size)
MPLS_JSON_FIELDS(TrainSettings, epochs, max_steps, lr, weight_decay,
                                                patches_per_iteration, patch, lesion_bias, augment, augmentation,
                                                log_every, target_dice, eval_every)

void TrainSettings::validate() const {
  if (epochs < 1 && max_steps < 1) throw ConfigError("train: epochs or max_steps must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (patches_per_iteration < 1) throw ConfigError("train: patches_per_iteration must be >= 1");
  for (const auto s : patch)
    if (s < 1) throw ConfigError("train: patch sizes must be positive");
  if (lesion_bias < 0.0) throw ConfigError("train: lesion_bias must be >= 0");
  if (target_dice < 0.0 || target_dice > 1.0) throw ConfigError("train: target_dice must lie in [0, 1]");
  if (eval_every < 1 || log_every < 1) throw ConfigError("train: eval_every and log_every must be >= 1");
  try {
    augmentation.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void PipelineConfig::validate() const {
  if (device != "cpu") {
    throw ConfigError("device '" + device + "' is not available in this build (only 'cpu')");
  }
  if (!(hu_lo < hu_hi)) throw ConfigError("hu_lo must be below hu_hi");
  if (!(target_spacing_mm > 0.0)) throw ConfigError("target_spacing_mm must be > 0");
  if (!(heatmap_w_min >= 0.0f && heatmap_w_min <= 1.0f)) throw ConfigError("heatmap_w_min must lie in [0, 1]");
  if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("overlap must lie in [0, 1)");
  if (tolerance_mm < 0.0) throw ConfigError("tolerance_mm must be >= 0");
  phantom.validate();
  for (const auto* t : {&train_stage1, &train_stage2, &train_fusion, &train_refiner}) t->validate();
  try {
    loss.validate();
    stage1.validate();
    stage2.validate();
    fusion.validate();
    refiner.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (int a = 0; a < 3; ++a) {
    if (window[a] % stage2.divisor() != 0 || window[a] % fusion.base.divisor() != 0 ||
        window[a] % stage1.divisor() != 0) {
      throw ConfigError("window must be divisible by every model's divisor");
    }
  }
  if (refine.divisor % refiner.divisor() != 0) throw ConfigError("refine.divisor must be a multiple of 2^refiner.depth");
}

json to_json(const PipelineConfig& c) {
  json j;
  j["data_dir"] = c.data_dir.string();
  j["work_dir"] = c.work_dir.string();
  j["seed"] = c.seed;
  j["device"] = c.device;
  j["hu_lo"] = c.hu_lo;
  j["hu_hi"] = c.hu_hi;
  j["target_spacing_mm"] = c.target_spacing_mm;
  j["phantom"] = c.phantom;
  j["loss"] = c.loss;
  j["stage1"] = c.stage1;
  j["train_stage1"] = c.train_stage1;
  j["heatmap_w_min"] = c.heatmap_w_min;
  j["stage2"] = c.stage2;
  j["train_stage2"] = c.train_stage2;
  j["fusion"] = c.fusion;
  j["train_fusion"] = c.train_fusion;
  j["refiner"] = c.refiner;
  j["train_refiner"] = c.train_refiner;
  j["refine"] = c.refine;
  j["window"] = c.window;
  j["overlap"] = c.overlap;
  j["tolerance_mm"] = c.tolerance_mm;
  return j;
}

namespace {

void check_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    check_keys(value, known.at(key), where + key + ".");
  }
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
  const PipelineConfig d;
  check_keys(j, to_json(d), "");
  PipelineConfig c;
  try {
    c.data_dir = j.value("data_dir", d.data_dir.string());
    c.work_dir = j.value("work_dir", d.work_dir.string());
    c.seed = j.value("seed", d.seed);
    c.device = j.value("device", d.device);
    c.hu_lo = j.value("hu_lo", d.hu_lo);
    c.hu_hi = j.value("hu_hi", d.hu_hi);
    c.target_spacing_mm = j.value("target_spacing_mm", d.target_spacing_mm);
    c.phantom = j.value("phantom", d.phantom);
    c.loss = j.value("loss", d.loss);
    c.stage1 = j.value("stage1", d.stage1);
    c.train_stage1 = j.value("train_stage1", d.train_stage1);
    c.heatmap_w_min = j.value("heatmap_w_min", d.heatmap_w_min);
    c.stage2 = j.value("stage2", d.stage2);
    c.train_stage2 = j.value("train_stage2", d.train_stage2);
    c.fusion = j.value("fusion", d.fusion);
    c.train_fusion = j.value("train_fusion", d.train_fusion);
    c.refiner = j.value("refiner", d.refiner);
    c.train_refiner = j.value("train_refiner", d.train_refiner);
    c.refine = j.value("refine", d.refine);
    c.window = j.value("window", d.window);
    c.overlap = j.value("overlap", d.overlap);
    c.tolerance_mm = j.value("tolerance_mm", d.tolerance_mm);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const PipelineConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << to_json(c).dump(2) << '\n';
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const PipelineConfig& c) { return config_hash(to_json(c)); }

PipelineConfig desk_config() {
  PipelineConfig c;
  c.phantom.dims = {64, 64, 64};

  BlockConfig narrow;
  narrow.base_width = 8;
  c.stage1.block = narrow;
  c.stage2.block = narrow;
  c.fusion.base.block = narrow;
  c.refiner.block = narrow;
  c.stage2.depth = 4;
  c.fusion.base.depth = 4;

  for (auto* t : {&c.train_stage1, &c.train_stage2, &c.train_fusion, &c.train_refiner}) {
    t->patch = {32, 32, 32};
    t->patches_per_iteration = 2;
    t->epochs = 25;
  }
  c.window = {32, 32, 32};
  return c;
}

}  // namespace mpls
