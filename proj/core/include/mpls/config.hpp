#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "mpls/augment.hpp"
#include "mpls/flagger.hpp"
#include "mpls/fusion.hpp"
#include "mpls/lesions.hpp"
#include "mpls/losses.hpp"
#include "mpls/phantom.hpp"
#include "mpls/segmenter.hpp"

namespace mpls {

/// Optimisation settings of one stage. One epoch visits every training case
/// once; each visit draws `patches_per_iteration` patches into one batch and
/// takes one AdamW step.
struct TrainSettings {
  int epochs = 50;
  int max_steps = 0;  // > 0 replaces epochs as the step budget
  double lr = 1e-3;
  double weight_decay = 1e-2;
  int patches_per_iteration = 2;
  Dims3 patch{64, 64, 64};
  double lesion_bias = 0.5;  // lesion-containing origins weigh (1 + bias)
  bool augment = true;
  AugmentPolicy augmentation = AugmentPolicy::desk_defaults();
  int log_every = 10;
  /// Early stop once the training-case Dice reaches this value (0 = off),
  /// checked every `eval_every` steps.
  double target_dice = 0.0;
  int eval_every = 25;

  void validate() const;
};

struct PipelineConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path work_dir = "work";
  std::uint64_t seed = 0;
  std::string device = "cpu";

  float hu_lo = -200.0f;
  float hu_hi = 200.0f;
  double target_spacing_mm = 1.0;

  PhantomSpec phantom;
  LossConfig loss;

  FlaggerConfig stage1;
  TrainSettings train_stage1;
  float heatmap_w_min = 0.5f;

  SegModelConfig stage2;  // in_channels is set per variant
  TrainSettings train_stage2;

  FusionConfig fusion;
  TrainSettings train_fusion;

  SegModelConfig refiner = [] {
    SegModelConfig c;
    c.depth = 3;
    return c;
  }();
  TrainSettings train_refiner;
  RefineOptions refine;

  Dims3 window{64, 64, 64};
  double overlap = 0.5;
  double tolerance_mm = 1.5;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);

/// Missing keys keep their defaults; unknown keys raise ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j);

PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const PipelineConfig& c);

/// 64-bit FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);
std::string config_hash(const PipelineConfig& c);

/// Small widths and patches sized for single-core desk runs on 64^3 phantoms.
PipelineConfig desk_config();

}  // namespace mpls
