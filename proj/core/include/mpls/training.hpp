#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "mpls/config.hpp"
#include "mpls/flagger.hpp"
#include "mpls/fusion.hpp"
#include "mpls/segmenter.hpp"

namespace mpls {

enum class Stage { Stage1, Stage2Arterial, Stage2Delay, Stage2Venous, Stage2ThreePhase, Stage3Fusion, Stage3Refiner };

inline constexpr std::array<Stage, 7> kStages{Stage::Stage1,          Stage::Stage2Arterial, Stage::Stage2Delay,
                                              Stage::Stage2Venous,    Stage::Stage2ThreePhase, Stage::Stage3Fusion,
                                              Stage::Stage3Refiner};

/// CLI spelling: "1", "2-arterial", ..., "3-refiner".
std::string stage_label(Stage s);
Stage parse_stage(const std::string& label);
/// Checkpoint base name: "stage1", "stage2_arterial", ..., "stage3_refiner".
std::string stage_checkpoint_name(Stage s);
/// Input phases of a stage-2 variant, in channel order.
std::vector<Phase> stage2_phases(Stage s);
bool is_stage2(Stage s);

/// Resamples to isotropic target spacing and clip-normalises every phase.
MultiPhaseCase prepare_case(const MultiPhaseCase& raw, const PipelineConfig& cfg);

// Model construction seeds the global torch generator from (seed, stage) so
// initial weights are reproducible.
Flagger make_flagger(const PipelineConfig& cfg);
Segmenter make_stage2(const PipelineConfig& cfg, Stage variant);
FusionNet make_fusion(const PipelineConfig& cfg);
Segmenter make_refiner(const PipelineConfig& cfg);

/// Sum of the compound loss on the main output and, with equal weight, on
/// every auxiliary output against max-pooled targets. target: [B, 1, D, H, W].
torch::Tensor segmentation_loss(const SegOutput& out, const torch::Tensor& target, const LossConfig& cfg);

/// Compound loss per flag scale against max-pooled targets, summed.
torch::Tensor flagger_loss(const std::vector<torch::Tensor>& logits, const torch::Tensor& target,
                           std::span<const int> scales_vox, const LossConfig& cfg);

/// Throws NumericalError when the loss is not finite.
void check_finite_loss(const torch::Tensor& loss, std::int64_t step, const std::string& what);

/// One optimisation step on a batch. Returns the loss value.
double seg_train_step(Segmenter& model, torch::optim::AdamW& opt, const torch::Tensor& input,
                      const torch::Tensor& target, const LossConfig& cfg, std::int64_t step = 0);

struct Batch {
  torch::Tensor input;   // [B, C, D, H, W]
  torch::Tensor target;  // [B, 1, D, H, W], float 0/1
};

/// Channels with the ground-truth mask they are trained against.
struct TrainingVolume {
  std::vector<Volume> channels;
  Mask mask;
};

/// Batch for `step`: patches drawn with a lesion-biased sampler and augmented,
/// all seeded from (seed, step) so that a given step always sees the same data.
Batch draw_batch(std::span<const TrainingVolume> volumes, const TrainSettings& ts, std::uint64_t seed,
                 std::int64_t step);

struct TrainLog {
  std::string stage;
  std::vector<double> losses;
  std::vector<std::pair<std::int64_t, double>> evaluations;  // (step, Dice)
  std::int64_t steps = 0;
  bool early_stopped = false;
  std::string config_hash;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

using StepFn = std::function<double(std::int64_t step)>;  // one optimisation step, returns the loss
using EvalFn = std::function<double()>;

struct LoopOptions {
  std::int64_t total_steps = 0;
  std::int64_t log_every = 10;
  double target_dice = 0.0;
  std::int64_t eval_every = 25;
  bool verbose = false;
  std::int64_t checkpoint_every = 0;
};

/// Runs steps [log.steps, total_steps), recording losses; stops early once
/// `eval` reaches the target. `checkpoint` runs every checkpoint_every steps.
void run_loop(TrainLog& log, const LoopOptions& opts, const StepFn& step, const EvalFn& eval = {},
              const std::function<void()>& checkpoint = {});

struct StageOutcome {
  TrainLog log;
  std::filesystem::path checkpoint;
};

struct TrainContext {
  PipelineConfig cfg;
  std::filesystem::path checkpoint_dir;
  bool resume = true;
  bool verbose = false;
};

/// Stage trainers. Each writes <checkpoint_dir>/<stage_checkpoint_name>.ckpt
/// and a matching .log.json. With `resume`, an existing checkpoint of the same
/// config hash continues from its recorded step.
StageOutcome train_stage1(const TrainContext& ctx, std::span<const MultiPhaseCase> cases);

/// Scores the model under training, e.g. Dice on a held case; used for early stopping.
using SegEvalFn = std::function<double(Segmenter&)>;

/// `heatmaps` may be empty (unweighted input) or hold one per case.
StageOutcome train_stage2(const TrainContext& ctx, Stage variant, std::span<const MultiPhaseCase> cases,
                          std::span<const Heatmap> heatmaps, const SegEvalFn& eval = {});

/// `probabilities[i]` holds the four stage-2 maps of case i in the order
/// arterial, delay, venous, three-phase.
StageOutcome train_fusion(const TrainContext& ctx, std::span<const MultiPhaseCase> cases,
                          std::span<const std::array<Volume, 4>> probabilities);

StageOutcome train_refiner(const TrainContext& ctx, std::span<const MultiPhaseCase> cases);

/// Training volumes of stage 2: the selected phases, heatmap weighted.
std::vector<TrainingVolume> stage2_volumes(std::span<const MultiPhaseCase> cases, Stage variant,
                                           std::span<const Heatmap> heatmaps);

/// Fusion volumes: per branch the raw phase and the averaged probability.
std::vector<TrainingVolume> fusion_volumes(std::span<const MultiPhaseCase> cases,
                                           std::span<const std::array<Volume, 4>> probabilities);

/// Refiner volumes: one padded crop per ground-truth lesion.
std::vector<TrainingVolume> refiner_volumes(std::span<const MultiPhaseCase> cases, const RefineOptions& opts);

}  // namespace mpls
