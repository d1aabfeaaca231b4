#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mpls/config.hpp"
#include "mpls/manifest.hpp"
#include "mpls/metrics.hpp"
#include "mpls/training.hpp"

namespace mpls {

/// Stages a given stage needs checkpoints of. Stage 2 consumes stage-1
/// heatmaps; both stage-3 models need every stage-2 variant.
std::vector<Stage> prerequisites(Stage s);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Stage s);

/// Throws DependencyError naming every missing checkpoint.
void require_checkpoints(const std::filesystem::path& dir, std::span<const Stage> stages, const std::string& needed_by);

enum class StopAfter { Stage1, Stage2, Fusion, Full };

StopAfter parse_stop_after(const std::string& s);
std::string stop_after_name(StopAfter s);

/// Trained networks, loaded in evaluation mode. Only the stages needed up to
/// `stop` are required.
struct NetworkBundle {
  Flagger stage1{nullptr};
  std::array<Segmenter, 4> stage2{Segmenter{nullptr}, Segmenter{nullptr}, Segmenter{nullptr}, Segmenter{nullptr}};
  FusionNet fusion{nullptr};
  Segmenter refiner{nullptr};
};

inline constexpr std::array<Stage, 4> kStage2Variants{Stage::Stage2Arterial, Stage::Stage2Delay, Stage::Stage2Venous,
                                                     Stage::Stage2ThreePhase};

NetworkBundle load_bundle(const std::filesystem::path& dir, const PipelineConfig& cfg, StopAfter stop = StopAfter::Full);

struct InferenceResult {
  Heatmap heatmap;
  std::vector<Volume> stage2;  // arterial, delay, venous, three-phase (when reached)
  std::optional<Volume> fusion;
  Volume probability;  // final probability map of the last stage run
  Mask mask;           // probability >= threshold
  StopAfter reached = StopAfter::Full;
  std::vector<std::string> warnings;
};

/// `normalized` is a prepared case (see prepare_case). Stage 1 weights the
/// input of the stage-2 models; fusion sees the raw phases.
InferenceResult infer_case(NetworkBundle& bundle, const MultiPhaseCase& normalized, const PipelineConfig& cfg,
                           StopAfter stop = StopAfter::Full);

/// Four stage-2 probability maps for one prepared case.
std::array<Volume, 4> stage2_probabilities(NetworkBundle& bundle, const MultiPhaseCase& normalized,
                                           const Heatmap& heatmap, const PipelineConfig& cfg);

Refiner network_refiner(Segmenter model);

/// Writes <id>_pred.nii.gz and, with `keep_intermediates`, the heatmap and
/// every probability map reached. With StopAfter::Stage2 the stage-2 maps are
/// always written. Returns the paths written.
std::vector<std::filesystem::path> write_inference(const std::filesystem::path& dir, const std::string& subject_id,
                                                   const InferenceResult& r, const Vec3& spacing,
                                                   bool keep_intermediates, const std::string& description);

std::string artifact_description(const PipelineConfig& cfg);

/// Trains one stage on the cases of `train_manifest`, deriving its inputs
/// from prerequisite checkpoints in `ctx.checkpoint_dir`.
StageOutcome train_stage(const TrainContext& ctx, Stage stage, const CaseManifest& train_manifest);

/// Trains every stage in order.
std::vector<StageOutcome> train_all(const TrainContext& ctx, const CaseManifest& train_manifest);

/// Runs inference on every manifest case and writes the outputs under `out_dir`.
void infer_manifest(const CaseManifest& manifest, const std::filesystem::path& checkpoint_dir,
                    const PipelineConfig& cfg, const std::filesystem::path& out_dir, StopAfter stop,
                    bool keep_intermediates, bool verbose = false);

/// Scores <id>_pred.nii.gz files in `pred_dir` against the manifest. Subjects
/// without a prediction or with a grid mismatch are excluded with a warning.
EvalReport evaluate_directory(const std::filesystem::path& pred_dir, const CaseManifest& gt,
                              const EvalOptions& opts, std::vector<std::string>* warnings = nullptr);

}  // namespace mpls
