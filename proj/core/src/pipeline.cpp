#include "mpls/pipeline.hpp"

#include <iostream>

#include "mpls/checkpoint.hpp"
#include "mpls/errors.hpp"
#include "mpls/nifti.hpp"
#include "mpls/preprocess.hpp"
#include "mpls/tensor_bridge.hpp"

namespace mpls {

namespace fs = std::filesystem;

std::vector<Stage> prerequisites(Stage s) {
  switch (s) {
    case Stage::Stage1: return {};
    case Stage::Stage2Arterial:
    case Stage::Stage2Delay:
    case Stage::Stage2Venous:
    case Stage::Stage2ThreePhase: return {Stage::Stage1};
    case Stage::Stage3Fusion:
    case Stage::Stage3Refiner: {
      std::vector<Stage> out{Stage::Stage1};
      out.insert(out.end(), kStage2Variants.begin(), kStage2Variants.end());
      return out;
    }
  }
  throw std::invalid_argument("unknown stage");
}

fs::path checkpoint_path(const fs::path& dir, Stage s) { return dir / (stage_checkpoint_name(s) + ".ckpt"); }

void require_checkpoints(const fs::path& dir, std::span<const Stage> stages, const std::string& needed_by) {
  std::string missing;
  for (const auto s : stages) {
    if (fs::exists(checkpoint_path(dir, s))) continue;
    if (!missing.empty()) missing += ", ";
    missing += "stage " + stage_label(s) + " (" + checkpoint_path(dir, s).string() + ")";
  }
  if (!missing.empty()) throw DependencyError(needed_by + " requires trained checkpoints for: " + missing);
}

StopAfter parse_stop_after(const std::string& s) {
  if (s == "stage1") return StopAfter::Stage1;
  if (s == "stage2") return StopAfter::Stage2;
  if (s == "fusion" || s == "stage3-fusion") return StopAfter::Fusion;
  if (s == "full" || s == "stage3") return StopAfter::Full;
  throw ConfigError("unknown --stop-after value '" + s + "' (stage1, stage2, fusion, full)");
}

std::string stop_after_name(StopAfter s) {
  switch (s) {
    case StopAfter::Stage1: return "stage1";
    case StopAfter::Stage2: return "stage2";
    case StopAfter::Fusion: return "fusion";
    case StopAfter::Full: return "full";
  }
  return "full";
}

namespace {

template <class M>
void load_into(M& model, const fs::path& path) {
  load_checkpoint(path, *model);
  model->eval();
}

}  // namespace

NetworkBundle load_bundle(const fs::path& dir, const PipelineConfig& cfg, StopAfter stop) {
  std::vector<Stage> need{Stage::Stage1};
  if (stop != StopAfter::Stage1) need.insert(need.end(), kStage2Variants.begin(), kStage2Variants.end());
  if (stop == StopAfter::Fusion || stop == StopAfter::Full) need.push_back(Stage::Stage3Fusion);
  if (stop == StopAfter::Full) need.push_back(Stage::Stage3Refiner);
  require_checkpoints(dir, need, "inference up to " + stop_after_name(stop));

  NetworkBundle b;
  b.stage1 = make_flagger(cfg);
  load_into(b.stage1, checkpoint_path(dir, Stage::Stage1));
  if (stop == StopAfter::Stage1) return b;
  for (std::size_t i = 0; i < kStage2Variants.size(); ++i) {
    b.stage2[i] = make_stage2(cfg, kStage2Variants[i]);
    load_into(b.stage2[i], checkpoint_path(dir, kStage2Variants[i]));
  }
  if (stop == StopAfter::Stage2) return b;
  b.fusion = make_fusion(cfg);
  load_into(b.fusion, checkpoint_path(dir, Stage::Stage3Fusion));
  if (stop == StopAfter::Fusion) return b;
  b.refiner = make_refiner(cfg);
  load_into(b.refiner, checkpoint_path(dir, Stage::Stage3Refiner));
  return b;
}

Refiner network_refiner(Segmenter model) {
  return [model](const std::vector<Volume>& image, const Volume&) mutable {
    torch::NoGradGuard guard;
    model->eval();
    const auto x = stack_channels(image).unsqueeze(0);
    return volume_from_tensor(torch::sigmoid(model->forward(x).main[0][1]));
  };
}

std::array<Volume, 4> stage2_probabilities(NetworkBundle& bundle, const MultiPhaseCase& normalized,
                                           const Heatmap& heatmap, const PipelineConfig& cfg) {
  const auto weighted = apply_heatmap(normalized, heatmap);
  std::array<Volume, 4> out;
  for (std::size_t i = 0; i < kStage2Variants.size(); ++i) {
    std::vector<Volume> channels;
    for (const auto p : stage2_phases(kStage2Variants[i])) channels.push_back(weighted.phase(p).voxels);
    out[i] = sliding_window_infer(segmenter_predictor(bundle.stage2[i]), channels, cfg.window, cfg.overlap);
  }
  return out;
}

InferenceResult infer_case(NetworkBundle& bundle, const MultiPhaseCase& normalized, const PipelineConfig& cfg,
                           StopAfter stop) {
  for (const auto p : kPhaseOrder) {
    if (!normalized.has_phase(p)) {
      throw ConfigError("case '" + normalized.subject_id + "' lacks the " + std::string(phase_name(p)) + " phase");
    }
  }
  const auto thr = static_cast<float>(cfg.loss.threshold);
  InferenceResult r;
  r.reached = stop;
  r.heatmap = heatmap_for_case(bundle.stage1, normalized, cfg.window, cfg.heatmap_w_min);
  if (stop == StopAfter::Stage1) {
    r.probability = r.heatmap.weights;
    r.mask = Mask(normalized.dims());
    return r;
  }

  const auto probs = stage2_probabilities(bundle, normalized, r.heatmap, cfg);
  r.stage2.assign(probs.begin(), probs.end());
  if (stop == StopAfter::Stage2) {
    r.probability = probs[3];
    r.mask = threshold(r.probability, thr);
    return r;
  }

  std::vector<Volume> channels;
  for (std::size_t pi = 0; pi < kPhaseOrder.size(); ++pi) {
    auto in = form_fusion_input(normalized.phase(kPhaseOrder[pi]).voxels, probs[pi], probs[3]);
    channels.push_back(std::move(in.image));
    channels.push_back(std::move(in.probability));
  }
  r.fusion = sliding_window_infer(fusion_predictor(bundle.fusion), channels, cfg.window, cfg.overlap);
  if (stop == StopAfter::Fusion) {
    r.probability = *r.fusion;
    r.mask = threshold(r.probability, thr);
    return r;
  }

  auto refine_opts = cfg.refine;
  refine_opts.threshold = thr;
  auto refined = refine_lesions(*r.fusion, normalized, network_refiner(bundle.refiner), refine_opts);
  r.probability = std::move(refined.probabilities);
  r.warnings = std::move(refined.warnings);
  r.mask = threshold(r.probability, thr);
  return r;
}

std::string artifact_description(const PipelineConfig& cfg) {
  return "mpls cfg=" + config_hash(cfg) + " seed=" + std::to_string(cfg.seed);
}

std::vector<fs::path> write_inference(const fs::path& dir, const std::string& subject_id, const InferenceResult& r,
                                      const Vec3& spacing, bool keep_intermediates, const std::string& description) {
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto put = [&](const std::string& suffix, const Volume& v) {
    const auto p = dir / (subject_id + "_" + suffix + ".nii.gz");
    write_nifti(p, v, spacing, NiftiType::Float32, description);
    written.push_back(p);
  };
  const auto pred = dir / (subject_id + "_pred.nii.gz");
  write_nifti(pred, r.mask, spacing, description);
  written.push_back(pred);

  const bool stage2_maps = keep_intermediates || r.reached == StopAfter::Stage2;
  static const char* kNames[4] = {"prob_arterial", "prob_delay", "prob_venous", "prob_threephase"};
  if (stage2_maps)
    for (std::size_t i = 0; i < r.stage2.size(); ++i) put(kNames[i], r.stage2[i]);
  if (keep_intermediates) {
    put("heatmap", r.heatmap.weights);
    if (r.fusion) put("prob_fusion", *r.fusion);
    if (r.reached == StopAfter::Full) put("prob_final", r.probability);
  }
  return written;
}

namespace {

std::vector<MultiPhaseCase> load_prepared(const CaseManifest& m, const PipelineConfig& cfg) {
  std::vector<MultiPhaseCase> out;
  for (const auto& e : m.cases) out.push_back(prepare_case(load_case(m, e), cfg));
  if (out.empty()) throw ConfigError("manifest lists no cases");
  return out;
}

std::vector<Heatmap> heatmaps_for(Flagger& flagger, std::span<const MultiPhaseCase> cases, const PipelineConfig& cfg) {
  std::vector<Heatmap> out;
  for (const auto& c : cases) out.push_back(heatmap_for_case(flagger, c, cfg.window, cfg.heatmap_w_min));
  return out;
}

}  // namespace

StageOutcome train_stage(const TrainContext& ctx, Stage stage, const CaseManifest& train_manifest) {
  const auto prereq = prerequisites(stage);
  require_checkpoints(ctx.checkpoint_dir, prereq, "training stage " + stage_label(stage));
  ctx.cfg.validate();
  const auto cases = load_prepared(train_manifest, ctx.cfg);
  if (ctx.verbose) std::cout << "training stage " << stage_label(stage) << " on " << cases.size() << " cases" << std::endl;

  if (stage == Stage::Stage1) return train_stage1(ctx, cases);
  if (stage == Stage::Stage3Refiner) return train_refiner(ctx, cases);

  auto bundle = load_bundle(ctx.checkpoint_dir, ctx.cfg, is_stage2(stage) ? StopAfter::Stage1 : StopAfter::Stage2);
  const auto heatmaps = heatmaps_for(bundle.stage1, cases, ctx.cfg);
  if (is_stage2(stage)) return train_stage2(ctx, stage, cases, heatmaps);

  std::vector<std::array<Volume, 4>> probs;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    probs.push_back(stage2_probabilities(bundle, cases[i], heatmaps[i], ctx.cfg));
  }
  return train_fusion(ctx, cases, probs);
}

std::vector<StageOutcome> train_all(const TrainContext& ctx, const CaseManifest& train_manifest) {
  std::vector<StageOutcome> out;
  for (const auto s : kStages) out.push_back(train_stage(ctx, s, train_manifest));
  return out;
}

void infer_manifest(const CaseManifest& manifest, const fs::path& checkpoint_dir, const PipelineConfig& cfg,
                    const fs::path& out_dir, StopAfter stop, bool keep_intermediates, bool verbose) {
  cfg.validate();
  auto bundle = load_bundle(checkpoint_dir, cfg, stop);
  const auto desc = artifact_description(cfg);
  for (const auto& e : manifest.cases) {
    const auto raw = load_case(manifest, e);
    const auto prepared = prepare_case(raw, cfg);
    auto r = infer_case(bundle, prepared, cfg, stop);
    for (const auto& w : r.warnings) std::cerr << "warning: " << e.subject_id << ": " << w << '\n';

    // Outputs live on the venous grid of the input.
    const auto& venous = raw.phase(Phase::Venous);
    if (prepared.dims() != venous.voxels.dims() || prepared.spacing() != venous.spacing) {
      const auto from = prepared.spacing();
      const auto& to = venous.spacing;
      const auto dims = venous.voxels.dims();
      auto back = [&](const Volume& v) { return resample(v, from, to, dims, Interpolation::Linear); };
      r.mask = resample(r.mask, from, to, dims);
      r.probability = back(r.probability);
      r.heatmap.weights = back(r.heatmap.weights);
      for (auto& v : r.stage2) v = back(v);
      if (r.fusion) r.fusion = back(*r.fusion);
    }
    write_inference(out_dir, e.subject_id, r, venous.spacing, keep_intermediates, desc);
    if (verbose) std::cout << "inferred " << e.subject_id << std::endl;
  }
}

EvalReport evaluate_directory(const fs::path& pred_dir, const CaseManifest& gt, const EvalOptions& opts,
                              std::vector<std::string>* warnings) {
  std::vector<EvalCase> cases;
  std::vector<std::string> excluded;
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  for (const auto& e : gt.cases) {
    const auto pred_path = pred_dir / (e.subject_id + "_pred.nii.gz");
    if (!fs::exists(pred_path)) {
      warn("no prediction for subject " + e.subject_id + "; excluded");
      excluded.push_back(e.subject_id);
      continue;
    }
    if (e.mask.empty()) {
      warn("no ground-truth mask for subject " + e.subject_id + "; excluded");
      excluded.push_back(e.subject_id);
      continue;
    }
    const auto mask_path = e.mask.is_absolute() ? e.mask : gt.base_dir / e.mask;
    const auto gt_img = read_nifti(mask_path);
    EvalCase c;
    c.subject_id = e.subject_id;
    c.gt = read_nifti_mask(mask_path);
    c.pred = read_nifti_mask(pred_path);
    c.spacing = gt_img.spacing;
    if (c.gt.dims() != c.pred.dims()) {
      warn("grid mismatch for subject " + e.subject_id + "; excluded");
      excluded.push_back(e.subject_id);
      continue;
    }
    cases.push_back(std::move(c));
  }
  auto report = evaluate(cases, opts);
  report.excluded.insert(report.excluded.end(), excluded.begin(), excluded.end());
  return report;
}

}  // namespace mpls
