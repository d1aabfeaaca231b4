#include "mpls/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include "mpls/augment.hpp"
#include "mpls/checkpoint.hpp"
#include "mpls/errors.hpp"
#include "mpls/lesions.hpp"
#include "mpls/patch.hpp"
#include "mpls/preprocess.hpp"
#include "mpls/random.hpp"
#include "mpls/tensor_bridge.hpp"

namespace mpls {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kCheckpointInterval = 100;

std::uint64_t stage_index(Stage s) { return static_cast<std::uint64_t>(s); }

}  // namespace

std::string stage_label(Stage s) {
  switch (s) {
    case Stage::Stage1: return "1";
    case Stage::Stage2Arterial: return "2-arterial";
    case Stage::Stage2Delay: return "2-delay";
    case Stage::Stage2Venous: return "2-venous";
    case Stage::Stage2ThreePhase: return "2-threephase";
    case Stage::Stage3Fusion: return "3-fusion";
    case Stage::Stage3Refiner: return "3-refiner";
  }
  throw std::invalid_argument("unknown stage");
}

Stage parse_stage(const std::string& label) {
  for (const auto s : kStages)
    if (stage_label(s) == label || stage_checkpoint_name(s) == label) return s;
  throw ConfigError("unknown stage '" + label + "'");
}

std::string stage_checkpoint_name(Stage s) {
  switch (s) {
    case Stage::Stage1: return "stage1";
    case Stage::Stage2Arterial: return "stage2_arterial";
    case Stage::Stage2Delay: return "stage2_delay";
    case Stage::Stage2Venous: return "stage2_venous";
    case Stage::Stage2ThreePhase: return "stage2_threephase";
    case Stage::Stage3Fusion: return "stage3_fusion";
    case Stage::Stage3Refiner: return "stage3_refiner";
  }
  throw std::invalid_argument("unknown stage");
}

bool is_stage2(Stage s) {
  return s == Stage::Stage2Arterial || s == Stage::Stage2Delay || s == Stage::Stage2Venous ||
         s == Stage::Stage2ThreePhase;
}

std::vector<Phase> stage2_phases(Stage s) {
  switch (s) {
    case Stage::Stage2Arterial: return {Phase::Arterial};
    case Stage::Stage2Delay: return {Phase::Delay};
    case Stage::Stage2Venous: return {Phase::Venous};
    case Stage::Stage2ThreePhase: return {kPhaseOrder.begin(), kPhaseOrder.end()};
    default: throw std::invalid_argument("stage2_phases: not a stage-2 variant");
  }
}

MultiPhaseCase prepare_case(const MultiPhaseCase& raw, const PipelineConfig& cfg) {
  raw.validate();
  const double s = cfg.target_spacing_mm;
  const Vec3 target{s, s, s};
  const auto resampled = raw.spacing() == target ? raw : resample_isotropic(raw, target);
  return clip_normalize(resampled, cfg.hu_lo, cfg.hu_hi);
}

Flagger make_flagger(const PipelineConfig& cfg) {
  torch::manual_seed(derive_seed(cfg.seed, 100 + stage_index(Stage::Stage1)));
  return Flagger(cfg.stage1);
}

Segmenter make_stage2(const PipelineConfig& cfg, Stage variant) {
  auto mc = cfg.stage2;
  mc.in_channels = static_cast<std::int64_t>(stage2_phases(variant).size());
  torch::manual_seed(derive_seed(cfg.seed, 100 + stage_index(variant)));
  return Segmenter(mc);
}

FusionNet make_fusion(const PipelineConfig& cfg) {
  torch::manual_seed(derive_seed(cfg.seed, 100 + stage_index(Stage::Stage3Fusion)));
  return FusionNet(cfg.fusion);
}

Segmenter make_refiner(const PipelineConfig& cfg) {
  torch::manual_seed(derive_seed(cfg.seed, 100 + stage_index(Stage::Stage3Refiner)));
  return Segmenter(cfg.refiner);
}

torch::Tensor segmentation_loss(const SegOutput& out, const torch::Tensor& target, const LossConfig& cfg) {
  auto loss = compound_loss(out.main.select(1, 1), target.squeeze(1), cfg);
  std::int64_t factor = 2;
  for (const auto& aux : out.aux) {
    const auto t = F::max_pool3d(target, F::MaxPool3dFuncOptions(factor).stride(factor));
    loss = loss + compound_loss(aux.select(1, 1), t.squeeze(1), cfg);
    factor *= 2;
  }
  return loss;
}

torch::Tensor flagger_loss(const std::vector<torch::Tensor>& logits, const torch::Tensor& target,
                           std::span<const int> scales_vox, const LossConfig& cfg) {
  if (logits.size() != scales_vox.size()) throw std::invalid_argument("flagger_loss: scale count mismatch");
  torch::Tensor loss;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto t = F::max_pool3d(target, F::MaxPool3dFuncOptions(scales_vox[i]).stride(scales_vox[i]).ceil_mode(true));
    const auto l = compound_loss(logits[i].select(1, 1), t.squeeze(1), cfg);
    loss = i == 0 ? l : loss + l;
  }
  return loss;
}

void check_finite_loss(const torch::Tensor& loss, std::int64_t step, const std::string& what) {
  const double v = loss.item<double>();
  if (!std::isfinite(v)) {
    throw NumericalError(what + ": non-finite loss (" + std::to_string(v) + ") at step " + std::to_string(step));
  }
}

double seg_train_step(Segmenter& model, torch::optim::AdamW& opt, const torch::Tensor& input,
                      const torch::Tensor& target, const LossConfig& cfg, std::int64_t step) {
  model->train();
  opt.zero_grad();
  const auto loss = segmentation_loss(model->forward(input), target, cfg);
  check_finite_loss(loss, step, "segmenter");
  loss.backward();
  opt.step();
  return loss.item<double>();
}

// ---------------------------------------------------------------------------
// batches

namespace {

class PatchSource {
 public:
  PatchSource(std::span<const TrainingVolume> volumes, const TrainSettings& ts, std::uint64_t seed)
      : volumes_(volumes), ts_(ts), seed_(seed) {
    if (volumes.empty()) throw ConfigError("training: no training volumes");
    for (const auto& v : volumes) {
      Dims3 pad{0, 0, 0};
      for (int a = 0; a < 3; ++a) pad[a] = std::max<std::int64_t>(0, ts.patch[a] - v.mask.dims()[a]);
      samplers_.emplace_back(v.mask, ts.patch, ts.lesion_bias, pad);
    }
  }

  Batch draw(std::int64_t step) const {
    Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(step)));
    std::vector<torch::Tensor> inputs, targets;
    for (int b = 0; b < ts_.patches_per_iteration; ++b) {
      const auto vi = uniform_index(rng, volumes_.size());
      const auto& vol = volumes_[vi];
      const auto origin = samplers_[vi].draw(rng);
      PatchSample p;
      p.origin = origin;
      p.size = ts_.patch;
      for (const auto& ch : vol.channels) p.channels.push_back(crop(ch, origin, ts_.patch));
      p.mask = crop(vol.mask, origin, ts_.patch);
      if (ts_.augment) p = augment(p, ts_.augmentation, rng());
      inputs.push_back(stack_channels(p.channels));
      targets.push_back(to_tensor(p.mask).unsqueeze(0));
    }
    return {torch::stack(inputs), torch::stack(targets)};
  }

 private:
  std::span<const TrainingVolume> volumes_;
  TrainSettings ts_;
  std::uint64_t seed_;
  std::vector<PatchSampler> samplers_;
};

// Whole crops, one per step (crop sizes differ between lesions).
Batch draw_crop(std::span<const TrainingVolume> crops, const TrainSettings& ts, std::uint64_t seed,
                std::int64_t step) {
  if (crops.empty()) throw ConfigError("training: no lesion crops to train the refiner on");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(step)));
  const auto& c = crops[uniform_index(rng, crops.size())];
  PatchSample p;
  p.channels = c.channels;
  p.mask = c.mask;
  p.size = c.mask.dims();
  if (ts.augment) p = augment(p, ts.augmentation, rng());
  return {stack_channels(p.channels).unsqueeze(0), to_tensor(p.mask).unsqueeze(0).unsqueeze(0)};
}

}  // namespace

Batch draw_batch(std::span<const TrainingVolume> volumes, const TrainSettings& ts, std::uint64_t seed,
                 std::int64_t step) {
  return PatchSource(volumes, ts, seed).draw(step);
}

// ---------------------------------------------------------------------------
// loop

nlohmann::json TrainLog::to_json() const {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& [s, d] : evaluations) evals.push_back({{"step", s}, {"dice", d}});
  return {{"stage", stage},   {"steps", steps},           {"losses", losses},
          {"evaluations", evals}, {"early_stopped", early_stopped}, {"config_hash", config_hash},
          {"seed", seed}};
}

void run_loop(TrainLog& log, const LoopOptions& opts, const StepFn& step, const EvalFn& eval,
              const std::function<void()>& checkpoint) {
  for (std::int64_t s = log.steps; s < opts.total_steps; ++s) {
    const double loss = step(s);
    log.losses.push_back(loss);
    log.steps = s + 1;
    if (opts.verbose && (s % opts.log_every == 0 || s + 1 == opts.total_steps)) {
      std::cout << "  [" << log.stage << "] step " << s + 1 << "/" << opts.total_steps << " loss " << loss << std::endl;
    }
    if (checkpoint && opts.checkpoint_every > 0 && log.steps % opts.checkpoint_every == 0) checkpoint();
    if (eval && opts.target_dice > 0.0 && (s + 1) % opts.eval_every == 0) {
      const double d = eval();
      log.evaluations.emplace_back(s + 1, d);
      if (opts.verbose) std::cout << "  [" << log.stage << "] step " << s + 1 << " dice " << d << std::endl;
      if (d >= opts.target_dice) {
        log.early_stopped = true;
        break;
      }
    }
  }
}

namespace {

using LossOf = std::function<torch::Tensor(const Batch&)>;
using BatchOf = std::function<Batch(std::int64_t)>;

// Hash of the settings a checkpoint depends on. Step budgets, logging and
// directories are left out so a finished run can be extended or moved.
std::string resume_hash(nlohmann::json j) {
  j.erase("data_dir");
  j.erase("work_dir");
  for (auto& [key, value] : j.items()) {
    if (key.rfind("train_", 0) != 0 || !value.is_object()) continue;
    for (const char* k : {"epochs", "max_steps", "target_dice", "eval_every", "log_every"}) value.erase(k);
  }
  return config_hash(j);
}

void write_log(const fs::path& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write training log " + path.string());
  out << log.to_json().dump(2) << '\n';
}

StageOutcome fit(const TrainContext& ctx, Stage stage, torch::nn::Module& model, const TrainSettings& ts,
                 std::int64_t steps_per_epoch, const BatchOf& batch_of, const LossOf& loss_of,
                 const EvalFn& eval) {
  ts.validate();
  fs::create_directories(ctx.checkpoint_dir);
  const auto name = stage_checkpoint_name(stage);
  StageOutcome out;
  out.checkpoint = ctx.checkpoint_dir / (name + ".ckpt");

  const auto cfg_json = to_json(ctx.cfg);
  TrainLog& log = out.log;
  log.stage = stage_label(stage);
  log.config_hash = config_hash(cfg_json);
  log.seed = ctx.cfg.seed;
  const auto resume_key = resume_hash(cfg_json);

  torch::optim::AdamW opt(model.parameters(), torch::optim::AdamWOptions(ts.lr).weight_decay(ts.weight_decay));

  LoopOptions lo;
  lo.total_steps = ts.max_steps > 0 ? ts.max_steps : static_cast<std::int64_t>(ts.epochs) * steps_per_epoch;
  lo.log_every = ts.log_every;
  lo.target_dice = ts.target_dice;
  lo.eval_every = ts.eval_every;
  lo.verbose = ctx.verbose;

  auto save = [&]() {
    CheckpointMeta meta;
    meta.kind = name;
    meta.config = cfg_json;
    meta.config_hash = log.config_hash;
    meta.seed = ctx.cfg.seed;
    meta.step = log.steps;
    meta.extra = log.to_json();
    meta.extra["resume_hash"] = resume_key;
    save_checkpoint(out.checkpoint, model, meta, &opt);
  };

  if (ctx.resume && fs::exists(out.checkpoint)) {
    const auto meta = read_checkpoint_meta(out.checkpoint);
    if (meta.extra.value("resume_hash", std::string{}) == resume_key) {
      load_checkpoint(out.checkpoint, model, &opt);
      log.steps = meta.step;
      log.losses = meta.extra.at("losses").get<std::vector<double>>();
      for (const auto& e : meta.extra.at("evaluations")) {
        log.evaluations.emplace_back(e.at("step").get<std::int64_t>(), e.at("dice").get<double>());
      }
      log.early_stopped = meta.extra.value("early_stopped", false);
      if (ctx.verbose) std::cout << "  [" << log.stage << "] resuming at step " << log.steps << std::endl;
      if (log.early_stopped || log.steps >= lo.total_steps) {
        write_log(ctx.checkpoint_dir / (name + ".log.json"), log);
        return out;
      }
    }
  }

  auto step = [&](std::int64_t s) {
    model.train();
    const auto batch = batch_of(s);
    opt.zero_grad();
    const auto loss = loss_of(batch);
    check_finite_loss(loss, s, log.stage);
    loss.backward();
    opt.step();
    return loss.item<double>();
  };
  EvalFn guarded_eval;
  if (eval) {
    guarded_eval = [&]() {
      torch::NoGradGuard ng;
      model.eval();
      const double d = eval();
      model.train();
      return d;
    };
  }
  lo.checkpoint_every = kCheckpointInterval;
  run_loop(log, lo, step, guarded_eval, save);
  save();
  write_log(ctx.checkpoint_dir / (name + ".log.json"), log);
  return out;
}

}  // namespace

std::vector<TrainingVolume> stage2_volumes(std::span<const MultiPhaseCase> cases, Stage variant,
                                           std::span<const Heatmap> heatmaps) {
  if (!heatmaps.empty() && heatmaps.size() != cases.size()) {
    throw std::invalid_argument("stage2_volumes: one heatmap per case required");
  }
  const auto phases = stage2_phases(variant);
  std::vector<TrainingVolume> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto c = heatmaps.empty() ? cases[i] : apply_heatmap(cases[i], heatmaps[i]);
    TrainingVolume tv;
    for (const auto p : phases) tv.channels.push_back(c.phase(p).voxels);
    tv.mask = c.mask;
    out.push_back(std::move(tv));
  }
  return out;
}

std::vector<TrainingVolume> fusion_volumes(std::span<const MultiPhaseCase> cases,
                                           std::span<const std::array<Volume, 4>> probabilities) {
  if (probabilities.size() != cases.size()) throw std::invalid_argument("fusion_volumes: one map set per case required");
  std::vector<TrainingVolume> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    TrainingVolume tv;
    for (std::size_t pi = 0; pi < kPhaseOrder.size(); ++pi) {
      const auto& v = cases[i].phase(kPhaseOrder[pi]).voxels;
      auto in = form_fusion_input(v, probabilities[i][pi], probabilities[i][3]);
      tv.channels.push_back(std::move(in.image));
      tv.channels.push_back(std::move(in.probability));
    }
    tv.mask = cases[i].mask;
    out.push_back(std::move(tv));
  }
  return out;
}

std::vector<TrainingVolume> refiner_volumes(std::span<const MultiPhaseCase> cases, const RefineOptions& opts) {
  std::vector<TrainingVolume> out;
  for (const auto& c : cases) {
    for (const auto& les : extract_lesions(c.mask, opts.connectivity, c.spacing())) {
      if (les.size() <= 1) continue;
      const auto box = crop_with_margin(les, c.dims(), opts.margin, opts.divisor, opts.min_size);
      TrainingVolume tv;
      for (const auto p : kPhaseOrder) tv.channels.push_back(crop(c.phase(p).voxels, box.input_origin, box.input_size));
      tv.mask = crop(c.mask, box.input_origin, box.input_size);
      out.push_back(std::move(tv));
    }
  }
  return out;
}

StageOutcome train_stage1(const TrainContext& ctx, std::span<const MultiPhaseCase> cases) {
  auto model = make_flagger(ctx.cfg);
  std::vector<TrainingVolume> vols;
  for (const auto& c : cases) {
    TrainingVolume tv;
    for (const auto p : kPhaseOrder) tv.channels.push_back(c.phase(p).voxels);
    tv.mask = c.mask;
    vols.push_back(std::move(tv));
  }
  const auto& ts = ctx.cfg.train_stage1;
  PatchSource source(vols, ts, derive_seed(ctx.cfg.seed, 1000 + stage_index(Stage::Stage1)));
  std::vector<int> scales;
  for (const int s : ctx.cfg.stage1.scales_mm) {
    scales.push_back(static_cast<int>(std::lround(s / ctx.cfg.target_spacing_mm)));
  }
  return fit(
      ctx, Stage::Stage1, *model, ts, static_cast<std::int64_t>(cases.size()),
      [&](std::int64_t s) { return source.draw(s); },
      [&](const Batch& b) { return flagger_loss(model->forward(b.input), b.target, scales, ctx.cfg.loss); }, {});
}

StageOutcome train_stage2(const TrainContext& ctx, Stage variant, std::span<const MultiPhaseCase> cases,
                          std::span<const Heatmap> heatmaps, const SegEvalFn& eval) {
  if (!is_stage2(variant)) throw std::invalid_argument("train_stage2: not a stage-2 variant");
  auto model = make_stage2(ctx.cfg, variant);
  const auto vols = stage2_volumes(cases, variant, heatmaps);
  const auto& ts = ctx.cfg.train_stage2;
  PatchSource source(vols, ts, derive_seed(ctx.cfg.seed, 1000 + stage_index(variant)));
  return fit(
      ctx, variant, *model, ts, static_cast<std::int64_t>(cases.size()),
      [&](std::int64_t s) { return source.draw(s); },
      [&](const Batch& b) { return segmentation_loss(model->forward(b.input), b.target, ctx.cfg.loss); },
      eval ? EvalFn([&]() { return eval(model); }) : EvalFn{});
}

StageOutcome train_fusion(const TrainContext& ctx, std::span<const MultiPhaseCase> cases,
                          std::span<const std::array<Volume, 4>> probabilities) {
  auto model = make_fusion(ctx.cfg);
  const auto vols = fusion_volumes(cases, probabilities);
  const auto& ts = ctx.cfg.train_fusion;
  PatchSource source(vols, ts, derive_seed(ctx.cfg.seed, 1000 + stage_index(Stage::Stage3Fusion)));
  const auto branches = ctx.cfg.fusion.branches;
  return fit(
      ctx, Stage::Stage3Fusion, *model, ts, static_cast<std::int64_t>(cases.size()),
      [&](std::int64_t s) { return source.draw(s); },
      [&](const Batch& b) {
        std::vector<torch::Tensor> in;
        for (int i = 0; i < branches; ++i) in.push_back(b.input.narrow(1, 2 * i, 2));
        return segmentation_loss(model->forward(in), b.target, ctx.cfg.loss);
      },
      {});
}

StageOutcome train_refiner(const TrainContext& ctx, std::span<const MultiPhaseCase> cases) {
  auto model = make_refiner(ctx.cfg);
  const auto crops = refiner_volumes(cases, ctx.cfg.refine);
  const auto& ts = ctx.cfg.train_refiner;
  const auto seed = derive_seed(ctx.cfg.seed, 1000 + stage_index(Stage::Stage3Refiner));
  return fit(
      ctx, Stage::Stage3Refiner, *model, ts, static_cast<std::int64_t>(std::max<std::size_t>(crops.size(), 1)),
      [&](std::int64_t s) { return draw_crop(crops, ts, seed, s); },
      [&](const Batch& b) { return segmentation_loss(model->forward(b.input), b.target, ctx.cfg.loss); }, {});
}

}  // namespace mpls
