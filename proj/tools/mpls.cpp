// mpls: phantom generation, stage-wise training, inference, evaluation and
// report figures for the multi-phase lesion segmentation pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <torch/torch.h>

#include "mpls/config.hpp"
#include "mpls/errors.hpp"
#include "mpls/phantom.hpp"
#include "mpls/pipeline.hpp"
#include "mpls/report.hpp"

namespace fs = std::filesystem;
using namespace mpls;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kDependency = 3, kNumerical = 4 };

PipelineConfig resolve_config(const std::string& path, bool desk, const std::optional<std::uint64_t>& seed) {
  PipelineConfig cfg = path.empty() ? (desk ? desk_config() : PipelineConfig{}) : load_config(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void print_summary(const EvalReport& r) {
  std::cout << "global dice " << r.global_dice << "\n";
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    std::cout << kMetricNames[m] << " " << r.summary[m].mean << " +- " << r.summary[m].std << "\n";
  }
  std::cout << "AP " << r.detection.ap << " AR " << r.detection.ar << " AF1 " << r.detection.af1 << "\n";
  if (r.localization.empty()) {
    std::cout << "localization: no matched lesions\n";
  } else {
    std::cout << "localization " << r.localization.mean_mm << " +- " << r.localization.std_mm << " mm ("
              << r.localization.count << " lesions)\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-phase liver lesion segmentation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  bool desk = false;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "pipeline config JSON")->check(CLI::ExistingFile);
    sub->add_flag("--desk", desk, "start from the desk-scale defaults when no config is given");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_flag("-v,--verbose", verbose);
  };

  // config
  auto* cmd_config = app.add_subcommand("config", "print the effective configuration as JSON");
  add_common(cmd_config);

  // phantom
  auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic multi-phase dataset");
  add_common(cmd_phantom);
  std::string phantom_out;
  int n_train = 8, n_test = 4;
  cmd_phantom->add_option("-o,--out", phantom_out, "output directory")->required();
  cmd_phantom->add_option("--train", n_train, "training cases")->check(CLI::PositiveNumber);
  cmd_phantom->add_option("--test", n_test, "test cases")->check(CLI::PositiveNumber);

  // train
  auto* cmd_train = app.add_subcommand("train", "train one stage (or all) and write its checkpoint");
  add_common(cmd_train);
  std::string stage = "all", train_manifest, ckpt_dir;
  bool no_resume = false;
  cmd_train->add_option("-s,--stage", stage,
                        "1, 2-arterial, 2-delay, 2-venous, 2-threephase, 3-fusion, 3-refiner or all");
  cmd_train->add_option("-m,--manifest", train_manifest, "training manifest")->required()->check(CLI::ExistingFile);
  cmd_train->add_option("--checkpoints", ckpt_dir, "checkpoint directory")->required();
  cmd_train->add_flag("--no-resume", no_resume, "ignore existing checkpoints");

  // infer
  auto* cmd_infer = app.add_subcommand("infer", "run the pipeline on every case of a manifest");
  add_common(cmd_infer);
  std::string infer_manifest_path, infer_out, stop_after = "full";
  bool keep = false;
  cmd_infer->add_option("-m,--manifest", infer_manifest_path, "case manifest")->required()->check(CLI::ExistingFile);
  cmd_infer->add_option("--checkpoints", ckpt_dir, "checkpoint directory")->required();
  cmd_infer->add_option("-o,--out", infer_out, "output directory")->required();
  cmd_infer->add_option("--stop-after", stop_after, "stage1, stage2, fusion or full");
  cmd_infer->add_flag("--keep-intermediates", keep, "write heatmap and per-model probability maps");

  // evaluate
  auto* cmd_eval = app.add_subcommand("evaluate", "score predictions against a ground-truth manifest");
  add_common(cmd_eval);
  std::string pred_dir, gt_manifest, report_out, csv_out, figures_dir, compare_dir;
  cmd_eval->add_option("-p,--pred", pred_dir, "prediction directory")->required()->check(CLI::ExistingDirectory);
  cmd_eval->add_option("-m,--manifest", gt_manifest, "ground-truth manifest")->required()->check(CLI::ExistingFile);
  cmd_eval->add_option("-o,--out", report_out, "report JSON")->required();
  cmd_eval->add_option("--csv", csv_out, "per-subject CSV");
  cmd_eval->add_option("--figures", figures_dir, "write SVG figures here");
  cmd_eval->add_option("--compare", compare_dir, "second prediction directory; emits per-subject deltas")
      ->check(CLI::ExistingDirectory);

  // report
  auto* cmd_report = app.add_subcommand("report", "draw figures from one or more report JSON files");
  std::vector<std::string> report_files, report_names;
  std::string report_dir;
  cmd_report->add_option("reports", report_files, "report JSON files")->required()->check(CLI::ExistingFile);
  cmd_report->add_option("-n,--names", report_names, "legend names (default: file stems)");
  cmd_report->add_option("-o,--out", report_dir, "figure directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*cmd_config) {
      std::cout << to_json(resolve_config(config_path, desk, seed)).dump(2) << '\n';
    } else if (*cmd_phantom) {
      const auto cfg = resolve_config(config_path, desk, seed);
      const auto ds = generate_dataset(cfg.phantom, n_train, n_test, cfg.seed, phantom_out);
      std::cout << "wrote " << n_train + n_test << " cases\n"
                << "train manifest " << ds.train_manifest.string() << "\n"
                << "test manifest " << ds.test_manifest.string() << "\n";
    } else if (*cmd_train) {
      const auto cfg = resolve_config(config_path, desk, seed);
      TrainContext ctx{cfg, ckpt_dir, !no_resume, verbose};
      const auto manifest = load_manifest(train_manifest);
      std::vector<StageOutcome> outcomes;
      if (stage == "all") {
        outcomes = train_all(ctx, manifest);
      } else {
        outcomes.push_back(train_stage(ctx, parse_stage(stage), manifest));
      }
      for (const auto& o : outcomes) {
        std::cout << "stage " << o.log.stage << ": " << o.log.steps << " steps, final loss "
                  << (o.log.losses.empty() ? 0.0 : o.log.losses.back()) << " -> " << o.checkpoint.string() << "\n";
      }
    } else if (*cmd_infer) {
      const auto cfg = resolve_config(config_path, desk, seed);
      infer_manifest(load_manifest(infer_manifest_path), ckpt_dir, cfg, infer_out, parse_stop_after(stop_after), keep,
                     verbose);
      std::cout << "predictions written to " << infer_out << "\n";
    } else if (*cmd_eval) {
      const auto cfg = resolve_config(config_path, desk, seed);
      EvalOptions opts;
      opts.tolerance_mm = cfg.tolerance_mm;
      opts.connectivity = cfg.refine.connectivity;
      const auto manifest = load_manifest(gt_manifest);
      std::vector<std::string> warnings;
      auto report = evaluate_directory(pred_dir, manifest, opts, &warnings);
      report.config_hash = config_hash(cfg);
      report.seed = cfg.seed;
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      write_json(report_out, to_json(report));
      if (!csv_out.empty()) {
        std::ofstream csv(csv_out);
        write_csv(csv, report);
      }
      std::vector<NamedReport> named{{fs::path(pred_dir).filename().string(), report}};
      if (!compare_dir.empty()) {
        std::vector<std::string> w2;
        auto other = evaluate_directory(compare_dir, manifest, opts, &w2);
        other.config_hash = report.config_hash;
        other.seed = report.seed;
        for (const auto& w : w2) std::cerr << "warning: " << w << '\n';
        nlohmann::json deltas = nlohmann::json::array();
        for (const auto& d : compare_reports(report, other)) {
          nlohmann::json row{{"subject_id", d.subject_id}};
          for (std::size_t m = 0; m < kMetricNames.size(); ++m) row[kMetricNames[m]] = d.delta[m];
          deltas.push_back(row);
        }
        auto cmp_path = fs::path(report_out);
        cmp_path.replace_extension(".compare.json");
        write_json(cmp_path, {{"a", pred_dir}, {"b", compare_dir}, {"delta_b_minus_a", deltas}, {"b_report", to_json(other)}});
        std::cout << "comparison written to " << cmp_path.string() << "\n";
        named.push_back({fs::path(compare_dir).filename().string(), other});
      }
      if (!figures_dir.empty()) write_figures(figures_dir, named);
      print_summary(report);
    } else if (*cmd_report) {
      std::vector<NamedReport> named;
      for (std::size_t i = 0; i < report_files.size(); ++i) {
        auto r = report_from_json(read_json(report_files[i]));
        const auto name = i < report_names.size() ? report_names[i] : fs::path(report_files[i]).stem().string();
        named.push_back({name, std::move(r)});
      }
      for (const auto& p : write_figures(report_dir, named)) std::cout << p.string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return kDependency;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
