// Copyright 2026 The LSM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: train, eval, analyze, sweep, gen-data.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lsm/checkpoint.hpp"
#include "lsm/config.hpp"
#include "lsm/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::filesystem::path output_root() {
  const char* root = std::getenv(lsm::kOutputRootEnv);
  return (root && *root) ? std::filesystem::path(root) : std::filesystem::path("runs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-confidence samples mining for semi-supervised detection"};
  app.require_subcommand(1);

  std::string config_path, mode, output, resume;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train a detector from a config file");
  train->add_option("--config", config_path, "Config file (key = value lines)");
  train->add_option("--override", overrides, "key=value, repeatable");
  train->add_option("--mode", mode, "baseline, lsm or pim_only");
  train->add_option("--output", output, "Output directory");
  train->add_option("--resume", resume, "Checkpoint to resume from");

  std::string checkpoint, annotations, images, eval_config;
  bool student = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint's teacher");
  eval->add_option("--checkpoint", checkpoint, "LSMCKPT1 file")->required();
  eval->add_option("--annotations", annotations, "COCO annotations of the evaluation set");
  eval->add_option("--images", images, "Image directory for --annotations");
  eval->add_option("--config", eval_config, "Use this config's evaluation set");
  eval->add_option("--override", overrides, "key=value, repeatable");
  eval->add_option("--output", output, "Output JSON path");
  eval->add_flag("--student", student, "Evaluate the student instead of the teacher");

  std::string predictions, truths;
  auto* analyze = app.add_subcommand("analyze", "IoU-versus-area analysis of predictions");
  analyze->add_option("--predictions", predictions, "COCO results JSON")->required();
  analyze->add_option("--truths", truths, "COCO annotations JSON")->required();
  analyze->add_option("--output", output, "Output directory");
  std::string matching = "one-to-one";
  analyze->add_option("--matching", matching, "one-to-one or best (best truth per prediction)")
      ->check(CLI::IsMember({"one-to-one", "best"}));

  std::string param;
  std::vector<std::string> values;
  bool parallel = false;
  double budget = 45.0;
  auto* sweep = app.add_subcommand("sweep", "Train one run per parameter value");
  sweep->add_option("--config", config_path, "Base config file");
  sweep->add_option("--override", overrides, "key=value, repeatable");
  sweep->add_option("--param", param, "alpha, t or pim_levels")->required();
  sweep->add_option("--values", values, "Values (pim_levels as e.g. 2,3 or P2d+P4d)")->required();
  sweep->add_option("--output", output, "Output directory");
  sweep->add_flag("--parallel", parallel, "Run sweep points concurrently");
  sweep->add_option("--budget-minutes", budget, "Refuse sweeps estimated above this");

  int n_images = 200, image_size = 128;
  std::uint64_t seed = 7;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic shapes dataset (COCO schema)");
  gen->add_option("--output", output, "Output directory");
  gen->add_option("--num-images", n_images, "Number of images");
  gen->add_option("--image-size", image_size, "Image edge in pixels");
  gen->add_option("--seed", seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) {
      auto all = overrides;
      if (!mode.empty()) all.push_back("trainer.mode=" + mode);
      if (!output.empty()) all.push_back("experiment.output_dir=" + output);
      const auto cfg = lsm::ExperimentConfig::load(config_path, all);
      std::optional<std::filesystem::path> from;
      if (!resume.empty()) from = resume;
      const auto outcome = lsm::cmd_train(cfg, from);
      std::cout << "output: " << outcome.output_dir.string() << "\n";
      std::cout << "checkpoint: " << outcome.summary.final_checkpoint.string() << "\n";
      if (outcome.summary.final_eval) {
        std::cout << outcome.summary.final_eval->to_json().dump(2) << "\n";
      }
    } else if (eval->parsed()) {
      std::vector<lsm::DetectionSample> dataset;
      if (!annotations.empty()) {
        if (images.empty()) throw lsm::ConfigError({"--annotations needs --images"});
        dataset = lsm::load_coco_json(images, annotations).samples;
      } else {
        auto cfg = lsm::ExperimentConfig::load(eval_config, overrides);
        cfg.validate();
        dataset = lsm::prepare_data(cfg).training.evaluation;
      }
      if (dataset.empty()) throw lsm::ConfigError({"evaluation set is empty"});
      const std::filesystem::path out =
          output.empty() ? output_root() / "eval" /
                               (std::filesystem::path(checkpoint).stem().string() + ".json")
                         : std::filesystem::path(output);
      std::cout << lsm::cmd_eval(checkpoint, dataset, out, student);
    } else if (analyze->parsed()) {
      const std::filesystem::path out =
          output.empty() ? output_root() / "analysis" : std::filesystem::path(output);
      const auto report = lsm::cmd_analyze(
          predictions, truths, out,
          matching == "best" ? lsm::MatchMode::kBestPerPrediction : lsm::MatchMode::kOneToOne);
      std::cout << "analysis written to " << out.string() << "\n";
      for (const auto& [bin, v] : report.binned_mean_iou) {
        std::cout << "  " << lsm::to_string(bin) << ": mean IoU " << v << " over "
                  << report.bin_counts.at(bin) << " boxes\n";
      }
      if (report.large_at_least_small && !*report.large_at_least_small) {
        std::cout << "  note: large-bin mean IoU is below the small-bin mean IoU\n";
      }
    } else if (sweep->parsed()) {
      const auto cfg = lsm::ExperimentConfig::load(config_path, overrides);
      lsm::SweepParameter which;
      try {
        which = lsm::parse_sweep_parameter(param);
      } catch (const std::invalid_argument& e) {
        throw lsm::ConfigError({e.what()});
      }
      lsm::SweepOptions opts;
      opts.output_dir = output.empty() ? output_root() / (cfg.name + "_sweep_" + param) : std::filesystem::path(output);
      opts.parallel = parallel;
      opts.budget_minutes = budget;
      const auto rows = lsm::cmd_sweep(cfg, which, values, opts);
      std::cout << param << "\tbaseline_mAP\tlsm_mAP\n";
      for (const auto& r : rows) {
        std::cout << r.value << '\t' << (r.baseline ? std::to_string(r.baseline->ap50_95) : "-")
                  << '\t' << r.lsm.ap50_95
                  << (r.degenerate ? "\t(alpha = t: two-view consistency only, no distillation)" : "")
                  << '\n';
      }
      std::cout << "results in " << opts.output_dir.string() << "\n";
    } else if (gen->parsed()) {
      const std::filesystem::path out = output.empty() ? output_root() / "shapes" : std::filesystem::path(output);
      lsm::cmd_gen_data(out, n_images, image_size, seed);
      std::cout << "wrote " << n_images << " images to " << out.string() << "\n";
    }
  } catch (const lsm::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const lsm::BudgetError& e) {
    std::cerr << "refusing sweep: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
