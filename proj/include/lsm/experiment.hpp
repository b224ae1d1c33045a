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

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lsm/config.hpp"
#include "lsm/data.hpp"
#include "lsm/evaluation.hpp"
#include "lsm/geometry.hpp"
#include "lsm/trainer.hpp"

namespace lsm {

struct PreparedData {
  std::vector<Category> categories;
  TrainingData training;
  HeldOutTruths held_out;
  int image_size = 0;  // synthetic image edge, 0 for COCO input
};

PreparedData prepare_data(const ExperimentConfig& config);

struct TrainOutcome {
  std::filesystem::path output_dir;
  RunSummary summary;
};

/// Validates, then trains. Writes resolved.cfg, metrics.ndjson, checkpoints,
/// final_eval.json and (with unlabeled data) the teacher's pseudo-labels on
/// the unlabeled split next to their held-out truths.
TrainOutcome cmd_train(const ExperimentConfig& config,
                       const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// Teacher evaluation of a checkpoint; returns the JSON text also written to
/// `output_json` when that is non-empty.
std::string cmd_eval(const std::filesystem::path& checkpoint,
                     const std::vector<DetectionSample>& dataset,
                     const std::filesystem::path& output_json = {}, bool use_student = false);

struct AnalyzeReport {
  std::map<AreaBin, double> binned_mean_iou;
  std::map<AreaBin, std::size_t> bin_counts;
  std::size_t predictions = 0;
  std::size_t matched = 0;
  /// Large-bin mean IoU >= small-bin mean IoU (absent when a bin is empty).
  std::optional<bool> large_at_least_small;
};

/// IoU of each prediction with its same-category truth under `matching`
/// (any overlap counts), written as binned_iou.csv, iou_vs_area.csv,
/// score_vs_iou.csv and iou_vs_area.svg.
AnalyzeReport cmd_analyze(const std::filesystem::path& predictions_json,
                          const std::filesystem::path& truths_json,
                          const std::filesystem::path& output_dir,
                          MatchMode matching = MatchMode::kOneToOne);

enum class SweepParameter { kAlpha, kT, kPimLevels };
SweepParameter parse_sweep_parameter(const std::string& text);

struct SweepRow {
  std::string value;
  std::optional<EvalResult> baseline;  // absent for pim_levels rows
  EvalResult lsm;
  bool degenerate = false;  // alpha == t
};

struct SweepOptions {
  std::filesystem::path output_dir;
  bool parallel = false;
  double budget_minutes = 45.0;
  double seconds_per_step = 0.1;  // runtime estimate used for the budget check
};

inline constexpr std::size_t kMaxSweepPoints = 8;

/// Thrown before any training when a sweep would exceed its budget.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One run per value with the shared seed (plus mean-teacher baselines for
/// threshold sweeps). Writes sweep.csv, sweep.svg and, for pim_levels, a
/// table5.csv / table5.md level table.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, SweepParameter parameter,
                                const std::vector<std::string>& values,
                                const SweepOptions& options);

/// Synthetic dataset as PNG files plus annotations.json.
void cmd_gen_data(const std::filesystem::path& output_dir, int n_images, int image_size,
                  std::uint64_t seed);

}  // namespace lsm
