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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsm/data.hpp"
#include "lsm/detector.hpp"
#include "lsm/evaluation.hpp"
#include "lsm/losses.hpp"
#include "lsm/pseudo_label.hpp"

namespace lsm {

enum class TrainMode {
  kBaseline,  // mean teacher only
  kLsm,       // mean teacher + auxiliary branch + self-distillation
  kPimOnly,   // mean teacher + auxiliary branch
};

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct TrainerConfig {
  TrainMode mode = TrainMode::kLsm;
  int steps = 3000;
  int burn_in_steps = -1;  // negative: steps / 9
  double learning_rate = 0.02;
  int warmup_steps = 100;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 10.0;  // global L2 norm; <= 0 disables
  double lambda_u = 2.0;
  double lambda_e = 0.9996;
  double lambda_p = 0.5;
  Thresholds thresholds;
  int labeled_batch = 1;
  int unlabeled_batch = 1;
  LossOptions loss;
  AugmentationSettings augmentation;
  std::uint64_t seed = 0;
  int eval_every = 0;        // 0: final step only
  int checkpoint_every = 0;  // 0: final step only
  double eval_score_floor = 0.05;

  int resolved_burn_in() const { return burn_in_steps >= 0 ? burn_in_steps : steps / 9; }
  /// Every violated constraint, one message per field.
  std::vector<std::string> validation_errors() const;
  void validate() const;
};

class TrainState {
 public:
  TrainState(Detector student, Detector teacher);

  /// Student and teacher start from the same random draw.
  static TrainState initialize(const DetectorConfig& detector, const TrainerConfig& trainer);

  /// Deep copy (parameters and momentum are not shared).
  TrainState clone() const;

  Detector student;
  Detector teacher;  // parameters never take gradients
  std::int64_t step = 0;
  double lambda_u = 2.0;
  double lambda_e = 0.9996;
  double lambda_p = 0.5;
  Thresholds thresholds;
  int burn_in_steps = 0;
  std::vector<Tensor> momentum;  // per student parameter, same order
};

struct LossReport {
  std::int64_t step = 0;
  double L_m_s = 0, L_m_u = 0, L_p_u = 0, L_distill = 0, total = 0;
  double L_m_s_cls = 0, L_m_s_reg = 0;
  double L_m_u_cls = 0, L_m_u_reg = 0;
  double L_p_u_cls = 0, L_p_u_reg = 0;
  std::size_t n_main = 0, n_pim = 0, n_sd = 0;  // pseudo-boxes used
  bool burn_in = false;

  nlohmann::json to_json() const;
};

/// theta_t <- lambda_e * theta_t + (1 - lambda_e) * theta_s, elementwise.
void ema_update(ParameterSet& teacher, const ParameterSet& student, double lambda_e);
void ema_update(TrainState& state);

/// Copies the student's main classifier into its auxiliary classifier (student
/// and teacher) and clears the auxiliary momentum.
void warm_start_auxiliary(TrainState& state);

/// One optimizer step of the student on the combined loss followed by the
/// teacher update (copy during burn-in, EMA afterwards). The first step after
/// burn-in starts with warm_start_auxiliary.
LossReport train_step(TrainState& state, const TrainerConfig& config,
                      std::span<const DetectionSample> labeled_batch,
                      std::span<const DetectionSample> unlabeled_batch);

/// Losses of one step without updating anything; `loss_graph` receives the
/// differentiable total.
LossReport compute_step_losses(const TrainState& state, const TrainerConfig& config,
                               std::span<const DetectionSample> labeled_batch,
                               std::span<const DetectionSample> unlabeled_batch,
                               ag::Var* loss_graph = nullptr);

/// Main-branch predictions of `model` on every sample, evaluated against the
/// samples' annotations.
EvalResult evaluate_detector(const Detector& model, const std::vector<DetectionSample>& samples,
                             double score_floor = 0.05);

struct TrainingData {
  std::vector<DetectionSample> labeled;
  std::vector<DetectionSample> unlabeled;  // annotations withheld
  std::vector<DetectionSample> evaluation;
};

struct RunOptions {
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> resume_from;
  nlohmann::json resolved_config = nlohmann::json::object();  // stored in checkpoints
  std::function<void(const LossReport&, const std::optional<EvalResult>&)> on_step;
};

struct RunSummary {
  std::optional<EvalResult> final_eval;
  std::filesystem::path metric_log;
  std::filesystem::path final_checkpoint;
  std::int64_t steps = 0;
};

inline constexpr const char* kMetricLogName = "metrics.ndjson";

/// Burn-in then joint training; writes `metrics.ndjson` and checkpoints under
/// `options.output_dir`, evaluating the teacher every `eval_every` steps.
RunSummary run_training(const TrainingData& data, const DetectorConfig& detector,
                        const TrainerConfig& trainer, const RunOptions& options);

}  // namespace lsm
