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

#include "lsm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lsm/checkpoint.hpp"
#include "lsm/random.hpp"

namespace lsm {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTagLabeledWeak = 21, kTagLabeledStrong = 22, kTagLabeledLoss = 23;
constexpr std::uint64_t kTagUnlabeledWeak = 31, kTagUnlabeledStrong = 32,
                        kTagUnlabeledLoss = 33;
constexpr std::uint64_t kTagPickLabeled = 11, kTagPickUnlabeled = 12;

// Smallest pre-downsampling edge that keeps the auxiliary view at the
// backbone minimum.
constexpr int kMinStudentEdge = 2 * kMinBackboneInput;

void require_finite(double v, const char* name, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("non-finite " + std::string(name) + " (" + std::to_string(v) +
                             ") at step " + std::to_string(step));
  }
}

// Weak view, then the strong recipe on top of it.
struct Views {
  DetectionSample weak;
  AugmentationRecipe strong_recipe;
  DetectionSample strong;
};

Views make_views(const DetectionSample& sample, const AugmentationSettings& settings,
                 std::uint64_t weak_seed, std::uint64_t strong_seed) {
  Views v;
  v.weak = apply_augmentation(
      sample, AugmentationRecipe::sample(AugmentationKind::kWeak, weak_seed, settings));
  AugmentationSettings strong = settings;
  const int edge = std::min(v.weak.width(), v.weak.height());
  strong.crop_min_keep =
      std::min(1.0, std::max(settings.crop_min_keep, static_cast<double>(kMinStudentEdge) / edge));
  strong.crop_max_keep = std::max(strong.crop_max_keep, strong.crop_min_keep);
  v.strong_recipe = AugmentationRecipe::sample(AugmentationKind::kStrong, strong_seed, strong);
  v.strong = apply_augmentation(v.weak, v.strong_recipe);
  return v;
}

double learning_rate_at(const TrainerConfig& cfg, std::int64_t step) {
  if (cfg.warmup_steps <= 0) return cfg.learning_rate;
  const double ramp = static_cast<double>(step + 1) / cfg.warmup_steps;
  return cfg.learning_rate * std::min(1.0, ramp);
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kBaseline:
      return "baseline";
    case TrainMode::kLsm:
      return "lsm";
    case TrainMode::kPimOnly:
      return "pim_only";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& text) {
  if (text == "baseline") return TrainMode::kBaseline;
  if (text == "lsm") return TrainMode::kLsm;
  if (text == "pim_only") return TrainMode::kPimOnly;
  throw std::invalid_argument("unknown mode '" + text + "' (baseline, lsm, pim_only)");
}

std::vector<std::string> TrainerConfig::validation_errors() const {
  std::vector<std::string> e;
  if (steps < 1) e.push_back("trainer.steps must be >= 1");
  if (burn_in_steps > steps) e.push_back("trainer.burn_in_steps must not exceed trainer.steps");
  if (!(learning_rate > 0)) e.push_back("trainer.learning_rate must be > 0");
  if (warmup_steps < 0) e.push_back("trainer.warmup_steps must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) e.push_back("trainer.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) e.push_back("trainer.weight_decay must be >= 0");
  if (!(lambda_u >= 0)) e.push_back("trainer.lambda_u must be >= 0");
  if (!(lambda_e >= 0 && lambda_e <= 1)) e.push_back("trainer.lambda_e must lie in [0, 1]");
  if (!(lambda_p > 0 && lambda_p <= 1)) e.push_back("trainer.lambda_p must lie in (0, 1]");
  if (!(thresholds.t >= 0 && thresholds.t <= 1)) e.push_back("trainer.t must lie in [0, 1]");
  if (!(thresholds.alpha >= 0 && thresholds.alpha <= 1)) {
    e.push_back("trainer.alpha must lie in [0, 1]");
  }
  if (thresholds.alpha > thresholds.t) e.push_back("trainer.alpha: alpha must be < t");
  if (labeled_batch < 1) e.push_back("trainer.labeled_batch must be >= 1");
  if (unlabeled_batch < 0) e.push_back("trainer.unlabeled_batch must be >= 0");
  if (eval_every < 0) e.push_back("trainer.eval_every must be >= 0");
  if (checkpoint_every < 0) e.push_back("trainer.checkpoint_every must be >= 0");
  if (!(eval_score_floor >= 0 && eval_score_floor <= 0.05)) {
    e.push_back("trainer.eval_score_floor must lie in [0, 0.05]");
  }
  if (loss.roi_batch < 1 || loss.rpn_batch < 1) e.push_back("loss batch sizes must be >= 1");
  return e;
}

void TrainerConfig::validate() const {
  const auto errors = validation_errors();
  if (errors.empty()) return;
  std::string msg;
  for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
  throw std::invalid_argument(msg);
}

// --- state -----------------------------------------------------------------

TrainState::TrainState(Detector s, Detector t) : student(std::move(s)), teacher(std::move(t)) {
  student.params().check_compatible(teacher.params());
  for (const auto& e : student.params().entries()) {
    momentum.push_back(Tensor::zeros_like(e.var.value()));
  }
}

TrainState TrainState::initialize(const DetectorConfig& detector, const TrainerConfig& trainer) {
  trainer.validate();
  Detector student = Detector::create(detector, derive_seed(trainer.seed, {0x696e6974}), true);
  Detector teacher(detector, student.params().clone(false));
  TrainState s(std::move(student), std::move(teacher));
  s.lambda_u = trainer.lambda_u;
  s.lambda_e = trainer.lambda_e;
  s.lambda_p = trainer.lambda_p;
  s.thresholds = trainer.thresholds;
  s.burn_in_steps = trainer.resolved_burn_in();
  return s;
}

TrainState TrainState::clone() const {
  TrainState c(Detector(student.config(), student.params().clone(true)),
               Detector(teacher.config(), teacher.params().clone(false)));
  c.step = step;
  c.lambda_u = lambda_u;
  c.lambda_e = lambda_e;
  c.lambda_p = lambda_p;
  c.thresholds = thresholds;
  c.burn_in_steps = burn_in_steps;
  c.momentum = momentum;
  return c;
}

nlohmann::json LossReport::to_json() const {
  return {{"step", step},          {"L_m_s", L_m_s},   {"L_m_u", L_m_u},
          {"L_p_u", L_p_u},        {"L_distill", L_distill}, {"total", total},
          {"L_m_s_cls", L_m_s_cls}, {"L_m_s_reg", L_m_s_reg}, {"L_m_u_cls", L_m_u_cls},
          {"L_m_u_reg", L_m_u_reg}, {"L_p_u_cls", L_p_u_cls}, {"L_p_u_reg", L_p_u_reg},
          {"n_main", n_main},      {"n_pim", n_pim},   {"n_sd", n_sd},
          {"burn_in", burn_in}};
}

void ema_update(ParameterSet& teacher, const ParameterSet& student, double lambda_e) {
  if (!(lambda_e >= 0 && lambda_e <= 1)) throw std::invalid_argument("lambda_e must lie in [0, 1]");
  teacher.check_compatible(student);
  auto& te = teacher.entries();
  const auto& se = student.entries();
  for (std::size_t i = 0; i < te.size(); ++i) {
    Tensor& t = te[i].var.mutable_value();
    const Tensor& s = se[i].var.value();
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = lambda_e * t[k] + (1.0 - lambda_e) * s[k];
  }
}

void ema_update(TrainState& state) {
  ema_update(state.teacher.params(), state.student.params(), state.lambda_e);
}

// --- step ------------------------------------------------------------------

LossReport compute_step_losses(const TrainState& state, const TrainerConfig& cfg,
                               std::span<const DetectionSample> labeled,
                               std::span<const DetectionSample> unlabeled,
                               ag::Var* loss_graph) {
  const Detector& student = state.student;
  const int proposals = student.config().proposals_train;
  const auto step = static_cast<std::uint64_t>(state.step);
  LossReport r;
  r.step = state.step;
  r.burn_in = state.step < state.burn_in_steps;

  std::vector<ag::Var> sup_terms;
  for (std::size_t b = 0; b < labeled.size(); ++b) {
    const Views v = make_views(labeled[b], cfg.augmentation,
                               derive_seed(cfg.seed, {step, kTagLabeledWeak, b}),
                               derive_seed(cfg.seed, {step, kTagLabeledStrong, b}));
    const StudentView view = forward_student(student, v.strong.image, proposals, false);
    const LossPair l = supervised_loss(student, view, v.strong.annotations, cfg.loss,
                                       derive_seed(cfg.seed, {step, kTagLabeledLoss, b}));
    r.L_m_s_cls += l.cls_value() / labeled.size();
    r.L_m_s_reg += l.reg_value() / labeled.size();
    sup_terms.push_back(l.total());
  }

  std::vector<ag::Var> mu_terms, pu_terms, sd_terms;
  const bool use_pim = cfg.mode != TrainMode::kBaseline;
  const bool use_sd = cfg.mode == TrainMode::kLsm;
  if (!r.burn_in) {
    for (std::size_t b = 0; b < unlabeled.size(); ++b) {
      const Views v = make_views(unlabeled[b], cfg.augmentation,
                                 derive_seed(cfg.seed, {step, kTagUnlabeledWeak, b}),
                                 derive_seed(cfg.seed, {step, kTagUnlabeledStrong, b}));
      const PseudoLabelSet teacher_labels =
          generate_pseudo_labels(state.teacher, v.weak.image, state.thresholds, v.weak.id);
      const PseudoLabelSet labels = transfer_to_student_view(
          teacher_labels, v.strong_recipe, v.weak.width(), v.weak.height());
      const StudentView view = forward_student(student, v.strong.image, proposals, use_pim);
      const std::uint64_t seed = derive_seed(cfg.seed, {step, kTagUnlabeledLoss, b});
      const double inv = 1.0 / static_cast<double>(unlabeled.size());

      const LossPair mu =
          main_unsupervised_loss(student, view, labels.select(labels.main_set), cfg.loss,
                                 derive_seed(seed, {1}));
      r.L_m_u_cls += mu.cls_value() * inv;
      r.L_m_u_reg += mu.reg_value() * inv;
      mu_terms.push_back(mu.total());
      r.n_main += labels.main_set.size();
      if (use_pim) {
        const LossPair pu = pim_loss(student, view, labels.select(labels.pim_set), cfg.loss,
                                     derive_seed(seed, {2}));
        r.L_p_u_cls += pu.cls_value() * inv;
        r.L_p_u_reg += pu.reg_value() * inv;
        pu_terms.push_back(pu.total());
        r.n_pim += labels.pim_set.size();
      }
      if (use_sd) {
        const ag::Var sd =
            distillation_loss(student, view, labels.select(labels.sd_interval), cfg.loss);
        r.L_distill += ag::scalar(sd) * inv;
        sd_terms.push_back(sd);
        r.n_sd += labels.sd_interval.size();
      }
    }
  }
  r.L_m_s = r.L_m_s_cls + r.L_m_s_reg;
  r.L_m_u = r.L_m_u_cls + r.L_m_u_reg;
  r.L_p_u = r.L_p_u_cls + r.L_p_u_reg;
  require_finite(r.L_m_s, "L_m_s", r.step);
  require_finite(r.L_m_u, "L_m_u", r.step);
  require_finite(r.L_p_u, "L_p_u", r.step);
  require_finite(r.L_distill, "L_distill", r.step);
  r.total = r.L_m_s + state.lambda_u * (r.L_m_u + state.lambda_p * r.L_p_u + r.L_distill);
  require_finite(r.total, "total", r.step);

  if (loss_graph) {
    std::vector<ag::Var> terms;
    std::vector<double> weights;
    auto push = [&](const std::vector<ag::Var>& group, double w) {
      for (const auto& t : group) {
        terms.push_back(t);
        weights.push_back(w);
      }
    };
    push(sup_terms, 1.0 / static_cast<double>(std::max<std::size_t>(1, labeled.size())));
    const double inv_u = 1.0 / static_cast<double>(std::max<std::size_t>(1, unlabeled.size()));
    push(mu_terms, state.lambda_u * inv_u);
    push(pu_terms, state.lambda_u * state.lambda_p * inv_u);
    push(sd_terms, state.lambda_u * inv_u);
    *loss_graph = terms.empty() ? ag::Var::constant(Tensor({1}, 0.0))
                                : ag::weighted_sum(terms, weights);
  }
  return r;
}

void warm_start_auxiliary(TrainState& state) {
  auto& params = state.student.params();
  for (const char* field : {"weight", "bias"}) {
    const std::string src = std::string("cls_main.") + field;
    const std::string dst = std::string("cls_aux.") + field;
    params.get(dst).mutable_value() = params.get(src).value();
    state.teacher.params().get(dst).mutable_value() = params.get(src).value();
    auto& entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].name == dst) state.momentum[i].fill(0.0);
    }
  }
}

LossReport train_step(TrainState& state, const TrainerConfig& cfg,
                      std::span<const DetectionSample> labeled,
                      std::span<const DetectionSample> unlabeled) {
  if (state.step == state.burn_in_steps) warm_start_auxiliary(state);
  auto& params = state.student.params();
  params.zero_grad();
  ag::Var total;
  const LossReport report = compute_step_losses(state, cfg, labeled, unlabeled, &total);
  if (total.requires_grad()) ag::backward(total);

  auto& entries = params.entries();
  double norm2 = 0;
  for (const auto& e : entries) {
    for (double g : e.var.grad().values()) norm2 += g * g;
  }
  const double norm = std::sqrt(norm2);
  const double clip = (cfg.grad_clip > 0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
  const double lr = learning_rate_at(cfg, state.step);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& w = entries[i].var.mutable_value();
    const Tensor& g = entries[i].var.grad();
    Tensor& m = state.momentum[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = (g.empty() ? 0.0 : clip * g[k]) + cfg.weight_decay * w[k];
      m[k] = cfg.momentum * m[k] + grad;
      w[k] -= lr * m[k];
    }
  }
  params.zero_grad();

  ++state.step;
  if (state.step <= state.burn_in_steps) {
    state.teacher.params().copy_values_from(params);
  } else {
    ema_update(state);
  }
  return report;
}

EvalResult evaluate_detector(const Detector& model, const std::vector<DetectionSample>& samples,
                             double score_floor) {
  std::vector<ImageDetections> images;
  images.reserve(samples.size());
  for (const auto& s : samples) {
    images.push_back({s.id, model.predict(s.image, score_floor), s.annotations});
  }
  return evaluate(images);
}

// --- loop ------------------------------------------------------------------

namespace {

std::string checkpoint_name(std::int64_t step) {
  std::ostringstream os;
  os << "step_" << step << ".lsmckpt";
  return os.str();
}

// Keeps records with step < `resume_step` and returns them.
std::string truncate_log(const std::filesystem::path& path, std::int64_t resume_step) {
  std::ifstream in(path);
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("step").get<std::int64_t>() < resume_step) {
      kept += line + "\n";
    }
  }
  return kept;
}

}  // namespace

RunSummary run_training(const TrainingData& data, const DetectorConfig& detector,
                        const TrainerConfig& cfg, const RunOptions& options) {
  cfg.validate();
  detector.validate();
  if (data.labeled.empty()) throw std::invalid_argument("training needs labeled samples");

  std::filesystem::create_directories(options.output_dir / "checkpoints");
  RunSummary summary;
  summary.metric_log = options.output_dir / kMetricLogName;

  std::optional<TrainState> state;
  std::string log_prefix;
  if (options.resume_from) {
    state.emplace(std::move(load_checkpoint(*options.resume_from).state));
    if (state->step > cfg.steps) {
      throw std::invalid_argument("checkpoint step " + std::to_string(state->step) +
                                  " exceeds trainer.steps");
    }
    log_prefix = truncate_log(summary.metric_log, state->step);
  } else {
    state.emplace(TrainState::initialize(detector, cfg));
  }
  std::ofstream log(summary.metric_log, std::ios::trunc);
  log << log_prefix;

  const nlohmann::json extra = {{"config", options.resolved_config}};
  const bool use_unlabeled = !data.unlabeled.empty();
  while (state->step < cfg.steps) {
    const auto step = static_cast<std::uint64_t>(state->step);
    std::vector<DetectionSample> lb, ub;
    for (int b = 0; b < cfg.labeled_batch; ++b) {
      Rng rng(derive_seed(cfg.seed, {step, kTagPickLabeled, static_cast<std::uint64_t>(b)}));
      lb.push_back(data.labeled[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(data.labeled.size()) - 1))]);
    }
    for (int b = 0; use_unlabeled && b < cfg.unlabeled_batch; ++b) {
      Rng rng(derive_seed(cfg.seed, {step, kTagPickUnlabeled, static_cast<std::uint64_t>(b)}));
      ub.push_back(data.unlabeled[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(data.unlabeled.size()) - 1))]);
    }
    const LossReport report = train_step(*state, cfg, lb, ub);
    nlohmann::json rec = report.to_json();

    const bool last = state->step == cfg.steps;
    std::optional<EvalResult> eval;
    if (!data.evaluation.empty() &&
        (last || (cfg.eval_every > 0 && state->step % cfg.eval_every == 0))) {
      eval = evaluate_detector(state->teacher, data.evaluation, cfg.eval_score_floor);
      rec["teacher_mAP"] = eval->ap50_95;
      rec["teacher_ap50"] = eval->ap50;
      rec["recall"] = eval->avg_recall;
      if (last) summary.final_eval = eval;
    }
    log << rec.dump() << '\n';
    log.flush();
    if (options.on_step) options.on_step(report, eval);

    if (last || (cfg.checkpoint_every > 0 && state->step % cfg.checkpoint_every == 0)) {
      const auto path = options.output_dir / "checkpoints" / checkpoint_name(state->step);
      save_checkpoint(path, *state, extra);
      if (last) summary.final_checkpoint = path;
    }
  }
  if (summary.final_checkpoint.empty()) {
    summary.final_checkpoint = options.output_dir / "checkpoints" / checkpoint_name(state->step);
    save_checkpoint(summary.final_checkpoint, *state, extra);
  }
  summary.steps = state->step;
  return summary;
}

}  // namespace lsm
