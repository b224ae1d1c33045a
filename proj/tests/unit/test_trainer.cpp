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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "lsm/checkpoint.hpp"
#include "lsm/losses.hpp"
#include "lsm/random.hpp"
#include "lsm/trainer.hpp"

namespace fs = std::filesystem;
using namespace lsm;

namespace {

const std::vector<DetectionSample>& samples() {
  static const auto s = generate_shapes_dataset(4, 128, 17);
  return s;
}

double grad_sq(const Detector& det, const std::string& name) {
  const auto& g = det.params().get(name).grad();
  double s = 0;
  for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * g[i];
  return s;
}

// Proposals that do not move with the parameters.
ProposalList fixed_proposals(const std::vector<Box>& truths, std::uint64_t seed) {
  Rng rng(seed);
  auto list = std::make_shared<std::vector<Proposal>>();
  for (const auto& t : truths) {
    for (int k = 0; k < 3; ++k) {
      const double j = 0.2 * std::min(t.w(), t.h());
      list->push_back({Box(std::max(0.0, t.x() + rng.uniform(-j, j)),
                           std::max(0.0, t.y() + rng.uniform(-j, j)), t.w(), t.h(), 0, 0.5),
                       0.5, "P2"});
    }
  }
  for (int k = 0; k < 8; ++k) {
    list->push_back({Box(rng.uniform(0, 90), rng.uniform(0, 90), rng.uniform(8, 38),
                         rng.uniform(8, 38), 0, 0.1),
                     0.1, "P2"});
  }
  return list;
}

void check_parameter_gradients(Detector& det, const std::function<ag::Var()>& loss,
                               int checks = 40) {
  det.params().zero_grad();
  ag::backward(loss());
  auto& entries = det.params().entries();
  Rng rng(5);
  const double h = 1e-5;
  int nonzero = 0;
  for (int c = 0; c < checks; ++c) {
    auto& e = entries[rng.next() % entries.size()];
    Tensor& v = e.var.mutable_value();
    const std::size_t i = rng.next() % v.size();
    const double analytic = e.var.grad().empty() ? 0.0 : e.var.grad()[i];
    const double orig = v[i];
    v[i] = orig + h;
    const double up = ag::scalar(loss());
    v[i] = orig - h;
    const double down = ag::scalar(loss());
    v[i] = orig;
    const double numeric = (up - down) / (2 * h);
    nonzero += std::abs(numeric) > 1e-8;
    EXPECT_NEAR(analytic, numeric, 1e-4 * std::max(1.0, std::abs(numeric)) + 1e-7)
        << e.name << "[" << i << "]";
  }
  EXPECT_GT(nonzero, 0);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainerConfig tiny_config() {
  TrainerConfig cfg;
  cfg.steps = 6;
  cfg.burn_in_steps = 2;
  cfg.warmup_steps = 2;
  cfg.thresholds = {0.3, 0.2};
  cfg.seed = 4;
  cfg.eval_every = 3;
  cfg.checkpoint_every = 3;
  return cfg;
}

}  // namespace

TEST(Losses, UniformLogitsGiveLogClassCount) {
  Detector det = Detector::create({}, 1, false);
  for (const char* n : {"cls_main.weight", "cls_main.bias"}) {
    det.params().get(n).mutable_value().fill(0.0);
  }
  const auto& s = samples()[0];
  const StudentView view = forward_student(det, s.image, 32, false);
  const RoiTargets roi = sample_roi_targets(view.proposals(), s.annotations, 3, {}, 7);
  ASSERT_FALSE(roi.boxes.empty());
  const LossPair l = roi_head_loss(det, view.main, 0, Classifier::kMain, roi, {}, false);
  EXPECT_NEAR(l.cls_value(), std::log(4.0), 1e-12);
  EXPECT_EQ(l.reg_value(), 0.0);
}

TEST(Losses, RoiSamplingIncludesTargetsAndRespectsBatch) {
  const auto& s = samples()[1];
  const Detector det = Detector::create({}, 2, false);
  const StudentView view = forward_student(det, s.image, 64, false);
  LossOptions opts;
  opts.roi_batch = 16;
  const RoiTargets a = sample_roi_targets(view.proposals(), s.annotations, 3, opts, 3);
  const RoiTargets b = sample_roi_targets(view.proposals(), s.annotations, 3, opts, 3);
  EXPECT_LE(a.boxes.size(), 16u);
  EXPECT_EQ(a.labels, b.labels);
  int positives = 0;
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    if (a.labels[i] < 3) {
      ++positives;
      ASSERT_TRUE(a.matched[i].has_value());
      EXPECT_GE(iou(a.boxes[i], *a.matched[i]), 0.5);
    } else {
      EXPECT_FALSE(a.matched[i].has_value());
    }
  }
  EXPECT_GE(positives, 1);
  EXPECT_LE(positives, 4);
}

TEST(Losses, SupervisedGradientsMatchFiniteDifferences) {
  Detector det = Detector::create({}, 3, true);
  const auto& s = samples()[0];
  const ProposalList props = fixed_proposals(s.annotations, 1);
  check_parameter_gradients(det, [&] {
    const StudentView view = forward_student(det, s.image, 0, false, props);
    return supervised_loss(det, view, s.annotations, {}, 11).total();
  });
}

TEST(Losses, UnsupervisedMainGradientsMatchFiniteDifferences) {
  Detector det = Detector::create({}, 4, true);
  const auto& s = samples()[2];
  const ProposalList props = fixed_proposals(s.annotations, 2);
  check_parameter_gradients(det, [&] {
    const StudentView view = forward_student(det, s.image, 0, false, props);
    return main_unsupervised_loss(det, view, s.annotations, {}, 12).total();
  });
}

TEST(Losses, PimGradientsMatchFiniteDifferences) {
  Detector det = Detector::create({}, 5, true);
  const auto& s = samples()[1];
  const ProposalList props = fixed_proposals(s.annotations, 3);
  check_parameter_gradients(det, [&] {
    const StudentView view = forward_student(det, s.image, 0, true, props);
    return pim_loss(det, view, s.annotations, {}, 13).total();
  });
}

TEST(Losses, DistillationGradientsMatchFiniteDifferences) {
  Detector det = Detector::create({}, 6, true);
  const auto& s = samples()[3];
  check_parameter_gradients(det, [&] {
    const StudentView view = forward_student(det, s.image, 0, true);
    return distillation_loss(det, view, s.annotations, {});
  });
}

TEST(Losses, PimBranchWiring) {
  Detector det = Detector::create({}, 7, true);
  const auto& s = samples()[0];
  const StudentView view = forward_student(det, s.image, 32, true);
  det.params().zero_grad();
  const LossPair l = pim_loss(det, view, s.annotations, {}, 1);
  ag::backward(l.total());
  EXPECT_EQ(grad_sq(det, "cls_main.weight"), 0.0);
  EXPECT_EQ(grad_sq(det, "rpn.conv.weight"), 0.0);
  EXPECT_GT(grad_sq(det, "cls_aux.weight"), 0.0);
  EXPECT_GT(grad_sq(det, "reg.weight"), 0.0);
  EXPECT_GT(grad_sq(det, "box_head.fc1.weight"), 0.0);
  EXPECT_EQ(l.proposals, view.rpn.proposals);

  const StudentView plain = forward_student(det, s.image, 32, false);
  EXPECT_THROW(pim_loss(det, plain, s.annotations, {}, 1), std::invalid_argument);
  EXPECT_EQ(pim_loss(det, view, {}, {}, 1).value(), 0.0);
}

TEST(Losses, MainBranchWiring) {
  Detector det = Detector::create({}, 8, true);
  const auto& s = samples()[0];
  const StudentView view = forward_student(det, s.image, 32, false);
  det.params().zero_grad();
  ag::backward(main_unsupervised_loss(det, view, s.annotations, {}, 1).total());
  EXPECT_EQ(grad_sq(det, "cls_aux.weight"), 0.0);
  EXPECT_GT(grad_sq(det, "cls_main.weight"), 0.0);
  EXPECT_GT(grad_sq(det, "rpn.conv.weight"), 0.0);
  EXPECT_EQ(main_unsupervised_loss(det, view, {}, {}, 1).value(), 0.0);
}

TEST(Losses, DistillationReachesBothClassifiersOnly) {
  Detector det = Detector::create({}, 9, true);
  const auto& s = samples()[1];
  const StudentView view = forward_student(det, s.image, 32, true);
  det.params().zero_grad();
  const ag::Var sd = distillation_loss(det, view, s.annotations, {});
  EXPECT_GT(ag::scalar(sd), 0.0);
  ag::backward(sd);
  EXPECT_GT(grad_sq(det, "cls_main.weight"), 0.0);
  EXPECT_GT(grad_sq(det, "cls_aux.weight"), 0.0);
  EXPECT_EQ(grad_sq(det, "reg.weight"), 0.0);
  EXPECT_EQ(grad_sq(det, "rpn.conv.weight"), 0.0);

  // Identical classifiers on identical crops would give zero; the reverse
  // direction is a different, also non-negative, quantity.
  LossOptions rev;
  rev.kl_reverse = true;
  EXPECT_GT(ag::scalar(distillation_loss(det, view, s.annotations, rev)), 0.0);
  EXPECT_EQ(ag::scalar(distillation_loss(det, view, {}, {})), 0.0);
}

TEST(Losses, DistillationNormalization) {
  const Detector det = Detector::create({}, 9, false);
  const auto& s = samples()[1];
  const StudentView view = forward_student(det, s.image, 32, true);
  LossOptions per_box;
  per_box.distill_per_box = true;
  LossOptions batch;
  batch.roi_batch = 16;
  const double mean = ag::scalar(distillation_loss(det, view, s.annotations, per_box));
  const double summed = ag::scalar(distillation_loss(det, view, s.annotations, batch));
  EXPECT_NEAR(summed, mean * static_cast<double>(s.annotations.size()) / 16.0, 1e-12);
}

TEST(Trainer, ConfigValidationListsEveryProblem) {
  TrainerConfig cfg;
  EXPECT_TRUE(cfg.validation_errors().empty());
  cfg.thresholds = {0.5, 0.7};
  cfg.lambda_e = 1.5;
  cfg.steps = 0;
  const auto errs = cfg.validation_errors();
  EXPECT_GE(errs.size(), 3u);
  bool alpha = false;
  for (const auto& e : errs) alpha |= e.find("alpha must be < t") != std::string::npos;
  EXPECT_TRUE(alpha);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_train_mode("lsm"), TrainMode::kLsm);
  EXPECT_EQ(parse_train_mode("baseline"), TrainMode::kBaseline);
  EXPECT_EQ(to_string(TrainMode::kPimOnly), "pim_only");
  EXPECT_THROW(parse_train_mode("nope"), std::invalid_argument);
}

TEST(Trainer, EmaFollowsUpdateLaw) {
  TrainState st = TrainState::initialize({}, TrainerConfig{});
  Rng rng(3);
  for (auto& e : st.student.params().entries()) {
    Tensor& v = e.var.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += rng.uniform(-1, 1);
  }
  const ParameterSet before = st.teacher.params().clone(false);
  ema_update(st.teacher.params(), st.student.params(), 0.9);
  const auto& t = st.teacher.params().entries();
  const auto& s = st.student.params().entries();
  for (std::size_t k = 0; k < t.size(); ++k) {
    for (std::size_t i = 0; i < t[k].var.value().size(); i += 7) {
      EXPECT_NEAR(t[k].var.value()[i],
                  0.9 * before.entries()[k].var.value()[i] + 0.1 * s[k].var.value()[i], 1e-12);
    }
  }
}

TEST(Trainer, BurnInCopiesThenEmaAfterwards) {
  TrainerConfig cfg = tiny_config();
  cfg.lambda_e = 0.5;
  TrainState st = TrainState::initialize({}, cfg);
  const std::vector<DetectionSample> lb{samples()[0]}, ub{samples()[1]};
  for (int i = 0; i < 2; ++i) {
    const auto r = train_step(st, cfg, lb, ub);
    EXPECT_TRUE(r.burn_in);
    EXPECT_EQ(r.L_m_u, 0.0);
    const auto& t = st.teacher.params().entries();
    const auto& s = st.student.params().entries();
    for (std::size_t k = 0; k < t.size(); ++k) {
      EXPECT_EQ(t[k].var.value()[0], s[k].var.value()[0]) << t[k].name;
    }
  }
  const ParameterSet teacher_before = st.teacher.params().clone(false);
  const auto r = train_step(st, cfg, lb, ub);
  EXPECT_FALSE(r.burn_in);
  EXPECT_EQ(st.step, 3);
  const auto& t = st.teacher.params().entries();
  const auto& s = st.student.params().entries();
  bool moved = false;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k].name.starts_with("cls_aux")) continue;  // warm-started at this step
    const double expect = 0.5 * teacher_before.entries()[k].var.value()[0] + 0.5 * s[k].var.value()[0];
    EXPECT_NEAR(t[k].var.value()[0], expect, 1e-12);
    moved |= s[k].var.value()[0] != teacher_before.entries()[k].var.value()[0];
  }
  EXPECT_TRUE(moved);
}

TEST(Trainer, AuxiliaryClassifierWarmStartsAfterBurnIn) {
  TrainerConfig cfg = tiny_config();
  TrainState st = TrainState::initialize({}, cfg);
  const std::vector<DetectionSample> lb{samples()[0]}, ub{samples()[1]};
  const Tensor aux_init = st.student.params().get("cls_aux.weight").value();
  for (int i = 0; i < st.burn_in_steps; ++i) train_step(st, cfg, lb, ub);
  // Nothing trains the auxiliary classifier during burn-in except weight decay.
  const Tensor& aux = st.student.params().get("cls_aux.weight").value();
  const Tensor& main = st.student.params().get("cls_main.weight").value();
  double drift = 0, gap = 0;
  for (std::size_t i = 0; i < aux.size(); ++i) {
    drift = std::max(drift, std::abs(aux[i] - aux_init[i]));
    gap = std::max(gap, std::abs(aux[i] - main[i]));
  }
  EXPECT_LT(drift, 1e-4);
  EXPECT_GT(gap, 1e-3);

  warm_start_auxiliary(st);
  for (const char* field : {"weight", "bias"}) {
    const std::string m = std::string("cls_main.") + field, a = std::string("cls_aux.") + field;
    const Tensor& sm = st.student.params().get(m).value();
    const Tensor& sa = st.student.params().get(a).value();
    const Tensor& ta = st.teacher.params().get(a).value();
    for (std::size_t i = 0; i < sm.size(); ++i) {
      EXPECT_EQ(sa[i], sm[i]);
      EXPECT_EQ(ta[i], sm[i]);
    }
  }
}

TEST(Trainer, LossCompositionAndModes) {
  TrainerConfig cfg = tiny_config();
  cfg.burn_in_steps = 0;
  cfg.thresholds = {0.5, 0.3};
  TrainState st = TrainState::initialize({}, cfg);
  // Teacher class 0 probability near 0.475: inside (alpha, t) only.
  st.teacher.params().get("cls_main.bias").mutable_value() = Tensor({4}, {1.0, 0.0, 0.0, 0.0});
  st.teacher.params().get("cls_main.weight").mutable_value().fill(0.0);
  const std::vector<DetectionSample> lb{samples()[0]}, ub{samples()[1]};

  ag::Var graph;
  const auto r = compute_step_losses(st, cfg, lb, ub, &graph);
  EXPECT_EQ(r.n_main, 0u);
  EXPECT_GT(r.n_pim, 0u);
  EXPECT_EQ(r.n_sd, r.n_pim);
  EXPECT_EQ(r.L_m_u, 0.0);
  EXPECT_GT(r.L_p_u, 0.0);
  EXPECT_GT(r.L_distill, 0.0);
  EXPECT_NEAR(r.total, r.L_m_s + st.lambda_u * (r.L_m_u + st.lambda_p * r.L_p_u + r.L_distill),
              1e-12);
  EXPECT_NEAR(ag::scalar(graph), r.total, 1e-9);

  TrainerConfig pim_only = cfg;
  pim_only.mode = TrainMode::kPimOnly;
  const auto p = compute_step_losses(st, pim_only, lb, ub);
  EXPECT_NEAR(p.L_p_u, r.L_p_u, 1e-12);
  EXPECT_EQ(p.L_distill, 0.0);

  TrainerConfig base = cfg;
  base.mode = TrainMode::kBaseline;
  const auto b = compute_step_losses(st, base, lb, ub);
  EXPECT_EQ(b.L_p_u, 0.0);
  EXPECT_EQ(b.L_distill, 0.0);
  EXPECT_EQ(b.n_pim, 0u);
  EXPECT_NEAR(b.L_m_s, r.L_m_s, 1e-12);

  st.lambda_u = 0.0;
  const auto z = compute_step_losses(st, cfg, lb, ub);
  EXPECT_NEAR(z.total, z.L_m_s, 1e-12);
}

TEST(Trainer, DeterministicForSeed) {
  const TrainerConfig cfg = tiny_config();
  TrainState a = TrainState::initialize({}, cfg);
  TrainState b = TrainState::initialize({}, cfg);
  const std::vector<DetectionSample> lb{samples()[0]}, ub{samples()[2]};
  for (int i = 0; i < 3; ++i) {
    const auto ra = train_step(a, cfg, lb, ub);
    const auto rb = train_step(b, cfg, lb, ub);
    EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
  }
  for (std::size_t k = 0; k < a.student.params().size(); ++k) {
    const Tensor& x = a.student.params().entries()[k].var.value();
    const Tensor& y = b.student.params().entries()[k].var.value();
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(x[i], y[i]);
  }
}

TEST(Checkpoint, RoundTripAndMagicMismatch) {
  const TrainerConfig cfg = tiny_config();
  TrainState st = TrainState::initialize({}, cfg);
  const std::vector<DetectionSample> lb{samples()[0]};
  train_step(st, cfg, lb, {});
  const fs::path dir = fs::temp_directory_path() / "lsm_test_ckpt";
  fs::create_directories(dir);
  save_checkpoint(dir / "a.lsmckpt", st, {{"note", "x"}});
  const Checkpoint back = load_checkpoint(dir / "a.lsmckpt");
  EXPECT_EQ(back.state.step, st.step);
  EXPECT_EQ(back.state.thresholds.t, st.thresholds.t);
  EXPECT_EQ(back.extra.at("note"), "x");
  for (std::size_t k = 0; k < st.student.params().size(); ++k) {
    const Tensor& x = st.student.params().entries()[k].var.value();
    const Tensor& y = back.state.student.params().entries()[k].var.value();
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(x[i], y[i]);
    const Tensor& m = st.momentum[k];
    for (std::size_t i = 0; i < m.size(); ++i) ASSERT_EQ(m[i], back.state.momentum[k][i]);
  }
  EXPECT_TRUE(back.state.student.params().entries()[0].var.requires_grad());
  EXPECT_FALSE(back.state.teacher.params().entries()[0].var.requires_grad());

  {
    std::ofstream bad(dir / "bad.lsmckpt", std::ios::binary);
    bad << "LSMCKPT0 garbage";
  }
  try {
    load_checkpoint(dir / "bad.lsmckpt");
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version mismatch"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint(dir / "missing.lsmckpt"), CheckpointError);
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  const auto split = split_labeled_unlabeled(samples(), {0.5, 1});
  TrainingData data{split.labeled, split.unlabeled, {samples()[0], samples()[3]}};
  TrainerConfig cfg = tiny_config();
  const fs::path root = fs::temp_directory_path() / "lsm_test_resume";
  fs::remove_all(root);

  RunOptions full;
  full.output_dir = root / "full";
  const RunSummary s = run_training(data, {}, cfg, full);
  EXPECT_EQ(s.steps, 6);
  ASSERT_TRUE(s.final_eval.has_value());
  EXPECT_TRUE(fs::exists(root / "full" / "checkpoints" / "step_3.lsmckpt"));

  TrainerConfig shorter = cfg;
  shorter.steps = 3;
  RunOptions part;
  part.output_dir = root / "part";
  run_training(data, {}, shorter, part);
  part.resume_from = root / "part" / "checkpoints" / "step_3.lsmckpt";
  run_training(data, {}, cfg, part);

  const std::string a = read_file(root / "full" / kMetricLogName);
  const std::string b = read_file(root / "part" / kMetricLogName);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}
