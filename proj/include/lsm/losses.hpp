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
#include <optional>
#include <vector>

#include "lsm/autograd.hpp"
#include "lsm/detector.hpp"
#include "lsm/geometry.hpp"

namespace lsm {

/// Classification and regression parts of a detection loss ([1] scalars).
struct LossPair {
  ag::Var cls;
  ag::Var reg;
  // Proposal records the loss read, when it consumed any.
  ProposalList proposals;

  double cls_value() const { return ag::scalar(cls); }
  double reg_value() const { return ag::scalar(reg); }
  double value() const { return cls_value() + reg_value(); }
  ag::Var total() const;

  static LossPair zero();
};

struct LossOptions {
  int roi_batch = 64;
  double roi_positive_fraction = 0.25;
  double roi_foreground_iou = 0.5;
  double roi_smooth_l1_beta = 1.0;
  int rpn_batch = 128;
  double rpn_positive_fraction = 0.5;
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  double rpn_smooth_l1_beta = 1.0 / 9.0;
  bool unsupervised_regression = true;
  // false: KL(p_aux || p_main); true: KL(p_main || p_aux).
  bool kl_reverse = false;
  // false: KL summed over boxes and divided by roi_batch, like the ROI
  // classification losses; true: plain mean over the boxes.
  bool distill_per_box = false;
};

/// Student forward pass on one view: main pyramid, RPN output with its
/// proposal list, and optionally the 0.5x downsampled pyramid.
struct StudentView {
  FeaturePyramid main;
  ProposalResult rpn;
  std::optional<FeaturePyramid> downsampled;

  const std::vector<Proposal>& proposals() const { return *rpn.proposals; }
};

/// `fixed_proposals` replaces the generated proposal list (the RPN output is
/// still computed); used where proposals must not depend on parameters.
StudentView forward_student(const Detector& student, const Tensor& image, int max_proposals,
                            bool with_downsampled, ProposalList fixed_proposals = nullptr);

/// Sampled ROI-head training targets.
struct RoiTargets {
  std::vector<Rect> boxes;        // sampled regions (proposals, then appended targets)
  std::vector<int> labels;        // category index or num_classes for background
  std::vector<std::optional<Rect>> matched;  // target box of positives
};

RoiTargets sample_roi_targets(const std::vector<Proposal>& proposals,
                              const std::vector<Box>& targets, int num_classes,
                              const LossOptions& options, std::uint64_t seed);

/// RPN objectness (BCE) and box (smooth L1) loss against `targets`.
LossPair rpn_loss(const StudentView& view,
                  const std::vector<Box>& targets, const LossOptions& options,
                  std::uint64_t seed);

/// ROI-head loss on `pyramid` with level `shift`, scored by `classifier`.
LossPair roi_head_loss(const Detector& detector, const FeaturePyramid& pyramid, int shift,
                       Classifier classifier, const RoiTargets& targets,
                       const LossOptions& options, bool with_regression);

/// Labeled loss: ROI classification and regression through F_main and R,
/// with the RPN terms folded in.
LossPair supervised_loss(const Detector& student, const StudentView& view,
                         const std::vector<Box>& truths, const LossOptions& options,
                         std::uint64_t seed);

/// Same form as the labeled loss with pseudo-boxes as targets; an empty
/// target set contributes nothing.
LossPair main_unsupervised_loss(const Detector& student, const StudentView& view,
                                const std::vector<Box>& pseudo_boxes,
                                const LossOptions& options, std::uint64_t seed);

/// Auxiliary-branch loss: main-view proposals read from the downsampled
/// pyramid (shift 1), classified by F_aux and regressed by R. No RPN term.
LossPair pim_loss(const Detector& student, const StudentView& view,
                  const std::vector<Box>& pseudo_boxes, const LossOptions& options,
                  std::uint64_t seed);

/// KL divergence between the auxiliary and main class distributions on the
/// given boxes, normalized per LossOptions::distill_per_box. Both classifiers
/// receive gradients.
ag::Var distillation_loss(const Detector& student, const StudentView& view,
                          const std::vector<Box>& boxes, const LossOptions& options);

}  // namespace lsm
