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

#include "lsm/losses.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "lsm/data.hpp"
#include "lsm/random.hpp"

namespace lsm {
namespace {

ag::Var zero_scalar() { return ag::Var::constant(Tensor({1}, 0.0)); }

ag::Var sum_terms(const std::vector<ag::Var>& terms) {
  if (terms.empty()) return zero_scalar();
  if (terms.size() == 1) return terms.front();
  const std::vector<double> ones(terms.size(), 1.0);
  return ag::weighted_sum(terms, ones);
}

// Picks up to `quota` entries of `pool` at random, returning them ascending.
std::vector<std::size_t> sample_subset(std::vector<std::size_t> pool, std::size_t quota,
                                       Rng& rng) {
  if (pool.size() > quota) {
    rng.shuffle(pool.begin(), pool.end());
    pool.resize(quota);
    std::sort(pool.begin(), pool.end());
  }
  return pool;
}

}  // namespace

ag::Var LossPair::total() const {
  const ag::Var terms[] = {cls, reg};
  const double ones[] = {1.0, 1.0};
  return ag::weighted_sum(terms, ones);
}

LossPair LossPair::zero() { return {zero_scalar(), zero_scalar(), nullptr}; }

StudentView forward_student(const Detector& student, const Tensor& image, int max_proposals,
                            bool with_downsampled, ProposalList fixed_proposals) {
  StudentView view;
  view.main = student.extract_pyramid(image);
  view.rpn = student.propose(view.main, fixed_proposals ? 0 : max_proposals);
  if (fixed_proposals) view.rpn.proposals = std::move(fixed_proposals);
  if (with_downsampled) {
    view.downsampled = student.extract_pyramid(downsample_image(image, 0.5), true,
                                               image.dim(2), image.dim(1));
  }
  return view;
}

RoiTargets sample_roi_targets(const std::vector<Proposal>& proposals,
                              const std::vector<Box>& targets, int num_classes,
                              const LossOptions& options, std::uint64_t seed) {
  std::vector<Rect> cands;
  cands.reserve(proposals.size() + targets.size());
  for (const auto& p : proposals) cands.push_back(Rect::of(p.box));
  for (const auto& t : targets) cands.push_back(Rect::of(t));

  std::vector<int> label(cands.size(), num_classes);
  std::vector<int> match(cands.size(), -1);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0;
    for (std::size_t g = 0; g < targets.size(); ++g) {
      const double v = iou(cands[i], Rect::of(targets[g]));
      if (v > best) {
        best = v;
        match[i] = static_cast<int>(g);
      }
    }
    if (match[i] >= 0 && best >= options.roi_foreground_iou) {
      label[i] = targets[static_cast<std::size_t>(match[i])].category();
      pos.push_back(i);
    } else {
      neg.push_back(i);
    }
  }
  Rng rng(seed);
  const auto batch = static_cast<std::size_t>(options.roi_batch);
  const auto pos_quota =
      static_cast<std::size_t>(static_cast<double>(batch) * options.roi_positive_fraction);
  pos = sample_subset(std::move(pos), pos_quota, rng);
  neg = sample_subset(std::move(neg), batch - pos.size(), rng);

  std::vector<std::size_t> keep;
  keep.reserve(pos.size() + neg.size());
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(keep));
  RoiTargets out;
  for (std::size_t i : keep) {
    out.boxes.push_back(cands[i]);
    out.labels.push_back(label[i]);
    if (label[i] < num_classes) {
      out.matched.push_back(Rect::of(targets[static_cast<std::size_t>(match[i])]));
    } else {
      out.matched.push_back(std::nullopt);
    }
  }
  return out;
}

LossPair rpn_loss(const StudentView& view,
                  const std::vector<Box>& targets, const LossOptions& options,
                  std::uint64_t seed) {
  const auto& anchors = view.rpn.rpn.anchors;
  const std::size_t n = anchors.size();
  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best(targets.size(), 0.0);
  std::vector<Rect> gts;
  for (const auto& t : targets) gts.push_back(Rect::of(t));
  std::vector<double> ious(n * gts.size());
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a].box, gts[g]);
      ious[a * gts.size() + g] = v;
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  }
  // 1 positive, 0 negative, -1 ignored.
  std::vector<int> state(n, -1);
  for (std::size_t a = 0; a < n; ++a) {
    if (best_iou[a] < options.rpn_negative_iou) state[a] = 0;
    if (best_iou[a] >= options.rpn_positive_iou) state[a] = 1;
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0) continue;
    for (std::size_t a = 0; a < n; ++a) {
      if (ious[a * gts.size() + g] == gt_best[g]) {
        state[a] = 1;
        best_gt[a] = static_cast<int>(g);
      }
    }
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < n; ++a) {
    if (state[a] == 1) pos.push_back(a);
    if (state[a] == 0) neg.push_back(a);
  }
  Rng rng(seed);
  const auto batch = static_cast<std::size_t>(options.rpn_batch);
  pos = sample_subset(std::move(pos), static_cast<std::size_t>(
                                          static_cast<double>(batch) * options.rpn_positive_fraction),
                      rng);
  neg = sample_subset(std::move(neg), batch - pos.size(), rng);
  const double normalizer = static_cast<double>(std::max<std::size_t>(1, pos.size() + neg.size()));

  const std::size_t levels = view.rpn.rpn.logits.size();
  std::vector<std::vector<ag::SparseTarget>> obj(levels), box(levels);
  for (std::size_t a : neg) obj[anchors[a].level_slot].push_back({anchors[a].objectness_index, 0.0});
  for (std::size_t a : pos) {
    const auto& ref = anchors[a];
    obj[ref.level_slot].push_back({ref.objectness_index, 1.0});
    const auto d = encode_deltas(ref.box, gts[static_cast<std::size_t>(best_gt[a])], kRpnDeltaWeights);
    for (std::size_t j = 0; j < 4; ++j) {
      box[ref.level_slot].push_back({ref.delta_index + j * ref.plane, d[j]});
    }
  }
  std::vector<ag::Var> cls_terms, reg_terms;
  for (std::size_t l = 0; l < levels; ++l) {
    const ag::Var& logits = view.rpn.rpn.logits[l];
    if (!obj[l].empty()) cls_terms.push_back(ag::sigmoid_bce(logits, obj[l], normalizer));
    if (!box[l].empty()) {
      reg_terms.push_back(ag::smooth_l1(logits, box[l], options.rpn_smooth_l1_beta, normalizer));
    }
  }
  return {sum_terms(cls_terms), sum_terms(reg_terms), nullptr};
}

LossPair roi_head_loss(const Detector& detector, const FeaturePyramid& pyramid, int shift,
                       Classifier classifier, const RoiTargets& targets,
                       const LossOptions& options, bool with_regression) {
  if (targets.boxes.empty()) return LossPair::zero();
  const auto out = detector.detect(
      detector.embed(detector.roi_features(pyramid, targets.boxes, shift)), classifier);
  const double normalizer = static_cast<double>(targets.boxes.size());
  LossPair loss;
  loss.cls = ag::softmax_cross_entropy(out.class_logits, targets.labels, normalizer);
  std::vector<ag::SparseTarget> reg;
  if (with_regression) {
    for (std::size_t i = 0; i < targets.boxes.size(); ++i) {
      if (!targets.matched[i]) continue;
      const auto d = encode_deltas(targets.boxes[i], *targets.matched[i], kRoiDeltaWeights);
      for (std::size_t j = 0; j < 4; ++j) reg.push_back({4 * i + j, d[j]});
    }
  }
  loss.reg = reg.empty() ? zero_scalar()
                         : ag::smooth_l1(out.box_deltas, reg, options.roi_smooth_l1_beta,
                                         normalizer);
  return loss;
}

namespace {

LossPair main_branch_loss(const Detector& det, const StudentView& view,
                          const std::vector<Box>& targets, const LossOptions& options,
                          std::uint64_t seed, bool with_regression) {
  const RoiTargets roi = sample_roi_targets(view.proposals(), targets, det.config().num_classes,
                                            options, derive_seed(seed, {1}));
  const LossPair head = roi_head_loss(det, view.main, 0, Classifier::kMain, roi, options,
                                      with_regression);
  const LossPair rpn = rpn_loss(view, targets, options, derive_seed(seed, {2}));
  const ag::Var cls[] = {head.cls, rpn.cls};
  const ag::Var reg[] = {head.reg, rpn.reg};
  const double ones[] = {1.0, 1.0};
  return {ag::weighted_sum(cls, ones),
          with_regression ? ag::weighted_sum(reg, ones) : zero_scalar(), view.rpn.proposals};
}

}  // namespace

LossPair supervised_loss(const Detector& student, const StudentView& view,
                         const std::vector<Box>& truths, const LossOptions& options,
                         std::uint64_t seed) {
  return main_branch_loss(student, view, truths, options, seed, true);
}

LossPair main_unsupervised_loss(const Detector& student, const StudentView& view,
                                const std::vector<Box>& pseudo_boxes,
                                const LossOptions& options, std::uint64_t seed) {
  if (pseudo_boxes.empty()) return LossPair::zero();
  return main_branch_loss(student, view, pseudo_boxes, options, seed,
                          options.unsupervised_regression);
}

LossPair pim_loss(const Detector& student, const StudentView& view,
                  const std::vector<Box>& pseudo_boxes, const LossOptions& options,
                  std::uint64_t seed) {
  if (pseudo_boxes.empty()) return LossPair::zero();
  if (!view.downsampled) {
    throw std::invalid_argument("pim_loss needs a view with the downsampled pyramid");
  }
  const RoiTargets roi = sample_roi_targets(view.proposals(), pseudo_boxes,
                                            student.config().num_classes, options,
                                            derive_seed(seed, {1}));
  LossPair loss = roi_head_loss(student, *view.downsampled, 1, Classifier::kAux, roi, options,
                                options.unsupervised_regression);
  loss.proposals = view.rpn.proposals;
  return loss;
}

ag::Var distillation_loss(const Detector& student, const StudentView& view,
                          const std::vector<Box>& boxes, const LossOptions& options) {
  if (boxes.empty()) return zero_scalar();
  if (!view.downsampled) {
    throw std::invalid_argument("distillation_loss needs a view with the downsampled pyramid");
  }
  std::vector<Rect> rects;
  for (const auto& b : boxes) rects.push_back(Rect::of(b));
  const ag::Var main_logits =
      student.detect(student.embed(student.roi_features(view.main, rects, 0)), Classifier::kMain)
          .class_logits;
  const ag::Var aux_logits =
      student
          .detect(student.embed(student.roi_features(*view.downsampled, rects, 1)),
                  Classifier::kAux)
          .class_logits;
  const ag::Var mean = options.kl_reverse ? ag::kl_divergence(main_logits, aux_logits)
                                         : ag::kl_divergence(aux_logits, main_logits);
  if (options.distill_per_box) return mean;
  return ag::scale(mean, static_cast<double>(boxes.size()) / options.roi_batch);
}

}  // namespace lsm
