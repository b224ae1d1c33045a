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

#include "lsm/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lsm/data.hpp"
#include "lsm/random.hpp"

namespace lsm {
namespace {

constexpr int kMainLevels[] = {2, 3, 4, 5};
constexpr double kMaxDeltaLog = 4.135166556742356;  // log(1000 / 16)
constexpr double kMinProposalSide = 1.0;

Tensor random_normal(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

std::string level_name(int index, bool downsampled) {
  return "P" + std::to_string(index) + (downsampled ? "d" : "");
}

}  // namespace

// --- ParameterSet ----------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  entries_.push_back({std::move(name), trainable ? ag::Var::leaf(std::move(value))
                                                 : ag::Var::constant(std::move(value))});
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

const ag::Var& ParameterSet::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.var;
  }
  throw std::out_of_range("no parameter named " + name);
}

ag::Var& ParameterSet::get(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.var;
  }
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.value().size();
  return n;
}

ParameterSet ParameterSet::clone(bool trainable) const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, e.var.value(), trainable);
  return out;
}

void ParameterSet::check_compatible(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) {
    throw std::invalid_argument("parameter sets differ in size: " +
                                std::to_string(entries_.size()) + " vs " +
                                std::to_string(other.entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name) {
      throw std::invalid_argument("parameter path mismatch: " + a.name + " vs " + b.name);
    }
    if (a.var.shape() != b.var.shape()) {
      throw std::invalid_argument("parameter " + a.name + " shape mismatch: " +
                                  shape_string(a.var.shape()) + " vs " +
                                  shape_string(b.var.shape()));
    }
  }
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  check_compatible(other);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    entries_[i].var.mutable_value() = other.entries_[i].var.value();
  }
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

// --- config ----------------------------------------------------------------

void DetectorConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (fpn_channels < 1 || head_hidden < 1) throw std::invalid_argument("widths must be positive");
  if (backbone_widths.size() != 5) {
    throw std::invalid_argument("backbone_widths needs 5 entries (strides 2..32)");
  }
  for (int w : backbone_widths) {
    if (w < 1) throw std::invalid_argument("backbone widths must be positive");
  }
  if (roi_size < 1 || roi_sampling < 1) throw std::invalid_argument("roi settings must be positive");
  if (!(canonical_scale > 0)) throw std::invalid_argument("canonical_scale must be positive");
  if (pim_levels.empty()) throw std::invalid_argument("pim_levels must not be empty");
  for (int l : pim_levels) {
    if (l < 2 || l > 4) throw std::invalid_argument("pim_levels entries must be in {2, 3, 4}");
  }
  if (anchor_scales.empty()) throw std::invalid_argument("anchor_scales must not be empty");
}

// --- box coding ------------------------------------------------------------

std::array<double, 4> encode_deltas(const Rect& ref, const Rect& target,
                                    const DeltaWeights& w) {
  const double pw = ref.width(), ph = ref.height();
  const double px = ref.x1 + 0.5 * pw, py = ref.y1 + 0.5 * ph;
  const double gw = target.width(), gh = target.height();
  const double gx = target.x1 + 0.5 * gw, gy = target.y1 + 0.5 * gh;
  return {w.wx * (gx - px) / pw, w.wy * (gy - py) / ph, w.ww * std::log(gw / pw),
          w.wh * std::log(gh / ph)};
}

Rect decode_deltas(const Rect& ref, std::span<const double> d, const DeltaWeights& w) {
  const double pw = ref.width(), ph = ref.height();
  const double px = ref.x1 + 0.5 * pw, py = ref.y1 + 0.5 * ph;
  const double dx = d[0] / w.wx, dy = d[1] / w.wy;
  const double dw = std::min(d[2] / w.ww, kMaxDeltaLog);
  const double dh = std::min(d[3] / w.wh, kMaxDeltaLog);
  const double cx = px + dx * pw, cy = py + dy * ph;
  const double nw = pw * std::exp(dw), nh = ph * std::exp(dh);
  return {cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  const int n = logits.dim(0), k = logits.dim(1);
  for (int i = 0; i < n; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * k;
    const double m = *std::max_element(row, row + k);
    double s = 0;
    for (int j = 0; j < k; ++j) s += (row[j] = std::exp(row[j] - m));
    for (int j = 0; j < k; ++j) row[j] /= s;
  }
  return out;
}

// --- detector --------------------------------------------------------------

const PyramidLevel* FeaturePyramid::find(int index) const {
  for (const auto& l : levels) {
    if (l.index == index) return &l;
  }
  return nullptr;
}

Detector::Detector(DetectorConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const ParameterSet reference = init_parameters(config_, 0, false);
  params_.check_compatible(reference);
}

ParameterSet Detector::init_parameters(const DetectorConfig& cfg, std::uint64_t seed,
                                       bool trainable) {
  cfg.validate();
  Rng rng(seed);
  ParameterSet p;
  const auto& bw = cfg.backbone_widths;
  int in = 3;
  for (int i = 0; i < 5; ++i) {
    const std::string name = "backbone.conv" + std::to_string(i + 1);
    p.add(name + ".weight", random_normal({bw[i], in, 3, 3}, std::sqrt(2.0 / (in * 9)), rng),
          trainable);
    p.add(name + ".bias", Tensor({bw[i]}), trainable);
    in = bw[i];
  }
  for (int level = 2; level <= 5; ++level) {
    const int c = bw[level - 1];
    const std::string name = "fpn.lateral" + std::to_string(level);
    p.add(name + ".weight",
          random_normal({cfg.fpn_channels, c, 1, 1}, std::sqrt(1.0 / c), rng), trainable);
    p.add(name + ".bias", Tensor({cfg.fpn_channels}), trainable);
  }
  const int a = cfg.num_anchors();
  p.add("rpn.conv.weight", random_normal({a * 5, cfg.fpn_channels, 3, 3}, 0.01, rng), trainable);
  p.add("rpn.conv.bias", Tensor({a * 5}), trainable);

  const int flat = cfg.fpn_channels * cfg.roi_size * cfg.roi_size;
  p.add("box_head.fc1.weight", random_normal({cfg.head_hidden, flat}, std::sqrt(2.0 / flat), rng),
        trainable);
  p.add("box_head.fc1.bias", Tensor({cfg.head_hidden}), trainable);
  p.add("box_head.fc2.weight",
        random_normal({cfg.head_hidden, cfg.head_hidden}, std::sqrt(2.0 / cfg.head_hidden), rng),
        trainable);
  p.add("box_head.fc2.bias", Tensor({cfg.head_hidden}), trainable);
  p.add("cls_main.weight", random_normal({cfg.num_classes + 1, cfg.head_hidden}, 0.01, rng),
        trainable);
  p.add("cls_main.bias", Tensor({cfg.num_classes + 1}), trainable);
  p.add("cls_aux.weight", random_normal({cfg.num_classes + 1, cfg.head_hidden}, 0.01, rng),
        trainable);
  p.add("cls_aux.bias", Tensor({cfg.num_classes + 1}), trainable);
  p.add("reg.weight", random_normal({4, cfg.head_hidden}, 0.001, rng), trainable);
  p.add("reg.bias", Tensor({4}), trainable);
  return p;
}

Detector Detector::create(const DetectorConfig& config, std::uint64_t seed, bool trainable) {
  return Detector(config, init_parameters(config, seed, trainable));
}

FeaturePyramid Detector::extract_pyramid(const Tensor& image, bool downsampled, int frame_w,
                                         int frame_h) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("extract_pyramid expects a [3, H, W] image, got " +
                                shape_string(image.shape()));
  }
  const int h = image.dim(1), w = image.dim(2);
  if (h < kMinBackboneInput || w < kMinBackboneInput) {
    throw std::invalid_argument("image " + std::to_string(w) + "x" + std::to_string(h) +
                                " is below the backbone minimum of " +
                                std::to_string(kMinBackboneInput));
  }
  const auto& p = params_;
  std::vector<ag::Var> c(6);
  ag::Var x = ag::Var::constant(image);
  for (int i = 1; i <= 5; ++i) {
    const std::string name = "backbone.conv" + std::to_string(i);
    x = ag::relu(ag::conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), 2, 1));
    c[i] = x;
  }
  auto lateral = [&](int level) {
    const std::string name = "fpn.lateral" + std::to_string(level);
    return ag::conv2d(c[level], p.get(name + ".weight"), p.get(name + ".bias"), 1, 0);
  };
  std::vector<ag::Var> levels(6);
  levels[5] = lateral(5);
  for (int level = 4; level >= 2; --level) {
    ag::Var lat = lateral(level);
    levels[level] = ag::add(lat, ag::upsample_nearest(levels[level + 1], lat.value().dim(1),
                                                      lat.value().dim(2)));
  }

  FeaturePyramid pyr;
  pyr.downsampled = downsampled;
  pyr.input_w = w;
  pyr.input_h = h;
  pyr.frame_w = downsampled ? (frame_w > 0 ? frame_w : 2 * w) : w;
  pyr.frame_h = downsampled ? (frame_h > 0 ? frame_h : 2 * h) : h;
  const int top = downsampled ? 4 : 5;
  for (int level = 2; level <= top; ++level) {
    pyr.levels.push_back({level_name(level, downsampled), level, 1 << level, levels[level]});
  }
  return pyr;
}

ProposalResult Detector::propose(const FeaturePyramid& pyramid, int max_proposals) const {
  if (pyramid.downsampled) {
    throw std::invalid_argument("proposals come from the main pyramid only");
  }
  const int na = config_.num_anchors();
  ProposalResult result;
  const double sx = static_cast<double>(pyramid.frame_w) / pyramid.input_w;
  const double sy = static_cast<double>(pyramid.frame_h) / pyramid.input_h;
  for (int level : kMainLevels) {
    const PyramidLevel* lvl = pyramid.find(level);
    if (!lvl) throw std::invalid_argument("main pyramid lacks level P" + std::to_string(level));
    ag::Var out = ag::conv2d(lvl->features, params_.get("rpn.conv.weight"),
                             params_.get("rpn.conv.bias"), 1, 1);
    const int h = out.value().dim(1), w = out.value().dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int slot = static_cast<int>(result.rpn.logits.size());
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        for (int a = 0; a < na; ++a) {
          const double side = config_.anchor_scales[a] * lvl->stride;
          const double cx = (col + 0.5) * lvl->stride, cy = (r + 0.5) * lvl->stride;
          AnchorRef ref;
          ref.box = {(cx - side / 2) * sx, (cy - side / 2) * sy, (cx + side / 2) * sx,
                     (cy + side / 2) * sy};
          ref.level_slot = slot;
          ref.objectness_index = a * plane + static_cast<std::size_t>(r) * w + col;
          ref.delta_index = (na + 4 * a) * plane + static_cast<std::size_t>(r) * w + col;
          ref.plane = plane;
          result.rpn.anchors.push_back(ref);
        }
      }
    }
    result.rpn.logits.push_back(std::move(out));
  }

  auto proposals = std::make_shared<std::vector<Proposal>>();
  if (max_proposals > 0) {
    struct Candidate {
      Rect box;
      double logit;
      int level;
    };
    std::vector<Candidate> cands;
    cands.reserve(result.rpn.anchors.size());
    for (const auto& a : result.rpn.anchors) {
      const Tensor& t = result.rpn.logits[a.level_slot].value();
      const double d[4] = {t[a.delta_index], t[a.delta_index + a.plane],
                           t[a.delta_index + 2 * a.plane], t[a.delta_index + 3 * a.plane]};
      const Rect box = decode_deltas(a.box, d, kRpnDeltaWeights)
                           .clipped(pyramid.frame_w, pyramid.frame_h);
      if (box.width() < kMinProposalSide || box.height() < kMinProposalSide) continue;
      cands.push_back({box, t[a.objectness_index], kMainLevels[a.level_slot]});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logit > b.logit; });
    if (cands.size() > static_cast<std::size_t>(config_.rpn_pre_nms)) {
      cands.resize(static_cast<std::size_t>(config_.rpn_pre_nms));
    }
    std::vector<Rect> boxes;
    std::vector<double> scores;
    for (const auto& c : cands) {
      boxes.push_back(c.box);
      scores.push_back(c.logit);
    }
    for (std::size_t i : nms(boxes, scores, config_.rpn_nms_iou)) {
      if (proposals->size() >= static_cast<std::size_t>(max_proposals)) break;
      const auto& c = cands[i];
      proposals->push_back({Box(c.box.x1, c.box.y1, c.box.width(), c.box.height()),
                            1.0 / (1.0 + std::exp(-c.logit)), level_name(c.level, false)});
    }
  }
  result.proposals = std::move(proposals);
  return result;
}

int Detector::main_level(const Rect& box) const {
  const double side = std::sqrt(std::max(box.area(), 1e-12));
  const int k = static_cast<int>(
      std::floor(config_.canonical_level + std::log2(side / config_.canonical_scale) + 1e-9));
  return std::clamp(k, 2, 5);
}

int Detector::assigned_level(const FeaturePyramid& pyramid, const Rect& box, int shift) const {
  const int expected_shift = pyramid.downsampled ? 1 : 0;
  if (shift != expected_shift) {
    throw std::invalid_argument("shift " + std::to_string(shift) + " is malformed for a " +
                                (pyramid.downsampled ? "downsampled" : "main") +
                                " pyramid (expected " + std::to_string(expected_shift) + ")");
  }
  const int target = main_level(box) - shift;
  if (!pyramid.downsampled) return target;
  int best = -1;
  for (int l : config_.pim_levels) {
    if (!pyramid.find(l)) continue;
    if (best < 0 || std::abs(l - target) < std::abs(best - target) ||
        (std::abs(l - target) == std::abs(best - target) && l > best)) {
      best = l;
    }
  }
  if (best < 0) throw std::invalid_argument("no auxiliary pyramid level is enabled");
  return best;
}

ag::Var Detector::roi_features(const FeaturePyramid& pyramid, std::span<const Rect> boxes,
                               int shift) const {
  std::vector<ag::Var> levels;
  for (const auto& l : pyramid.levels) levels.push_back(l.features);
  const double in_sx = static_cast<double>(pyramid.input_w) / pyramid.frame_w;
  const double in_sy = static_cast<double>(pyramid.input_h) / pyramid.frame_h;
  std::vector<ag::RoiBox> rois;
  rois.reserve(boxes.size());
  for (const auto& b : boxes) {
    const int level = assigned_level(pyramid, b, shift);
    const PyramidLevel* lvl = pyramid.find(level);
    if (!lvl) {
      throw std::out_of_range("box assigned to level " + level_name(level, pyramid.downsampled) +
                              " which is absent from the pyramid");
    }
    const int slot = static_cast<int>(lvl - pyramid.levels.data());
    const double fx = in_sx / lvl->stride, fy = in_sy / lvl->stride;
    rois.push_back({b.x1 * fx - 0.5, b.y1 * fy - 0.5, b.x2 * fx - 0.5, b.y2 * fy - 0.5, slot});
  }
  return ag::roi_align(levels, rois, config_.roi_size, config_.roi_sampling);
}

ag::Var Detector::roi_features(const FeaturePyramid& pyramid,
                               const std::vector<Proposal>& proposals, int shift) const {
  std::vector<Rect> boxes;
  boxes.reserve(proposals.size());
  for (const auto& p : proposals) boxes.push_back(Rect::of(p.box));
  return roi_features(pyramid, boxes, shift);
}

ag::Var Detector::embed(const ag::Var& roi_features) const {
  ag::Var x = ag::flatten_rows(roi_features);
  x = ag::relu(ag::linear(x, params_.get("box_head.fc1.weight"), params_.get("box_head.fc1.bias")));
  return ag::relu(
      ag::linear(x, params_.get("box_head.fc2.weight"), params_.get("box_head.fc2.bias")));
}

DetectionHeadOutput Detector::detect(const ag::Var& embedding, Classifier classifier) const {
  const std::string cls = classifier == Classifier::kMain ? "cls_main" : "cls_aux";
  return {ag::linear(embedding, params_.get(cls + ".weight"), params_.get(cls + ".bias")),
          ag::linear(embedding, params_.get("reg.weight"), params_.get("reg.bias"))};
}

std::vector<Box> Detector::predict(const Tensor& image, double score_floor) const {
  const FeaturePyramid pyr = extract_pyramid(image);
  const ProposalResult props = propose(pyr, config_.proposals_test);
  const auto& proposals = *props.proposals;
  if (proposals.empty()) return {};
  const DetectionHeadOutput out =
      detect(embed(roi_features(pyr, proposals, 0)), Classifier::kMain);
  const Tensor probs = softmax_rows(out.class_logits.value());
  const Tensor& deltas = out.box_deltas.value();
  const int n = static_cast<int>(proposals.size()), k = config_.num_classes + 1;

  std::vector<Box> dets;
  for (int c = 0; c < config_.num_classes; ++c) {
    std::vector<Rect> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      const double s = probs[static_cast<std::size_t>(i) * k + c];
      if (!(s > score_floor)) continue;
      const Rect r = decode_deltas(Rect::of(proposals[i].box),
                                   std::span<const double>(deltas.data() + 4 * i, 4),
                                   kRoiDeltaWeights)
                         .clipped(pyr.frame_w, pyr.frame_h);
      if (r.width() <= 1e-6 || r.height() <= 1e-6) continue;
      boxes.push_back(r);
      scores.push_back(s);
    }
    for (std::size_t i : nms(boxes, scores, config_.box_nms_iou)) {
      const Rect& r = boxes[i];
      dets.emplace_back(r.x1, r.y1, r.width(), r.height(), c, std::min(scores[i], 1.0));
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Box& a, const Box& b) { return *a.score() > *b.score(); });
  if (dets.size() > static_cast<std::size_t>(config_.max_detections)) {
    dets.erase(dets.begin() + config_.max_detections, dets.end());
  }
  return dets;
}

}  // namespace lsm
