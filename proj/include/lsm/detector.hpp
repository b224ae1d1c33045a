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

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lsm/autograd.hpp"
#include "lsm/geometry.hpp"
#include "lsm/tensor.hpp"

namespace lsm {

// --- parameters ------------------------------------------------------------

/// Named parameter tensors in registration order.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    ag::Var var;
  };

  void add(std::string name, Tensor value, bool trainable);
  const ag::Var& get(const std::string& name) const;
  ag::Var& get(const std::string& name);
  bool contains(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;

  /// Deep copy; `trainable` decides whether the copy's leaves take gradients.
  ParameterSet clone(bool trainable) const;
  /// Overwrites values from `other`; paths and shapes must match.
  void copy_values_from(const ParameterSet& other);
  /// Throws std::invalid_argument describing the first path/shape mismatch.
  void check_compatible(const ParameterSet& other) const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

// --- configuration ---------------------------------------------------------

struct DetectorConfig {
  int num_classes = 3;
  int fpn_channels = 16;
  std::vector<int> backbone_widths{8, 16, 32, 32, 48};  // stride 2,4,8,16,32
  int head_hidden = 64;
  int roi_size = 7;
  int roi_sampling = 2;
  // Level rule k = floor(k0 + log2(sqrt(area) / canonical_scale)).
  double canonical_scale = 56.0;
  int canonical_level = 4;
  // Downsampled levels the auxiliary branch may read (subset of {2, 3, 4}).
  std::vector<int> pim_levels{2, 3, 4};
  std::vector<double> anchor_scales{4.0, 5.66};  // anchor side = scale * stride
  int rpn_pre_nms = 300;
  double rpn_nms_iou = 0.7;
  int proposals_train = 64;
  int proposals_test = 100;
  double box_nms_iou = 0.5;
  int max_detections = 100;

  void validate() const;
  int num_anchors() const { return static_cast<int>(anchor_scales.size()); }
};

// --- pyramid / proposals ---------------------------------------------------

struct PyramidLevel {
  std::string name;  // "P2".."P5" or "P2d".."P4d"
  int index = 0;     // 2..5
  int stride = 0;    // pixels of the pyramid's own input per cell
  ag::Var features;  // [C, h, w]
};

struct FeaturePyramid {
  std::vector<PyramidLevel> levels;  // ascending index
  bool downsampled = false;
  // Size of the image the pyramid was computed from, and of the original
  // frame proposals live in.
  int input_w = 0, input_h = 0;
  int frame_w = 0, frame_h = 0;

  const PyramidLevel* find(int index) const;
};

struct Proposal {
  Box box;
  double objectness = 0;
  std::string source_level;
};

using ProposalList = std::shared_ptr<const std::vector<Proposal>>;

struct AnchorRef {
  Rect box;             // original frame
  int level_slot = 0;   // position in RpnOutput::logits
  std::size_t objectness_index = 0;
  std::size_t delta_index = 0;  // first of 4 consecutive channel planes
  std::size_t plane = 0;        // h * w of the level, stride between delta planes
};

struct RpnOutput {
  std::vector<ag::Var> logits;   // per main level: [A * 5, h, w]
  std::vector<AnchorRef> anchors;  // (level, row, col, anchor) order
};

struct ProposalResult {
  RpnOutput rpn;
  ProposalList proposals;
};

struct DetectionHeadOutput {
  ag::Var class_logits;  // [n, C + 1], background last
  ag::Var box_deltas;    // [n, 4]
};

enum class Classifier { kMain, kAux };

// --- box coding ------------------------------------------------------------

struct DeltaWeights {
  double wx = 1, wy = 1, ww = 1, wh = 1;
};
inline constexpr DeltaWeights kRpnDeltaWeights{1, 1, 1, 1};
inline constexpr DeltaWeights kRoiDeltaWeights{10, 10, 5, 5};

std::array<double, 4> encode_deltas(const Rect& reference, const Rect& target,
                                    const DeltaWeights& w);
Rect decode_deltas(const Rect& reference, std::span<const double> deltas,
                   const DeltaWeights& w);

// --- detector --------------------------------------------------------------

class Detector {
 public:
  Detector(DetectorConfig config, ParameterSet params);

  /// Random initialization; `trainable` leaves accumulate gradients.
  static Detector create(const DetectorConfig& config, std::uint64_t seed, bool trainable);
  static ParameterSet init_parameters(const DetectorConfig& config, std::uint64_t seed,
                                      bool trainable);

  const DetectorConfig& config() const { return config_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  /// P2..P5 (strides 4..32) for an original image; P2d..P4d when
  /// `downsampled` marks the input as the 0.5x view of a frame of
  /// `frame_w` x `frame_h`.
  FeaturePyramid extract_pyramid(const Tensor& image, bool downsampled = false,
                                 int frame_w = 0, int frame_h = 0) const;

  /// Scores every anchor, then top-k by objectness, NMS, top `max_proposals`.
  ProposalResult propose(const FeaturePyramid& pyramid, int max_proposals) const;

  /// Main-pyramid level for a box under the area rule, clamped to P2..P5.
  int main_level(const Rect& box) const;
  /// Level read for `box` on `pyramid`; shift 0 on the main pyramid, shift 1
  /// on the downsampled one (snapped to the enabled auxiliary levels).
  int assigned_level(const FeaturePyramid& pyramid, const Rect& box, int shift) const;

  /// [n, C, roi, roi] crops, boxes in the original frame.
  ag::Var roi_features(const FeaturePyramid& pyramid, std::span<const Rect> boxes,
                       int shift) const;
  ag::Var roi_features(const FeaturePyramid& pyramid, const std::vector<Proposal>& proposals,
                       int shift) const;

  /// Shared fully connected box embedding (part of the feature extractor).
  ag::Var embed(const ag::Var& roi_features) const;

  /// Affine classifier (main or auxiliary) plus the shared regressor.
  DetectionHeadOutput detect(const ag::Var& embedding, Classifier classifier) const;

  /// Main-branch inference: boxes with scores strictly above `score_floor`.
  std::vector<Box> predict(const Tensor& image, double score_floor) const;

 private:
  DetectorConfig config_;
  ParameterSet params_;
};

/// Row-wise softmax of a [n, k] tensor.
Tensor softmax_rows(const Tensor& logits);

}  // namespace lsm
