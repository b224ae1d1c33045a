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
#include <vector>

#include "lsm/data.hpp"
#include "lsm/detector.hpp"
#include "lsm/geometry.hpp"

namespace lsm {

/// Main-branch threshold t and auxiliary-branch threshold alpha.
struct Thresholds {
  double t = 0.7;
  double alpha = 0.5;

  /// Rejects values outside [0, 1] and alpha > t. alpha == t is accepted as
  /// the degenerate case with an empty distillation interval.
  void validate() const;
  bool degenerate() const { return alpha == t; }
};

/// Teacher detections split by score: main_set (> t), pim_set (> alpha) and
/// sd_interval (alpha < score < t). Index sets refer into `all`, ascending.
struct PseudoLabelSet {
  std::vector<Box> all;
  std::vector<std::size_t> main_set;
  std::vector<std::size_t> pim_set;
  std::vector<std::size_t> sd_interval;
  std::int64_t source_image_id = 0;
  Thresholds thresholds;

  static PseudoLabelSet partition(std::vector<Box> candidates, const Thresholds& thresholds,
                                  std::int64_t source_image_id = 0);
  std::vector<Box> select(const std::vector<std::size_t>& indices) const;
};

/// Runs `teacher` on the (weakly augmented) image with score floor alpha and
/// partitions the result. Teacher parameters are only read.
PseudoLabelSet generate_pseudo_labels(const Detector& teacher, const Tensor& image,
                                      const Thresholds& thresholds,
                                      std::int64_t source_image_id = 0);

/// Maps the labels through the geometric part of `recipe`, applied to an
/// image of `image_w` x `image_h`. Boxes dropped by cropping leave every
/// index set together.
PseudoLabelSet transfer_to_student_view(const PseudoLabelSet& labels,
                                        const AugmentationRecipe& recipe, int image_w,
                                        int image_h);

/// COCO result list with an extra "partition" field per box
/// ("main", "sd" or "pim_only").
void write_pseudo_labels_json(const std::filesystem::path& path,
                              const std::vector<PseudoLabelSet>& sets,
                              const std::vector<Category>& categories);

}  // namespace lsm
