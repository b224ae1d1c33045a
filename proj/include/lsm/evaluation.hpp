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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "lsm/data.hpp"
#include "lsm/geometry.hpp"

namespace lsm {

/// Predictions and truths of one image.
struct ImageDetections {
  std::int64_t image_id = 0;
  std::vector<Box> predictions;
  std::vector<Box> truths;
};

struct CategoryAp {
  double ap50 = 0;
  double ap50_95 = 0;
};

struct EvalResult {
  double ap50 = 0;
  double ap50_95 = 0;
  std::optional<double> ap_small, ap_medium, ap_large;  // AP50:95 per area bin
  double avg_recall = 0;  // matched-truth fraction at IoU 0.5, <= 100 dets/image
  std::map<int, CategoryAp> per_category;
  int n_images = 0;

  nlohmann::json to_json() const;
};

inline constexpr int kMaxDetectionsPerImage = 100;
inline constexpr int kRecallPoints = 101;

/// COCO-style AP (101-point interpolation) of a single image, averaged over
/// categories that have truths. Empty when there are no truths at all.
std::optional<double> average_precision(std::span<const Box> predictions,
                                        std::span<const Box> truths, double iou_threshold);

/// Mean AP over categories at one IoU threshold, optionally restricted to the
/// truths of one area bin. Empty when no category has a truth in scope.
std::optional<double> mean_average_precision(const std::vector<ImageDetections>& images,
                                             double iou_threshold,
                                             std::optional<AreaBin> bin = std::nullopt,
                                             std::map<int, double>* per_category = nullptr);

EvalResult evaluate(const std::vector<ImageDetections>& images);

/// Pairs predictions with dataset truths by image id. Prediction ids absent
/// from the dataset raise std::invalid_argument.
EvalResult evaluate(const std::unordered_map<std::int64_t, std::vector<Box>>& predictions,
                    const std::vector<DetectionSample>& dataset);

/// Step-aligned recall / AP series of one or more metric logs, as CSV text:
/// step, then <label>_recall, <label>_ap50, <label>_mAP per log.
std::string recall_precision_trace(
    const std::vector<std::pair<std::string, std::filesystem::path>>& logs);

}  // namespace lsm
