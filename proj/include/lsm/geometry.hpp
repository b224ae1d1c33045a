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

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lsm {

/// Axis-aligned box in (x, y, w, h) top-left form, as used by COCO JSON.
/// Construction rejects non-positive extents and scores outside [0, 1].
class Box {
 public:
  Box(double x, double y, double w, double h, int category = 0,
      std::optional<double> score = std::nullopt);

  double x() const { return x_; }
  double y() const { return y_; }
  double w() const { return w_; }
  double h() const { return h_; }
  double x2() const { return x_ + w_; }
  double y2() const { return y_ + h_; }
  double area() const { return w_ * h_; }
  int category() const { return category_; }
  const std::optional<double>& score() const { return score_; }

  Box with_score(std::optional<double> score) const;
  Box with_category(int category) const;

  friend bool operator==(const Box&, const Box&) = default;

 private:
  double x_, y_, w_, h_;
  int category_;
  std::optional<double> score_;
};

/// Corner-form rectangle for internal arithmetic; may be degenerate.
struct Rect {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const;
  static Rect of(const Box& b) { return {b.x(), b.y(), b.x2(), b.y2()}; }
  Rect clipped(double img_w, double img_h) const;
};

double iou(const Rect& a, const Rect& b);
double iou(const Box& a, const Box& b);

enum class AreaBin { kSmall, kMedium, kLarge };

inline constexpr double kSmallMediumBoundary = 32.0 * 32.0;
inline constexpr double kMediumLargeBoundary = 96.0 * 96.0;
inline constexpr AreaBin kAllAreaBins[] = {AreaBin::kSmall, AreaBin::kMedium,
                                           AreaBin::kLarge};

struct AreaBinRange {
  AreaBin bin;
  double lower;  // inclusive
  double upper;  // exclusive; +inf for large
};

AreaBinRange area_bin_range(AreaBin bin);
AreaBin area_bin_of(double area);
inline AreaBin area_bin_of(const Box& box) { return area_bin_of(box.area()); }
std::string to_string(AreaBin bin);

struct MatchPair {
  std::size_t prediction;
  std::size_t truth;
  double iou;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_predictions;
  std::vector<std::size_t> unmatched_truths;
};

enum class MatchMode {
  // Greedy by descending score; each truth used at most once.
  kOneToOne,
  // Each prediction takes its best same-category truth; truths may repeat.
  kBestPerPrediction,
};

inline constexpr double kDefaultIouFloor = 0.5;

MatchResult match_per_category(std::span<const Box> predictions,
                               std::span<const Box> truths,
                               double iou_floor = kDefaultIouFloor,
                               MatchMode mode = MatchMode::kOneToOne);

/// Mean IoU of matched pairs grouped by the prediction's area bin. Bins with
/// no pairs are absent from the result.
std::map<AreaBin, double> binned_mean_iou(const MatchResult& matches,
                                          std::span<const Box> predictions);

/// Greedy NMS. Returns kept indices ordered by descending score; equal scores
/// keep input order.
std::vector<std::size_t> nms(std::span<const Rect> boxes,
                             std::span<const double> scores, double iou_threshold);

}  // namespace lsm
