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

#include "lsm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lsm {

Box::Box(double x, double y, double w, double h, int category,
         std::optional<double> score)
    : x_(x), y_(y), w_(w), h_(h), category_(category), score_(score) {
  if (!(w > 0) || !(h > 0) || !std::isfinite(x) || !std::isfinite(y) ||
      !std::isfinite(w) || !std::isfinite(h)) {
    std::ostringstream os;
    os << "invalid box (" << x << ", " << y << ", " << w << ", " << h
       << "): width and height must be positive and finite";
    throw std::invalid_argument(os.str());
  }
  if (score && !(*score >= 0.0 && *score <= 1.0)) {
    throw std::invalid_argument("box score " + std::to_string(*score) +
                                " outside [0, 1]");
  }
}

Box Box::with_score(std::optional<double> score) const {
  return Box(x_, y_, w_, h_, category_, score);
}

Box Box::with_category(int category) const {
  return Box(x_, y_, w_, h_, category, score_);
}

double Rect::area() const {
  return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
}

Rect Rect::clipped(double img_w, double img_h) const {
  return {std::clamp(x1, 0.0, img_w), std::clamp(y1, 0.0, img_h),
          std::clamp(x2, 0.0, img_w), std::clamp(y2, 0.0, img_h)};
}

double iou(const Rect& a, const Rect& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double iou(const Box& a, const Box& b) {
  // Identical boxes return exactly 1 regardless of rounding in the corners.
  if (a.x() == b.x() && a.y() == b.y() && a.w() == b.w() && a.h() == b.h()) return 1.0;
  return iou(Rect::of(a), Rect::of(b));
}

AreaBinRange area_bin_range(AreaBin bin) {
  switch (bin) {
    case AreaBin::kSmall:
      return {bin, 0.0, kSmallMediumBoundary};
    case AreaBin::kMedium:
      return {bin, kSmallMediumBoundary, kMediumLargeBoundary};
    case AreaBin::kLarge:
      break;
  }
  return {AreaBin::kLarge, kMediumLargeBoundary, std::numeric_limits<double>::infinity()};
}

AreaBin area_bin_of(double area) {
  if (area < kSmallMediumBoundary) return AreaBin::kSmall;
  if (area < kMediumLargeBoundary) return AreaBin::kMedium;
  return AreaBin::kLarge;
}

std::string to_string(AreaBin bin) {
  switch (bin) {
    case AreaBin::kSmall:
      return "small";
    case AreaBin::kMedium:
      return "medium";
    case AreaBin::kLarge:
      return "large";
  }
  return "unknown";
}

MatchResult match_per_category(std::span<const Box> predictions,
                               std::span<const Box> truths, double iou_floor,
                               MatchMode mode) {
  if (!(iou_floor >= 0.0 && iou_floor <= 1.0)) {
    throw std::invalid_argument("iou_floor must lie in [0, 1]");
  }
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score().value_or(0.0) > predictions[b].score().value_or(0.0);
  });

  MatchResult result;
  std::vector<bool> truth_used(truths.size(), false);
  std::vector<bool> pred_used(predictions.size(), false);
  for (std::size_t p : order) {
    const Box& pred = predictions[p];
    double best = -1.0;
    std::size_t best_truth = truths.size();
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (truths[t].category() != pred.category()) continue;
      if (mode == MatchMode::kOneToOne && truth_used[t]) continue;
      const double v = iou(pred, truths[t]);
      if (v >= iou_floor && v > best) {
        best = v;
        best_truth = t;
      }
    }
    if (best_truth < truths.size()) {
      truth_used[best_truth] = true;
      pred_used[p] = true;
      result.pairs.push_back({p, best_truth, best});
    }
  }
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    if (!pred_used[p]) result.unmatched_predictions.push_back(p);
  }
  for (std::size_t t = 0; t < truths.size(); ++t) {
    if (!truth_used[t]) result.unmatched_truths.push_back(t);
  }
  return result;
}

std::map<AreaBin, double> binned_mean_iou(const MatchResult& matches,
                                          std::span<const Box> predictions) {
  std::map<AreaBin, std::pair<double, std::size_t>> acc;
  for (const auto& pair : matches.pairs) {
    if (pair.prediction >= predictions.size()) {
      throw std::out_of_range("match refers to prediction " +
                              std::to_string(pair.prediction) + " not in the sequence");
    }
    auto& [sum, count] = acc[area_bin_of(predictions[pair.prediction])];
    sum += pair.iou;
    ++count;
  }
  std::map<AreaBin, double> out;
  for (const auto& [bin, sc] : acc) out[bin] = sc.first / static_cast<double>(sc.second);
  return out;
}

std::vector<std::size_t> nms(std::span<const Rect> boxes, std::span<const double> scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms: boxes and scores differ in length");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<bool> suppressed(boxes.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t a = order[i];
    if (suppressed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t b = order[j];
      if (!suppressed[b] && iou(boxes[a], boxes[b]) > iou_threshold) suppressed[b] = true;
    }
  }
  return keep;
}

}  // namespace lsm
