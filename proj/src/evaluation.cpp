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

#include "lsm/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace lsm {
namespace {

enum class Outcome { kTruePositive, kFalsePositive, kIgnored };

struct ScoredOutcome {
  double score;
  Outcome outcome;
};

std::vector<std::size_t> top_detections(const std::vector<Box>& preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].score().value_or(0.0) > preds[b].score().value_or(0.0);
  });
  if (order.size() > static_cast<std::size_t>(kMaxDetectionsPerImage)) {
    order.resize(static_cast<std::size_t>(kMaxDetectionsPerImage));
  }
  return order;
}

bool in_bin(const Box& b, std::optional<AreaBin> bin) {
  return !bin || area_bin_of(b) == *bin;
}

// Greedy matching of one image and one category; appends outcomes in score
// order and returns the number of in-scope truths matched.
std::size_t match_image_category(const ImageDetections& img,
                                 const std::vector<std::size_t>& det_order, int category,
                                 double iou_threshold, std::optional<AreaBin> bin,
                                 std::vector<ScoredOutcome>& outcomes) {
  std::vector<std::size_t> gts;
  for (std::size_t g = 0; g < img.truths.size(); ++g) {
    if (img.truths[g].category() == category) gts.push_back(g);
  }
  std::vector<bool> used(gts.size(), false);
  std::size_t matched_in_scope = 0;
  for (std::size_t d : det_order) {
    const Box& det = img.predictions[d];
    if (det.category() != category) continue;
    int best = -1;
    double best_iou = iou_threshold;
    bool best_in_scope = false;
    // In-scope truths first, then out-of-bin truths (which make the det ignored).
    for (int pass = 0; pass < 2 && best < 0; ++pass) {
      for (std::size_t k = 0; k < gts.size(); ++k) {
        if (used[k]) continue;
        const bool scope = in_bin(img.truths[gts[k]], bin);
        if (scope != (pass == 0)) continue;
        const double v = iou(det, img.truths[gts[k]]);
        if (v >= best_iou && (best < 0 || v > best_iou)) {
          best = static_cast<int>(k);
          best_iou = v;
          best_in_scope = scope;
        }
      }
    }
    const double score = det.score().value_or(0.0);
    if (best < 0) {
      outcomes.push_back({score, Outcome::kFalsePositive});
      continue;
    }
    used[static_cast<std::size_t>(best)] = true;
    if (best_in_scope) {
      outcomes.push_back({score, Outcome::kTruePositive});
      ++matched_in_scope;
    } else {
      outcomes.push_back({score, Outcome::kIgnored});
    }
  }
  return matched_in_scope;
}

double interpolated_ap(std::vector<ScoredOutcome> outcomes, std::size_t n_truths) {
  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  double tp = 0, fp = 0;
  for (const auto& o : outcomes) {
    if (o.outcome == Outcome::kIgnored) continue;
    (o.outcome == Outcome::kTruePositive ? tp : fp) += 1;
    recall.push_back(tp / static_cast<double>(n_truths));
    precision.push_back(tp / (tp + fp));
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0;
  for (int k = 0; k < kRecallPoints; ++k) {
    const double r = static_cast<double>(k) / (kRecallPoints - 1);
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / kRecallPoints;
}

std::set<int> categories_of(const std::vector<ImageDetections>& images) {
  std::set<int> cats;
  for (const auto& img : images) {
    for (const auto& t : img.truths) cats.insert(t.category());
  }
  return cats;
}

constexpr double kIouThresholds[] = {0.50, 0.55, 0.60, 0.65, 0.70,
                                     0.75, 0.80, 0.85, 0.90, 0.95};

}  // namespace

std::optional<double> mean_average_precision(const std::vector<ImageDetections>& images,
                                             double iou_threshold, std::optional<AreaBin> bin,
                                             std::map<int, double>* per_category) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw std::invalid_argument("iou_threshold must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> orders;
  orders.reserve(images.size());
  for (const auto& img : images) orders.push_back(top_detections(img.predictions));

  double sum = 0;
  int counted = 0;
  for (int cat : categories_of(images)) {
    std::size_t n_truths = 0;
    for (const auto& img : images) {
      for (const auto& t : img.truths) n_truths += (t.category() == cat && in_bin(t, bin));
    }
    if (n_truths == 0) continue;
    std::vector<ScoredOutcome> outcomes;
    for (std::size_t i = 0; i < images.size(); ++i) {
      match_image_category(images[i], orders[i], cat, iou_threshold, bin, outcomes);
    }
    const double ap = interpolated_ap(std::move(outcomes), n_truths);
    if (per_category) (*per_category)[cat] = ap;
    sum += ap;
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return sum / counted;
}

std::optional<double> average_precision(std::span<const Box> predictions,
                                        std::span<const Box> truths, double iou_threshold) {
  std::vector<ImageDetections> images(1);
  images[0].predictions.assign(predictions.begin(), predictions.end());
  images[0].truths.assign(truths.begin(), truths.end());
  return mean_average_precision(images, iou_threshold);
}

EvalResult evaluate(const std::vector<ImageDetections>& images) {
  EvalResult r;
  r.n_images = static_cast<int>(images.size());

  std::map<int, double> per50;
  r.ap50 = mean_average_precision(images, 0.5, std::nullopt, &per50).value_or(0.0);
  for (const auto& [cat, ap] : per50) r.per_category[cat].ap50 = ap;

  double sum = 0;
  for (double thr : kIouThresholds) {
    std::map<int, double> per;
    sum += mean_average_precision(images, thr, std::nullopt, &per).value_or(0.0);
    for (const auto& [cat, ap] : per) r.per_category[cat].ap50_95 += ap / std::size(kIouThresholds);
  }
  r.ap50_95 = sum / std::size(kIouThresholds);

  for (AreaBin bin : kAllAreaBins) {
    std::optional<double> acc = 0.0;
    for (double thr : kIouThresholds) {
      const auto ap = mean_average_precision(images, thr, bin);
      if (!ap) {
        acc.reset();
        break;
      }
      *acc += *ap / std::size(kIouThresholds);
    }
    if (bin == AreaBin::kSmall) r.ap_small = acc;
    if (bin == AreaBin::kMedium) r.ap_medium = acc;
    if (bin == AreaBin::kLarge) r.ap_large = acc;
  }

  std::size_t matched = 0, total = 0;
  const auto cats = categories_of(images);
  for (const auto& img : images) {
    const auto order = top_detections(img.predictions);
    std::vector<ScoredOutcome> scratch;
    for (int cat : cats) matched += match_image_category(img, order, cat, 0.5, std::nullopt, scratch);
    total += img.truths.size();
  }
  r.avg_recall = total ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
  return r;
}

EvalResult evaluate(const std::unordered_map<std::int64_t, std::vector<Box>>& predictions,
                    const std::vector<DetectionSample>& dataset) {
  std::unordered_map<std::int64_t, std::size_t> index;
  for (std::size_t i = 0; i < dataset.size(); ++i) index[dataset[i].id] = i;
  for (const auto& [id, boxes] : predictions) {
    if (!index.count(id)) {
      throw std::invalid_argument("predictions reference image id " + std::to_string(id) +
                                  " which is not in the dataset");
    }
  }
  std::vector<ImageDetections> images;
  images.reserve(dataset.size());
  for (const auto& s : dataset) {
    ImageDetections img;
    img.image_id = s.id;
    img.truths = s.annotations;
    if (const auto it = predictions.find(s.id); it != predictions.end()) img.predictions = it->second;
    images.push_back(std::move(img));
  }
  return evaluate(images);
}

nlohmann::json EvalResult::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j{{"ap50", ap50},
                   {"ap50_95", ap50_95},
                   {"ap_small", opt(ap_small)},
                   {"ap_medium", opt(ap_medium)},
                   {"ap_large", opt(ap_large)},
                   {"avg_recall", avg_recall},
                   {"avg_recall_definition", "matched-truth fraction at IoU 0.5, <=100 detections per image"},
                   {"n_images", n_images}};
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [cat, ap] : per_category) {
    per[std::to_string(cat)] = {{"ap50", ap.ap50}, {"ap50_95", ap.ap50_95}};
  }
  j["per_category"] = per;
  return j;
}

std::string recall_precision_trace(
    const std::vector<std::pair<std::string, std::filesystem::path>>& logs) {
  struct Point {
    double recall, ap50, map;
  };
  std::vector<std::map<long long, Point>> series;
  std::set<long long> steps;
  for (const auto& [label, path] : logs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metric log " + path.string());
    std::map<long long, Point> pts;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      if (!rec.contains("teacher_mAP")) continue;
      const long long step = rec.at("step").get<long long>();
      pts[step] = {rec.value("recall", 0.0), rec.value("teacher_ap50", 0.0),
                   rec.at("teacher_mAP").get<double>()};
      steps.insert(step);
    }
    if (pts.size() < 2) {
      throw std::invalid_argument("metric log " + path.string() + " (" + label +
                                  ") has fewer than 2 evaluation snapshots");
    }
    series.push_back(std::move(pts));
  }
  std::ostringstream os;
  os << "step";
  for (const auto& [label, path] : logs) os << ',' << label << "_recall," << label << "_ap50," << label << "_mAP";
  os << '\n';
  os.precision(10);
  for (long long step : steps) {
    os << step;
    for (const auto& pts : series) {
      const auto it = pts.find(step);
      if (it == pts.end()) {
        os << ",,,";
      } else {
        os << ',' << it->second.recall << ',' << it->second.ap50 << ',' << it->second.map;
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace lsm
