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

#include "lsm/pseudo_label.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace lsm {

void Thresholds::validate() const {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("t must lie in [0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (alpha > t) throw std::invalid_argument("alpha must be < t");
}

PseudoLabelSet PseudoLabelSet::partition(std::vector<Box> candidates,
                                         const Thresholds& thresholds,
                                         std::int64_t source_image_id) {
  thresholds.validate();
  PseudoLabelSet set;
  set.all = std::move(candidates);
  set.thresholds = thresholds;
  set.source_image_id = source_image_id;
  for (std::size_t i = 0; i < set.all.size(); ++i) {
    const double s = set.all[i].score().value_or(0.0);
    if (s > thresholds.t) set.main_set.push_back(i);
    if (s > thresholds.alpha) set.pim_set.push_back(i);
    if (s > thresholds.alpha && s < thresholds.t) set.sd_interval.push_back(i);
  }
  return set;
}

std::vector<Box> PseudoLabelSet::select(const std::vector<std::size_t>& indices) const {
  std::vector<Box> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(all.at(i));
  return out;
}

PseudoLabelSet generate_pseudo_labels(const Detector& teacher, const Tensor& image,
                                      const Thresholds& thresholds,
                                      std::int64_t source_image_id) {
  thresholds.validate();
  return PseudoLabelSet::partition(teacher.predict(image, thresholds.alpha), thresholds,
                                   source_image_id);
}

PseudoLabelSet transfer_to_student_view(const PseudoLabelSet& labels,
                                        const AugmentationRecipe& recipe, int image_w,
                                        int image_h) {
  const auto mapped = transform_boxes(labels.all, recipe, image_w, image_h);
  std::vector<std::ptrdiff_t> remap(labels.all.size(), -1);
  PseudoLabelSet out;
  out.thresholds = labels.thresholds;
  out.source_image_id = labels.source_image_id;
  for (std::size_t i = 0; i < mapped.size(); ++i) {
    if (!mapped[i]) continue;
    remap[i] = static_cast<std::ptrdiff_t>(out.all.size());
    out.all.push_back(*mapped[i]);
  }
  auto carry = [&](const std::vector<std::size_t>& from, std::vector<std::size_t>& to) {
    for (std::size_t i : from) {
      if (remap[i] >= 0) to.push_back(static_cast<std::size_t>(remap[i]));
    }
  };
  carry(labels.main_set, out.main_set);
  carry(labels.pim_set, out.pim_set);
  carry(labels.sd_interval, out.sd_interval);
  return out;
}

void write_pseudo_labels_json(const std::filesystem::path& path,
                              const std::vector<PseudoLabelSet>& sets,
                              const std::vector<Category>& categories) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& set : sets) {
    std::vector<std::string> part(set.all.size(), "below");
    for (std::size_t i : set.pim_set) part[i] = "pim_only";
    for (std::size_t i : set.sd_interval) part[i] = "sd";
    for (std::size_t i : set.main_set) part[i] = "main";
    for (std::size_t i = 0; i < set.all.size(); ++i) {
      const Box& b = set.all[i];
      out.push_back({{"image_id", set.source_image_id},
                     {"category_id", categories.at(static_cast<std::size_t>(b.category())).coco_id},
                     {"bbox", {b.x(), b.y(), b.w(), b.h()}},
                     {"score", b.score().value_or(0.0)},
                     {"partition", part[i]}});
    }
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << out.dump(1) << '\n';
}

}  // namespace lsm
