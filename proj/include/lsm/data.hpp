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
#include <initializer_list>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsm/geometry.hpp"
#include "lsm/tensor.hpp"

namespace lsm {

/// Malformed input file (unreadable or not valid JSON).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed JSON that violates the COCO detection schema.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { kLabeled, kUnlabeled };

struct Category {
  int coco_id = 0;
  std::string name;
};

/// One image with its annotations. `annotations` use contiguous category
/// indices (position in the owning dataset's category list).
struct DetectionSample {
  std::int64_t id = 0;
  Tensor image;  // [3, H, W], intensities in [0, 1]
  std::vector<Box> annotations;
  Split split = Split::kLabeled;
  std::string file_name;
  std::vector<std::string> lineage;
  // Image extent for samples loaded without pixels.
  int declared_width = 0;
  int declared_height = 0;

  int height() const { return image.empty() ? declared_height : image.dim(1); }
  int width() const { return image.empty() ? declared_width : image.dim(2); }
};

// --- synthetic shapes ------------------------------------------------------

enum ShapeKind : int { kCircle = 0, kSquare = 1, kTriangle = 2 };

/// circle, square, triangle with COCO ids 1, 2, 3.
const std::vector<Category>& shapes_categories();

/// Smallest image edge that can host a large-bin (>= 96x96) shape.
int min_shapes_image_size();

/// Deterministic synthetic dataset: 1-6 colored shapes per image on a
/// textured background, boxes equal to the ideal shape extents. Sample ids
/// are 1..n.
std::vector<DetectionSample> generate_shapes_dataset(int n_images, int image_size,
                                                     std::uint64_t seed);

// --- COCO JSON -------------------------------------------------------------

struct CocoDataset {
  std::vector<Category> categories;
  std::vector<DetectionSample> samples;
  std::size_t dropped_annotations = 0;

  std::optional<int> category_index(int coco_id) const;
};

/// Reads a COCO detection file. With an empty `images_dir` the samples carry
/// no pixels (image tensor empty); otherwise each `file_name` is loaded from
/// `images_dir`. Annotations carrying a "score" keep it.
CocoDataset load_coco_json(const std::filesystem::path& images_dir,
                           const std::filesystem::path& annotations);

/// Reads detections either as a COCO result list
/// [{image_id, category_id, bbox, score}] or as a full COCO file whose
/// annotations carry scores. Category ids are mapped through `categories`.
std::unordered_map<std::int64_t, std::vector<Box>> load_coco_predictions(
    const std::filesystem::path& path, const std::vector<Category>& categories);

/// Writes the COCO detection schema. Image sizes come from the sample
/// tensors (or `fallback_size` when a sample has no pixels).
void write_coco_json(const std::filesystem::path& path,
                     const std::vector<Category>& categories,
                     const std::vector<DetectionSample>& samples,
                     int fallback_size = 0);

// --- splits ----------------------------------------------------------------

struct SplitSpec {
  double labeled_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Ground truth of unlabeled samples, kept apart from the training samples.
class HeldOutTruths {
 public:
  void put(std::int64_t id, std::vector<Box> boxes);
  /// Evaluation-only access.
  const std::vector<Box>& truths_for_evaluation(std::int64_t id) const;
  bool contains(std::int64_t id) const { return truths_.count(id) > 0; }
  std::size_t size() const { return truths_.size(); }

 private:
  std::unordered_map<std::int64_t, std::vector<Box>> truths_;
};

struct SplitResult {
  std::vector<DetectionSample> labeled;
  std::vector<DetectionSample> unlabeled;  // annotations withheld
  HeldOutTruths held_out;
};

SplitResult split_labeled_unlabeled(std::vector<DetectionSample> samples,
                                    const SplitSpec& spec);

// --- augmentation ----------------------------------------------------------

enum class AugmentationKind { kWeak, kStrong };

/// Ranges the random recipes are drawn from.
struct AugmentationSettings {
  double resize_min = 0.8;
  double resize_max = 1.2;
  double flip_probability = 0.5;
  double jitter = 0.10;        // multiplicative, per channel, +/-
  double noise_sigma = 0.03;
  double crop_min_keep = 0.6;  // fraction of each side retained
  double crop_max_keep = 1.0;
};

/// Concrete augmentation with all random choices resolved.
/// Weak parameters: resize_scale, flip (0/1).
/// Strong parameters: jitter_r/g/b (multipliers), noise_sigma, and
/// crop_x/crop_y/crop_w/crop_h as fractions of the input image.
struct AugmentationRecipe {
  AugmentationKind kind = AugmentationKind::kWeak;
  std::uint64_t seed = 0;
  std::map<std::string, double> parameters;

  static AugmentationRecipe identity(AugmentationKind kind);
  static AugmentationRecipe sample(AugmentationKind kind, std::uint64_t seed,
                                   const AugmentationSettings& settings = {});
  void validate() const;
};

/// Maps boxes through the recipe's geometric steps for an input of the given
/// size. Entries are empty for boxes dropped by cropping (visible area below
/// 25% of the pre-crop area).
std::vector<std::optional<Box>> transform_boxes(const std::vector<Box>& boxes,
                                                const AugmentationRecipe& recipe,
                                                int image_w, int image_h);

/// Output image size after the recipe's geometric steps, as (w, h).
std::pair<int, int> transformed_size(const AugmentationRecipe& recipe, int image_w,
                                     int image_h);

inline constexpr double kCropMinVisibleFraction = 0.25;

DetectionSample apply_augmentation(const DetectionSample& sample,
                                   const AugmentationRecipe& recipe);

/// Bilinear (half-pixel) resize of [C, H, W] to [C, out_h, out_w].
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

/// Smallest spatial edge the backbone accepts.
inline constexpr int kMinBackboneInput = 32;

/// Resizes to ceil(ratio * dim) on both axes.
Tensor downsample_image(const Tensor& image, double ratio = 0.5);

/// Derives an independent stream seed from a base seed and a tag sequence.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

}  // namespace lsm
