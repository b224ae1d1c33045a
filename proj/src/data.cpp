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

#include "lsm/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "lsm/image_io.hpp"
#include "lsm/random.hpp"

namespace lsm {
namespace {

using json = nlohmann::json;

constexpr double kMaxShapeFraction = 0.9;
constexpr int kMinSmallSide = 10;
constexpr double kPlacementOverlap = 0.25;
constexpr int kPlacementTries = 50;

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  std::array<double, 3> rgb{};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

bool shape_covers(ShapeKind kind, int x, int y, int s, double px, double py) {
  switch (kind) {
    case kSquare:
      return px >= x && px < x + s && py >= y && py < y + s;
    case kCircle: {
      const double r = s / 2.0;
      const double dx = px - (x + r), dy = py - (y + r);
      return dx * dx + dy * dy <= r * r;
    }
    case kTriangle: {
      if (py < y || py > y + s) return false;
      return std::abs(px - (x + s / 2.0)) <= (py - y) / 2.0;
    }
  }
  return false;
}

DetectionSample generate_one(std::int64_t id, int size, std::uint64_t seed) {
  Rng rng(seed);
  DetectionSample sample;
  sample.id = id;
  sample.file_name = "shapes_" + std::to_string(id) + ".png";
  sample.image = Tensor({3, size, size});

  // Background: tinted gray, two sinusoidal ripples and pixel noise.
  const double base = rng.uniform(0.25, 0.45);
  std::array<double, 3> tint{};
  for (double& t : tint) t = base + rng.uniform(-0.05, 0.05);
  struct Wave { double fx, fy, phase, amp; };
  std::array<Wave, 2> waves{};
  for (auto& w : waves) {
    w = {rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3), rng.uniform(0, 6.283), 0.04};
  }
  for (int yy = 0; yy < size; ++yy) {
    for (int xx = 0; xx < size; ++xx) {
      double tex = 0;
      for (const auto& w : waves) tex += w.amp * std::sin(w.fx * xx + w.fy * yy + w.phase);
      for (int c = 0; c < 3; ++c) {
        sample.image.at(c, yy, xx) =
            std::clamp(tint[c] + tex + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      }
    }
  }

  const int max_side = static_cast<int>(std::floor(kMaxShapeFraction * size));
  const int n_shapes = rng.uniform_int(1, 6);
  struct Plan { int side; ShapeKind kind; };
  std::vector<Plan> plans;
  bool has_large = false;
  for (int i = 0; i < n_shapes; ++i) {
    const double u = rng.uniform();
    int side;
    if (u < 0.45) {
      side = rng.uniform_int(kMinSmallSide, 31);
    } else if (u < 0.85 || has_large) {
      side = rng.uniform_int(32, std::min(95, max_side));
    } else {
      side = rng.uniform_int(96, max_side);
      has_large = true;
    }
    plans.push_back({side, static_cast<ShapeKind>(rng.uniform_int(0, 2))});
  }
  std::stable_sort(plans.begin(), plans.end(),
                   [](const Plan& a, const Plan& b) { return a.side > b.side; });

  std::vector<Rect> placed;
  for (const auto& plan : plans) {
    const int s = plan.side;
    bool ok = false;
    int x = 0, y = 0;
    for (int attempt = 0; attempt < kPlacementTries && !ok; ++attempt) {
      x = rng.uniform_int(0, size - s);
      y = rng.uniform_int(0, size - s);
      const Rect r{double(x), double(y), double(x + s), double(y + s)};
      ok = true;
      for (const auto& p : placed) {
        const double iw = std::min(r.x2, p.x2) - std::max(r.x1, p.x1);
        const double ih = std::min(r.y2, p.y2) - std::max(r.y1, p.y1);
        if (iw > 0 && ih > 0 &&
            iw * ih > kPlacementOverlap * std::min(r.area(), p.area())) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    placed.push_back({double(x), double(y), double(x + s), double(y + s)});

    const auto color = hsv_to_rgb(rng.uniform(), rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0));
    for (int yy = y; yy < y + s; ++yy) {
      for (int xx = x; xx < x + s; ++xx) {
        if (!shape_covers(plan.kind, x, y, s, xx + 0.5, yy + 0.5)) continue;
        for (int c = 0; c < 3; ++c) sample.image.at(c, yy, xx) = color[c];
      }
    }
    sample.annotations.emplace_back(x, y, s, s, static_cast<int>(plan.kind));
  }
  sample.lineage.push_back("shapes(seed=" + std::to_string(seed) + ")");
  return sample;
}

double require_number(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw SchemaError(where + ": missing numeric field \"" + key + "\"");
  }
  return j.at(key).get<double>();
}

std::int64_t require_id(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number_integer()) {
    throw SchemaError(where + ": missing integer field \"" + key + "\"");
  }
  return j.at(key).get<std::int64_t>();
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<Category> parse_categories(const json& root, const std::string& where) {
  if (!root.contains("categories") || !root.at("categories").is_array()) {
    throw SchemaError(where + ": missing \"categories\" array");
  }
  std::vector<Category> cats;
  for (const auto& c : root.at("categories")) {
    Category cat;
    cat.coco_id = static_cast<int>(require_id(c, "id", where + ": category"));
    cat.name = c.value("name", std::to_string(cat.coco_id));
    cats.push_back(cat);
  }
  std::sort(cats.begin(), cats.end(),
            [](const Category& a, const Category& b) { return a.coco_id < b.coco_id; });
  return cats;
}

std::optional<int> lookup_category(const std::vector<Category>& cats, int coco_id) {
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (cats[i].coco_id == coco_id) return static_cast<int>(i);
  }
  return std::nullopt;
}

struct ParsedAnnotation {
  std::int64_t image_id;
  std::optional<Box> box;  // empty when dropped for non-positive extent
};

ParsedAnnotation parse_annotation(const json& a, const std::vector<Category>& cats,
                                  const std::string& where) {
  const std::string ann_where =
      where + ": annotation " +
      (a.contains("id") ? a.at("id").dump() : std::string("<no id>"));
  const std::int64_t image_id = require_id(a, "image_id", ann_where);
  const int coco_cat = static_cast<int>(require_id(a, "category_id", ann_where));
  const auto cat = lookup_category(cats, coco_cat);
  if (!cat) {
    throw SchemaError(ann_where + " references unknown category_id " +
                      std::to_string(coco_cat));
  }
  if (!a.contains("bbox") || !a.at("bbox").is_array() || a.at("bbox").size() != 4) {
    throw SchemaError(ann_where + ": bbox must be an array of 4 numbers");
  }
  std::array<double, 4> bb{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!a.at("bbox")[i].is_number()) {
      throw SchemaError(ann_where + ": bbox must be an array of 4 numbers");
    }
    bb[i] = a.at("bbox")[i].get<double>();
  }
  std::optional<double> score;
  if (a.contains("score")) {
    if (!a.at("score").is_number()) throw SchemaError(ann_where + ": score must be numeric");
    score = std::clamp(a.at("score").get<double>(), 0.0, 1.0);
  }
  if (!(bb[2] > 0) || !(bb[3] > 0)) return {image_id, std::nullopt};
  return {image_id, Box(bb[0], bb[1], bb[2], bb[3], *cat, score)};
}

std::optional<Box> clip_to_image(const Box& b, int w, int h) {
  if (w <= 0 || h <= 0) return b;
  const Rect r = Rect::of(b).clipped(w, h);
  if (r.width() <= 0 || r.height() <= 0) return std::nullopt;
  return Box(r.x1, r.y1, r.width(), r.height(), b.category(), b.score());
}

double param(const AugmentationRecipe& r, const char* key, double fallback) {
  const auto it = r.parameters.find(key);
  return it == r.parameters.end() ? fallback : it->second;
}

struct CropWindow {
  int x0, y0, w, h;
};

CropWindow crop_window(const AugmentationRecipe& r, int w, int h) {
  const int x0 = static_cast<int>(std::lround(param(r, "crop_x", 0.0) * w));
  const int y0 = static_cast<int>(std::lround(param(r, "crop_y", 0.0) * h));
  int cw = static_cast<int>(std::lround(param(r, "crop_w", 1.0) * w));
  int ch = static_cast<int>(std::lround(param(r, "crop_h", 1.0) * h));
  cw = std::min(cw, w - x0);
  ch = std::min(ch, h - y0);
  if (cw < 1 || ch < 1) {
    throw std::invalid_argument("crop would produce an empty image (" + std::to_string(cw) +
                                "x" + std::to_string(ch) + ")");
  }
  return {x0, y0, cw, ch};
}

std::pair<int, int> resized_dims(const AugmentationRecipe& r, int w, int h) {
  const double s = param(r, "resize_scale", 1.0);
  return {std::max(1, static_cast<int>(std::lround(s * w))),
          std::max(1, static_cast<int>(std::lround(s * h)))};
}

std::string recipe_tag(const AugmentationRecipe& r) {
  std::ostringstream os;
  os << (r.kind == AugmentationKind::kWeak ? "weak" : "strong") << "(seed=" << r.seed;
  for (const auto& [k, v] : r.parameters) os << ',' << k << '=' << v;
  os << ')';
  return os.str();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  for (std::uint64_t t : tags) h = mix(h ^ mix(t));
  return h;
}

const std::vector<Category>& shapes_categories() {
  static const std::vector<Category> cats{{1, "circle"}, {2, "square"}, {3, "triangle"}};
  return cats;
}

int min_shapes_image_size() {
  // Smallest size whose largest allowed side still reaches 96 px.
  int s = 64;
  while (static_cast<int>(std::floor(kMaxShapeFraction * s)) < 96) ++s;
  return s;
}

std::vector<DetectionSample> generate_shapes_dataset(int n_images, int image_size,
                                                     std::uint64_t seed) {
  if (n_images < 1) throw std::invalid_argument("n_images must be >= 1");
  if (image_size < min_shapes_image_size()) {
    throw std::invalid_argument("image_size " + std::to_string(image_size) +
                                " cannot host a large-bin shape; need >= " +
                                std::to_string(min_shapes_image_size()));
  }
  std::vector<DetectionSample> out;
  out.reserve(static_cast<std::size_t>(n_images));
  for (int i = 0; i < n_images; ++i) {
    out.push_back(generate_one(i + 1, image_size, derive_seed(seed, {std::uint64_t(i)})));
  }
  return out;
}

std::optional<int> CocoDataset::category_index(int coco_id) const {
  return lookup_category(categories, coco_id);
}

CocoDataset load_coco_json(const std::filesystem::path& images_dir,
                           const std::filesystem::path& annotations) {
  const json root = read_json_file(annotations);
  const std::string where = annotations.string();
  if (!root.is_object()) throw SchemaError(where + ": top level must be an object");
  if (!root.contains("images") || !root.at("images").is_array()) {
    throw SchemaError(where + ": missing \"images\" array");
  }
  CocoDataset ds;
  ds.categories = parse_categories(root, where);

  std::unordered_map<std::int64_t, std::size_t> by_id;
  for (const auto& im : root.at("images")) {
    DetectionSample s;
    s.id = require_id(im, "id", where + ": image");
    const std::string im_where = where + ": image " + std::to_string(s.id);
    s.declared_width = static_cast<int>(require_number(im, "width", im_where));
    s.declared_height = static_cast<int>(require_number(im, "height", im_where));
    s.file_name = im.value("file_name", "");
    if (!images_dir.empty()) {
      s.image = read_image(images_dir / s.file_name);
      if (s.image.dim(1) != s.declared_height || s.image.dim(2) != s.declared_width) {
        throw SchemaError(im_where + ": declared size differs from " + s.file_name);
      }
    }
    if (!by_id.emplace(s.id, ds.samples.size()).second) {
      throw SchemaError(where + ": duplicate image id " + std::to_string(s.id));
    }
    ds.samples.push_back(std::move(s));
  }

  if (root.contains("annotations")) {
    if (!root.at("annotations").is_array()) {
      throw SchemaError(where + ": \"annotations\" must be an array");
    }
    for (const auto& a : root.at("annotations")) {
      const auto parsed = parse_annotation(a, ds.categories, where);
      const auto it = by_id.find(parsed.image_id);
      if (it == by_id.end()) {
        throw SchemaError(where + ": annotation " +
                          (a.contains("id") ? a.at("id").dump() : std::string("<no id>")) +
                          " references unknown image_id " + std::to_string(parsed.image_id));
      }
      DetectionSample& s = ds.samples[it->second];
      std::optional<Box> box;
      if (parsed.box) box = clip_to_image(*parsed.box, s.width(), s.height());
      if (!box) {
        ++ds.dropped_annotations;
        continue;
      }
      s.annotations.push_back(*box);
    }
  }
  return ds;
}

std::unordered_map<std::int64_t, std::vector<Box>> load_coco_predictions(
    const std::filesystem::path& path, const std::vector<Category>& categories) {
  const json root = read_json_file(path);
  const std::string where = path.string();
  const json* list = nullptr;
  if (root.is_array()) {
    list = &root;
  } else if (root.is_object() && root.contains("annotations") &&
             root.at("annotations").is_array()) {
    list = &root.at("annotations");
  } else {
    throw SchemaError(where + ": expected a result list or an object with \"annotations\"");
  }
  std::unordered_map<std::int64_t, std::vector<Box>> out;
  for (const auto& a : *list) {
    const auto parsed = parse_annotation(a, categories, where);
    if (parsed.box) out[parsed.image_id].push_back(*parsed.box);
  }
  return out;
}

void write_coco_json(const std::filesystem::path& path,
                     const std::vector<Category>& categories,
                     const std::vector<DetectionSample>& samples, int fallback_size) {
  json root;
  root["images"] = json::array();
  root["annotations"] = json::array();
  root["categories"] = json::array();
  for (const auto& c : categories) root["categories"].push_back({{"id", c.coco_id}, {"name", c.name}});
  std::int64_t ann_id = 1;
  for (const auto& s : samples) {
    const int w = s.width() > 0 ? s.width() : fallback_size;
    const int h = s.height() > 0 ? s.height() : fallback_size;
    root["images"].push_back(
        {{"id", s.id}, {"width", w}, {"height", h}, {"file_name", s.file_name}});
    for (const auto& b : s.annotations) {
      if (b.category() < 0 || b.category() >= static_cast<int>(categories.size())) {
        throw std::out_of_range("annotation category index outside category list");
      }
      json a{{"id", ann_id++},
             {"image_id", s.id},
             {"category_id", categories[static_cast<std::size_t>(b.category())].coco_id},
             {"bbox", {b.x(), b.y(), b.w(), b.h()}},
             {"area", b.area()},
             {"iscrowd", 0}};
      if (b.score()) a["score"] = *b.score();
      root["annotations"].push_back(std::move(a));
    }
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << root.dump(1) << '\n';
}

void HeldOutTruths::put(std::int64_t id, std::vector<Box> boxes) {
  truths_[id] = std::move(boxes);
}

const std::vector<Box>& HeldOutTruths::truths_for_evaluation(std::int64_t id) const {
  const auto it = truths_.find(id);
  if (it == truths_.end()) {
    throw std::out_of_range("no held-out truths for sample " + std::to_string(id));
  }
  return it->second;
}

SplitResult split_labeled_unlabeled(std::vector<DetectionSample> samples,
                                    const SplitSpec& spec) {
  if (samples.empty()) throw std::invalid_argument("cannot split an empty sample sequence");
  if (!(spec.labeled_fraction > 0.0 && spec.labeled_fraction <= 1.0)) {
    throw std::invalid_argument("labeled_fraction must lie in (0, 1]");
  }
  std::sort(samples.begin(), samples.end(),
            [](const DetectionSample& a, const DetectionSample& b) { return a.id < b.id; });
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(order.begin(), order.end());
  const auto n_labeled = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::ceil(spec.labeled_fraction * static_cast<double>(samples.size()) - 1e-9)));

  std::vector<bool> is_labeled(samples.size(), false);
  for (std::size_t i = 0; i < n_labeled; ++i) is_labeled[order[i]] = true;

  SplitResult result;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    DetectionSample& s = samples[i];
    if (is_labeled[i]) {
      s.split = Split::kLabeled;
      result.labeled.push_back(std::move(s));
    } else {
      s.split = Split::kUnlabeled;
      result.held_out.put(s.id, std::move(s.annotations));
      s.annotations.clear();
      result.unlabeled.push_back(std::move(s));
    }
  }
  return result;
}

AugmentationRecipe AugmentationRecipe::identity(AugmentationKind kind) {
  AugmentationRecipe r;
  r.kind = kind;
  if (kind == AugmentationKind::kWeak) {
    r.parameters = {{"resize_scale", 1.0}, {"flip", 0.0}};
  } else {
    r.parameters = {{"jitter_r", 1.0}, {"jitter_g", 1.0}, {"jitter_b", 1.0},
                    {"noise_sigma", 0.0}, {"crop_x", 0.0}, {"crop_y", 0.0},
                    {"crop_w", 1.0},      {"crop_h", 1.0}};
  }
  return r;
}

AugmentationRecipe AugmentationRecipe::sample(AugmentationKind kind, std::uint64_t seed,
                                              const AugmentationSettings& st) {
  Rng rng(seed);
  AugmentationRecipe r;
  r.kind = kind;
  r.seed = seed;
  if (kind == AugmentationKind::kWeak) {
    r.parameters["resize_scale"] = rng.uniform(st.resize_min, st.resize_max);
    r.parameters["flip"] = rng.bernoulli(st.flip_probability) ? 1.0 : 0.0;
  } else {
    r.parameters["jitter_r"] = 1.0 + rng.uniform(-st.jitter, st.jitter);
    r.parameters["jitter_g"] = 1.0 + rng.uniform(-st.jitter, st.jitter);
    r.parameters["jitter_b"] = 1.0 + rng.uniform(-st.jitter, st.jitter);
    r.parameters["noise_sigma"] = st.noise_sigma;
    const double cw = rng.uniform(st.crop_min_keep, st.crop_max_keep);
    const double ch = rng.uniform(st.crop_min_keep, st.crop_max_keep);
    r.parameters["crop_w"] = cw;
    r.parameters["crop_h"] = ch;
    r.parameters["crop_x"] = rng.uniform(0.0, 1.0 - cw);
    r.parameters["crop_y"] = rng.uniform(0.0, 1.0 - ch);
  }
  return r;
}

void AugmentationRecipe::validate() const {
  static const std::vector<std::string> weak_keys{"resize_scale", "flip"};
  static const std::vector<std::string> strong_keys{
      "jitter_r", "jitter_g", "jitter_b", "noise_sigma", "crop_x", "crop_y", "crop_w", "crop_h"};
  const auto& allowed = kind == AugmentationKind::kWeak ? weak_keys : strong_keys;
  for (const auto& [k, v] : parameters) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw std::invalid_argument("augmentation parameter \"" + k + "\" not allowed in a " +
                                  (kind == AugmentationKind::kWeak ? "weak" : "strong") +
                                  " recipe");
    }
    if (!std::isfinite(v)) throw std::invalid_argument("augmentation parameter " + k + " not finite");
  }
  if (kind == AugmentationKind::kWeak) {
    if (!(param(*this, "resize_scale", 1.0) > 0)) {
      throw std::invalid_argument("resize_scale must be positive");
    }
    const double f = param(*this, "flip", 0.0);
    if (f != 0.0 && f != 1.0) throw std::invalid_argument("flip must be 0 or 1");
  } else {
    for (const char* k : {"jitter_r", "jitter_g", "jitter_b"}) {
      if (!(param(*this, k, 1.0) > 0)) throw std::invalid_argument(std::string(k) + " must be positive");
    }
    if (param(*this, "noise_sigma", 0.0) < 0) throw std::invalid_argument("noise_sigma must be >= 0");
    const double cx = param(*this, "crop_x", 0), cy = param(*this, "crop_y", 0);
    const double cw = param(*this, "crop_w", 1), ch = param(*this, "crop_h", 1);
    if (cx < 0 || cy < 0 || !(cw > 0) || !(ch > 0) || cx + cw > 1 + 1e-9 || cy + ch > 1 + 1e-9) {
      throw std::invalid_argument("crop window must lie inside the unit square with positive size");
    }
  }
}

std::pair<int, int> transformed_size(const AugmentationRecipe& recipe, int image_w,
                                     int image_h) {
  if (recipe.kind == AugmentationKind::kWeak) return resized_dims(recipe, image_w, image_h);
  const auto win = crop_window(recipe, image_w, image_h);
  return {win.w, win.h};
}

std::vector<std::optional<Box>> transform_boxes(const std::vector<Box>& boxes,
                                                const AugmentationRecipe& recipe,
                                                int image_w, int image_h) {
  recipe.validate();
  std::vector<std::optional<Box>> out;
  out.reserve(boxes.size());
  if (recipe.kind == AugmentationKind::kWeak) {
    const auto [nw, nh] = resized_dims(recipe, image_w, image_h);
    const double sx = static_cast<double>(nw) / image_w;
    const double sy = static_cast<double>(nh) / image_h;
    const bool flip = param(recipe, "flip", 0.0) == 1.0;
    for (const auto& b : boxes) {
      double x = b.x() * sx, w = b.w() * sx;
      if (flip) x = nw - x - w;
      out.emplace_back(Box(x, b.y() * sy, w, b.h() * sy, b.category(), b.score()));
    }
    return out;
  }
  const auto win = crop_window(recipe, image_w, image_h);
  for (const auto& b : boxes) {
    const Rect r = Rect{b.x() - win.x0, b.y() - win.y0, b.x2() - win.x0, b.y2() - win.y0}
                       .clipped(win.w, win.h);
    if (r.area() < kCropMinVisibleFraction * b.area() || r.width() <= 0 || r.height() <= 0) {
      out.emplace_back(std::nullopt);
      continue;
    }
    out.emplace_back(Box(r.x1, r.y1, r.width(), r.height(), b.category(), b.score()));
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  std::vector<int> x0s(out_w), x1s(out_w);
  std::vector<double> lxs(out_w);
  for (int x = 0; x < out_w; ++x) {
    const double src = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
    x0s[x] = static_cast<int>(src);
    x1s[x] = std::min(x0s[x] + 1, w - 1);
    lxs[x] = src - x0s[x];
  }
  for (int y = 0; y < out_h; ++y) {
    const double src = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(src), y1 = std::min(y0 + 1, h - 1);
    const double ly = src - y0;
    for (int ch = 0; ch < c; ++ch) {
      for (int x = 0; x < out_w; ++x) {
        const double top = image.at(ch, y0, x0s[x]) * (1 - lxs[x]) + image.at(ch, y0, x1s[x]) * lxs[x];
        const double bot = image.at(ch, y1, x0s[x]) * (1 - lxs[x]) + image.at(ch, y1, x1s[x]) * lxs[x];
        out.at(ch, y, x) = top * (1 - ly) + bot * ly;
      }
    }
  }
  return out;
}

Tensor downsample_image(const Tensor& image, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("downsample ratio must lie in (0, 1]");
  }
  const int h = image.dim(1), w = image.dim(2);
  const int oh = static_cast<int>(std::ceil(ratio * h - 1e-9));
  const int ow = static_cast<int>(std::ceil(ratio * w - 1e-9));
  if (oh < kMinBackboneInput || ow < kMinBackboneInput) {
    throw std::invalid_argument("downsampling " + std::to_string(w) + "x" + std::to_string(h) +
                                " by " + std::to_string(ratio) + " gives " + std::to_string(ow) +
                                "x" + std::to_string(oh) + ", below the backbone minimum of " +
                                std::to_string(kMinBackboneInput));
  }
  return resize_bilinear(image, oh, ow);
}

DetectionSample apply_augmentation(const DetectionSample& sample,
                                   const AugmentationRecipe& recipe) {
  recipe.validate();
  DetectionSample out;
  out.id = sample.id;
  out.split = sample.split;
  out.file_name = sample.file_name;
  out.lineage = sample.lineage;
  out.lineage.push_back(recipe_tag(recipe));

  const int w = sample.width(), h = sample.height();
  if (recipe.kind == AugmentationKind::kWeak) {
    const auto [nw, nh] = resized_dims(recipe, w, h);
    Tensor img = (nw == w && nh == h) ? sample.image : resize_bilinear(sample.image, nh, nw);
    if (param(recipe, "flip", 0.0) == 1.0) {
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < nh; ++y)
          for (int x = 0; x < nw / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, nw - 1 - x));
    }
    out.image = std::move(img);
  } else {
    Tensor img = sample.image;
    const std::array<double, 3> jitter{param(recipe, "jitter_r", 1.0),
                                       param(recipe, "jitter_g", 1.0),
                                       param(recipe, "jitter_b", 1.0)};
    const double sigma = param(recipe, "noise_sigma", 0.0);
    Rng rng(derive_seed(recipe.seed, {0x6e6f697365ULL}));
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        double& v = img[c * plane + i];
        v *= jitter[c];
        if (sigma > 0) v += sigma * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
      }
    }
    const auto win = crop_window(recipe, w, h);
    if (win.x0 == 0 && win.y0 == 0 && win.w == w && win.h == h) {
      out.image = std::move(img);
    } else {
      Tensor cropped({3, win.h, win.w});
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < win.h; ++y)
          for (int x = 0; x < win.w; ++x) cropped.at(c, y, x) = img.at(c, y + win.y0, x + win.x0);
      out.image = std::move(cropped);
    }
  }
  for (auto& b : transform_boxes(sample.annotations, recipe, w, h)) {
    if (b) out.annotations.push_back(*b);
  }
  return out;
}

}  // namespace lsm
