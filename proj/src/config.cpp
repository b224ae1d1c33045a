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

#include "lsm/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace lsm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest text that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    char* end = nullptr;
    value = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
      throw std::invalid_argument(key + ": expected a number, got '" + text + "'");
    }
  } else {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw std::invalid_argument(key + ": expected an integer, got '" + text + "'");
    }
  }
  return value;
}

bool parse_bool(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument(key + ": expected true/false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& key) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_number<T>(item, key));
  }
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Builders over an accessor returning a reference to the stored value.
template <typename Access>
Field int_field(std::string key, Access access) {
  return {key,
          [access, key](ExperimentConfig& c, const std::string& v) {
            access(c) = parse_number<int>(v, key);
          },
          [access](const ExperimentConfig& c) {
            return std::to_string(access(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Access>
Field u64_field(std::string key, Access access) {
  return {key,
          [access, key](ExperimentConfig& c, const std::string& v) {
            access(c) = parse_number<std::uint64_t>(v, key);
          },
          [access](const ExperimentConfig& c) {
            return std::to_string(access(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Access>
Field double_field(std::string key, Access access) {
  return {key,
          [access, key](ExperimentConfig& c, const std::string& v) {
            access(c) = parse_number<double>(v, key);
          },
          [access](const ExperimentConfig& c) {
            return format_double(access(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Access>
Field bool_field(std::string key, Access access) {
  return {key,
          [access, key](ExperimentConfig& c, const std::string& v) {
            access(c) = parse_bool(v, key);
          },
          [access](const ExperimentConfig& c) {
            return std::string(access(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <typename Access>
Field string_field(std::string key, Access access) {
  return {key, [access](ExperimentConfig& c, const std::string& v) { access(c) = trim(v); },
          [access](const ExperimentConfig& c) {
            return access(const_cast<ExperimentConfig&>(c));
          }};
}

template <typename T, typename Access>
Field list_field(std::string key, Access access) {
  return {key,
          [access, key](ExperimentConfig& c, const std::string& v) {
            access(c) = parse_list<T>(v, key);
          },
          [access](const ExperimentConfig& c) {
            return format_list(access(const_cast<ExperimentConfig&>(c)));
          }};
}

#define LSM_ACCESS(expr) [](ExperimentConfig & c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      string_field("experiment.name", LSM_ACCESS(name)),
      string_field("experiment.output_dir", LSM_ACCESS(output_dir)),

      string_field("data.source", LSM_ACCESS(data.source)),
      int_field("data.num_images", LSM_ACCESS(data.num_images)),
      int_field("data.image_size", LSM_ACCESS(data.image_size)),
      u64_field("data.seed", LSM_ACCESS(data.seed)),
      int_field("data.eval_images", LSM_ACCESS(data.eval_images)),
      u64_field("data.eval_seed", LSM_ACCESS(data.eval_seed)),
      string_field("data.coco_images_dir", LSM_ACCESS(data.coco_images_dir)),
      string_field("data.coco_annotations", LSM_ACCESS(data.coco_annotations)),
      string_field("data.coco_eval_images_dir", LSM_ACCESS(data.coco_eval_images_dir)),
      string_field("data.coco_eval_annotations", LSM_ACCESS(data.coco_eval_annotations)),

      double_field("split.labeled_fraction", LSM_ACCESS(split.labeled_fraction)),
      u64_field("split.seed", LSM_ACCESS(split.seed)),

      int_field("detector.num_classes", LSM_ACCESS(detector.num_classes)),
      list_field<int>("detector.backbone_widths", LSM_ACCESS(detector.backbone_widths)),
      int_field("detector.fpn_channels", LSM_ACCESS(detector.fpn_channels)),
      int_field("detector.head_hidden", LSM_ACCESS(detector.head_hidden)),
      double_field("detector.canonical_scale", LSM_ACCESS(detector.canonical_scale)),
      list_field<int>("detector.pim_levels", LSM_ACCESS(detector.pim_levels)),
      list_field<double>("detector.anchor_scales", LSM_ACCESS(detector.anchor_scales)),
      int_field("detector.rpn_pre_nms", LSM_ACCESS(detector.rpn_pre_nms)),
      double_field("detector.rpn_nms_iou", LSM_ACCESS(detector.rpn_nms_iou)),
      int_field("detector.proposals_train", LSM_ACCESS(detector.proposals_train)),
      int_field("detector.proposals_test", LSM_ACCESS(detector.proposals_test)),
      double_field("detector.box_nms_iou", LSM_ACCESS(detector.box_nms_iou)),

      {"trainer.mode",
       [](ExperimentConfig& c, const std::string& v) { c.trainer.mode = parse_train_mode(trim(v)); },
       [](const ExperimentConfig& c) { return to_string(c.trainer.mode); }},
      int_field("trainer.steps", LSM_ACCESS(trainer.steps)),
      int_field("trainer.burn_in_steps", LSM_ACCESS(trainer.burn_in_steps)),
      double_field("trainer.learning_rate", LSM_ACCESS(trainer.learning_rate)),
      int_field("trainer.warmup_steps", LSM_ACCESS(trainer.warmup_steps)),
      double_field("trainer.momentum", LSM_ACCESS(trainer.momentum)),
      double_field("trainer.weight_decay", LSM_ACCESS(trainer.weight_decay)),
      double_field("trainer.grad_clip", LSM_ACCESS(trainer.grad_clip)),
      double_field("trainer.lambda_u", LSM_ACCESS(trainer.lambda_u)),
      double_field("trainer.lambda_e", LSM_ACCESS(trainer.lambda_e)),
      double_field("trainer.lambda_p", LSM_ACCESS(trainer.lambda_p)),
      double_field("trainer.t", LSM_ACCESS(trainer.thresholds.t)),
      double_field("trainer.alpha", LSM_ACCESS(trainer.thresholds.alpha)),
      int_field("trainer.labeled_batch", LSM_ACCESS(trainer.labeled_batch)),
      int_field("trainer.unlabeled_batch", LSM_ACCESS(trainer.unlabeled_batch)),
      u64_field("trainer.seed", LSM_ACCESS(trainer.seed)),
      bool_field("trainer.unsupervised_regression", LSM_ACCESS(trainer.loss.unsupervised_regression)),
      bool_field("trainer.kl_reverse", LSM_ACCESS(trainer.loss.kl_reverse)),
      bool_field("trainer.distill_per_box", LSM_ACCESS(trainer.loss.distill_per_box)),
      int_field("trainer.roi_batch", LSM_ACCESS(trainer.loss.roi_batch)),
      int_field("trainer.rpn_batch", LSM_ACCESS(trainer.loss.rpn_batch)),

      double_field("augment.resize_min", LSM_ACCESS(trainer.augmentation.resize_min)),
      double_field("augment.resize_max", LSM_ACCESS(trainer.augmentation.resize_max)),
      double_field("augment.flip_probability", LSM_ACCESS(trainer.augmentation.flip_probability)),
      double_field("augment.jitter", LSM_ACCESS(trainer.augmentation.jitter)),
      double_field("augment.noise_sigma", LSM_ACCESS(trainer.augmentation.noise_sigma)),
      double_field("augment.crop_min_keep", LSM_ACCESS(trainer.augmentation.crop_min_keep)),

      int_field("eval.every", LSM_ACCESS(trainer.eval_every)),
      double_field("eval.score_floor", LSM_ACCESS(trainer.eval_score_floor)),
      int_field("checkpoint.every", LSM_ACCESS(trainer.checkpoint_every)),
  };
  return table;
}

#undef LSM_ACCESS

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : "\n  ") + s;
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration:\n  " + join(problems)),
      problems_(std::move(problems)) {}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(trim(key));
  if (!f) throw std::invalid_argument("unknown key '" + trim(key) + "'");
  f->set(*this, value);
}

std::string ExperimentConfig::get(const std::string& key) const {
  const Field* f = find_field(key);
  if (!f) throw std::invalid_argument("unknown key '" + key + "'");
  return f->get(*this);
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override '" + assignment + "' is not key=value");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + "expected key = value");
      continue;
    }
    try {
      cfg.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const std::exception& e) {
      problems.push_back(where + e.what());
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file " + path.string()});
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = parse(ss.str(), path.string());
  }
  std::vector<std::string> problems;
  for (const auto& o : overrides) {
    try {
      cfg.apply_override(o);
    } catch (const std::exception& e) {
      problems.push_back("--override " + o + ": " + e.what());
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

std::vector<std::string> ExperimentConfig::validation_errors() const {
  std::vector<std::string> e;
  if (name.empty()) e.push_back("experiment.name must not be empty");
  if (data.source == "shapes") {
    if (data.num_images < 2) e.push_back("data.num_images must be >= 2");
    if (data.image_size < min_shapes_image_size()) {
      e.push_back("data.image_size must be >= " + std::to_string(min_shapes_image_size()));
    }
    if (data.eval_images < 0) e.push_back("data.eval_images must be >= 0");
    if (detector.num_classes != static_cast<int>(shapes_categories().size())) {
      e.push_back("detector.num_classes must be " +
                  std::to_string(shapes_categories().size()) + " for the shapes dataset");
    }
  } else if (data.source == "coco") {
    if (data.coco_annotations.empty()) e.push_back("data.coco_annotations is required for coco");
    if (data.coco_images_dir.empty()) e.push_back("data.coco_images_dir is required for coco");
  } else {
    e.push_back("data.source must be 'shapes' or 'coco'");
  }
  if (!(split.labeled_fraction > 0 && split.labeled_fraction <= 1)) {
    e.push_back("split.labeled_fraction must lie in (0, 1]");
  }
  try {
    detector.validate();
  } catch (const std::exception& ex) {
    e.push_back(std::string("detector: ") + ex.what());
  }
  for (auto& m : trainer.validation_errors()) e.push_back(std::move(m));
  return e;
}

void ExperimentConfig::validate() const {
  auto errors = validation_errors();
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

std::string ExperimentConfig::dump() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : fields()) j[f.key] = f.get(*this);
  return j;
}

std::filesystem::path ExperimentConfig::resolved_output_dir() const {
  if (!output_dir.empty()) return output_dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) {
    return std::filesystem::path(root) / name;
  }
  return std::filesystem::path("runs") / name;
}

}  // namespace lsm
