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
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsm/data.hpp"
#include "lsm/detector.hpp"
#include "lsm/trainer.hpp"

namespace lsm {

/// Rejected configuration; `problems` lists every offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct DataSpec {
  std::string source = "shapes";  // "shapes" or "coco"
  int num_images = 1000;
  int image_size = 128;
  std::uint64_t seed = 7;
  int eval_images = 100;
  std::uint64_t eval_seed = 1007;
  std::string coco_images_dir;
  std::string coco_annotations;
  std::string coco_eval_images_dir;
  std::string coco_eval_annotations;
};

/// Everything a run needs. Text form: one `section.key = value` per line,
/// `#` comments, lists comma-separated.
struct ExperimentConfig {
  std::string name = "lsm";
  std::string output_dir;  // empty: $LSM_OUTPUT_ROOT/<name>, else runs/<name>
  DataSpec data;
  SplitSpec split{0.1, 1};
  DetectorConfig detector;
  TrainerConfig trainer;

  /// Parses `text`; unknown keys and malformed values are all reported.
  static ExperimentConfig parse(const std::string& text, const std::string& origin = "<config>");
  /// Reads `path` (if non-empty), then applies `key=value` overrides.
  static ExperimentConfig load(const std::filesystem::path& path,
                               const std::vector<std::string>& overrides = {});

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void apply_override(const std::string& assignment);
  static const std::vector<std::string>& keys();

  std::vector<std::string> validation_errors() const;
  /// Throws ConfigError naming every violated field.
  void validate() const;

  /// Every key with its resolved value, in canonical order; parses back to
  /// an identical configuration.
  std::string dump() const;
  nlohmann::json to_json() const;

  std::filesystem::path resolved_output_dir() const;
};

inline constexpr const char* kOutputRootEnv = "LSM_OUTPUT_ROOT";
inline constexpr const char* kResolvedConfigName = "resolved.cfg";

}  // namespace lsm
