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

#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "lsm/detector.hpp"
#include "lsm/trainer.hpp"

namespace lsm {

inline constexpr char kCheckpointMagic[] = "LSMCKPT1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json detector_config_to_json(const DetectorConfig& config);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

/// Magic, u64 header length, JSON header (scalars, detector config, `extra`,
/// parameter table), then little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const nlohmann::json& extra = nlohmann::json::object());

struct Checkpoint {
  TrainState state;
  nlohmann::json extra;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lsm
