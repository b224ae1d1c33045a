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

#include "lsm/tensor.hpp"

namespace lsm {

/// Reads an 8-bit RGB image (PNG or binary PPM) into [3, H, W] / 255.
Tensor read_image(const std::filesystem::path& path);

/// Writes [3, H, W] in [0, 1] as 8-bit RGB. Format follows the extension
/// (.png or .ppm).
void write_image(const std::filesystem::path& path, const Tensor& image);

}  // namespace lsm
