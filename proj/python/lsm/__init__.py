# Copyright 2026 The LSM Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Low-confidence samples mining for semi-supervised object detection."""

from ._lsm import (
    Box,
    BudgetError,
    CheckpointError,
    ConfigError,
    analyze,
    area_bin,
    default_config,
    evaluate,
    evaluate_checkpoint,
    generate_shapes,
    iou,
    nms,
    partition_scores,
    resolve_config,
    train,
)

__all__ = [
    "Box",
    "BudgetError",
    "CheckpointError",
    "ConfigError",
    "analyze",
    "area_bin",
    "default_config",
    "evaluate",
    "evaluate_checkpoint",
    "generate_shapes",
    "iou",
    "nms",
    "partition_scores",
    "resolve_config",
    "train",
]
