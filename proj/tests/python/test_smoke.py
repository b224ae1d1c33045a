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

import json
import math
import os

import pytest

import lsm


def test_iou_of_half_overlap():
    a = lsm.Box(0, 0, 10, 10)
    b = lsm.Box(5, 0, 10, 10)
    assert lsm.iou(a, b) == pytest.approx(50 / 150)


def test_box_rejects_bad_extent():
    with pytest.raises(ValueError):
        lsm.Box(0, 0, -1, 10)


def test_area_bins():
    assert lsm.area_bin(lsm.Box(0, 0, 10, 10)) == "small"
    assert lsm.area_bin(lsm.Box(0, 0, 40, 40)) == "medium"
    assert lsm.area_bin(lsm.Box(0, 0, 100, 100)) == "large"


def test_nms_keeps_best_of_overlapping_pair():
    boxes = [
        lsm.Box(0, 0, 10, 10, 0, 0.6),
        lsm.Box(1, 0, 10, 10, 0, 0.9),
        lsm.Box(50, 50, 10, 10, 0, 0.3),
    ]
    assert lsm.nms(boxes, 0.5) == [1, 2]


def test_partition_is_strict():
    sets = lsm.partition_scores([0.9, 0.7, 0.6, 0.5, 0.3], t=0.7, alpha=0.5)
    assert sets == {"main": [0], "pim": [0, 1, 2], "sd": [2]}


def test_partition_rejects_alpha_above_t():
    with pytest.raises(ValueError):
        lsm.partition_scores([0.5], t=0.5, alpha=0.6)


def test_perfect_predictions_score_one():
    truths = [[lsm.Box(10, 10, 20, 20, 1)], [lsm.Box(5, 5, 40, 30, 0)]]
    preds = [[lsm.Box(b.x, b.y, b.w, b.h, b.category, 0.9) for b in img] for img in truths]
    result = lsm.evaluate(preds, truths)
    assert result["ap50"] == pytest.approx(1.0)
    assert result["ap50_95"] == pytest.approx(1.0)
    assert result["avg_recall"] == pytest.approx(1.0)


def test_shapes_are_deterministic():
    a = lsm.generate_shapes(3, 128, 5)
    b = lsm.generate_shapes(3, 128, 5)
    assert [s["id"] for s in a] == [1, 2, 3]
    assert [[(x.x, x.y, x.w, x.h) for x in s["annotations"]] for s in a] == [
        [(x.x, x.y, x.w, x.h) for x in s["annotations"]] for s in b
    ]


def test_config_validation_error():
    with pytest.raises(lsm.ConfigError, match="alpha must be < t"):
        lsm.resolve_config("", ["trainer.alpha=0.8"])


def test_resolved_config_applies_overrides():
    text = lsm.resolve_config("", ["trainer.t=0.6"])
    assert "trainer.t = 0.6" in text


def test_short_training_run(tmp_path):
    out = tmp_path / "run"
    overrides = [
        f"experiment.output_dir={out}",
        "data.num_images=16",
        "data.eval_images=4",
        "split.labeled_fraction=0.25",
        "trainer.steps=6",
        "trainer.burn_in_steps=3",
        "trainer.t=0.4",
        "trainer.alpha=0.3",
    ]
    result = lsm.train("", overrides)
    assert os.path.isdir(result["output_dir"])
    assert os.path.isfile(result["checkpoint"])
    final = result["final_eval"]
    assert 0.0 <= final["ap50"] <= 1.0
    with open(out / "metrics.ndjson") as f:
        records = [json.loads(line) for line in f]
    steps = [r["step"] for r in records if "total" in r]
    assert steps == list(range(6))
    assert all(math.isfinite(r["total"]) for r in records if "total" in r)

    again = lsm.evaluate_checkpoint(result["checkpoint"], "", overrides)
    assert again["ap50"] == pytest.approx(final["ap50"])
