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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "lsm/config.hpp"

using namespace lsm;

TEST(Config, ParsesKeysCommentsAndLists) {
  const auto cfg = ExperimentConfig::parse(R"(
# comment
experiment.name = demo
trainer.t = 0.8   # trailing comment
trainer.alpha = 0.4
trainer.mode = pim_only
detector.pim_levels = 3, 4
data.num_images = 50
split.labeled_fraction = 0.2
)");
  EXPECT_EQ(cfg.name, "demo");
  EXPECT_DOUBLE_EQ(cfg.trainer.thresholds.t, 0.8);
  EXPECT_DOUBLE_EQ(cfg.trainer.thresholds.alpha, 0.4);
  EXPECT_EQ(cfg.trainer.mode, TrainMode::kPimOnly);
  EXPECT_EQ(cfg.detector.pim_levels, (std::vector<int>{3, 4}));
  EXPECT_EQ(cfg.data.num_images, 50);
  EXPECT_DOUBLE_EQ(cfg.split.labeled_fraction, 0.2);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, ReportsEveryBadLine) {
  try {
    ExperimentConfig::parse("trainer.t = abc\nno_equals\nbogus.key = 1\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 3u);
    EXPECT_NE(e.problems()[2].find("bogus.key"), std::string::npos);
  }
}

TEST(Config, ValidationNamesFields) {
  auto cfg = ExperimentConfig::parse("trainer.t = 0.5\ntrainer.alpha = 0.7\ndata.num_images = 0\n");
  const auto errs = cfg.validation_errors();
  ASSERT_GE(errs.size(), 2u);
  bool alpha = false, images = false;
  for (const auto& e : errs) {
    alpha |= e.find("alpha must be < t") != std::string::npos;
    images |= e.find("data.num_images") != std::string::npos;
  }
  EXPECT_TRUE(alpha);
  EXPECT_TRUE(images);
  EXPECT_THROW(cfg.validate(), ConfigError);
  // Equal thresholds are the accepted degenerate case.
  cfg = ExperimentConfig::parse("trainer.t = 0.6\ntrainer.alpha = 0.6\n");
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, DumpRoundTripsEveryKey) {
  auto cfg = ExperimentConfig::parse("trainer.learning_rate = 0.0123456789\ntrainer.lambda_e = 0.99\n");
  cfg.set("detector.anchor_scales", "3.5, 7");
  const auto back = ExperimentConfig::parse(cfg.dump());
  for (const auto& k : ExperimentConfig::keys()) EXPECT_EQ(cfg.get(k), back.get(k)) << k;
  EXPECT_EQ(back.dump(), cfg.dump());
  EXPECT_DOUBLE_EQ(back.trainer.learning_rate, 0.0123456789);
}

TEST(Config, OverridesApplyAfterFile) {
  const auto path = std::filesystem::temp_directory_path() / "lsm_test_cfg.cfg";
  {
    std::ofstream out(path);
    out << "trainer.steps = 10\ntrainer.seed = 3\n";
  }
  const auto cfg = ExperimentConfig::load(path, {"trainer.steps=20", "experiment.name = x"});
  EXPECT_EQ(cfg.trainer.steps, 20);
  EXPECT_EQ(cfg.trainer.seed, 3u);
  EXPECT_EQ(cfg.name, "x");
  EXPECT_THROW(ExperimentConfig::load(path, {"trainer.steps"}), ConfigError);
  EXPECT_THROW(ExperimentConfig::load(path.string() + ".missing"), ConfigError);
}

TEST(Config, OutputDirectoryResolution) {
  auto cfg = ExperimentConfig::parse("experiment.name = abc\n");
  ::setenv(kOutputRootEnv, "/tmp/lsm_root", 1);
  EXPECT_EQ(cfg.resolved_output_dir(), std::filesystem::path("/tmp/lsm_root/abc"));
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(cfg.resolved_output_dir(), std::filesystem::path("runs/abc"));
  cfg.output_dir = "/x/y";
  EXPECT_EQ(cfg.resolved_output_dir(), std::filesystem::path("/x/y"));
}
