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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lsm/experiment.hpp"
#include "lsm/image_io.hpp"
#include "lsm/losses.hpp"

namespace fs = std::filesystem;
using namespace lsm;

namespace {

// Teacher AP50 of the fixture run below was 0.3956 when recorded.
constexpr double kFixtureAp50Bound = 0.39;

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(); }

// One 40x40 truth and two overlapping detections of it.
void write_analysis_fixture(const fs::path& dir) {
  write_json(dir / "truths.json",
             {{"images", {{{"id", 1}, {"width", 128}, {"height", 128}}}},
              {"categories", {{{"id", 1}, {"name", "circle"}}}},
              {"annotations",
               {{{"id", 1}, {"image_id", 1}, {"category_id", 1}, {"bbox", {10, 10, 40, 40}}}}}});
  write_json(dir / "preds.json",
             {{{"image_id", 1}, {"category_id", 1}, {"bbox", {10, 10, 40, 40}}, {"score", 0.9}},
              {{"image_id", 1}, {"category_id", 1}, {"bbox", {14, 10, 40, 40}}, {"score", 0.6}}});
}

ExperimentConfig tiny_experiment(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.data.num_images = 12;
  c.data.image_size = 112;
  c.data.eval_images = 4;
  c.split.labeled_fraction = 0.25;
  c.trainer.steps = 4;
  c.trainer.burn_in_steps = 2;
  c.trainer.thresholds = {0.4, 0.3};
  return c;
}

}  // namespace

TEST(Analyze, MatchingModes) {
  const fs::path dir = fresh_dir("lsm_test_analyze");
  write_analysis_fixture(dir);

  const auto one = cmd_analyze(dir / "preds.json", dir / "truths.json", dir / "one");
  EXPECT_EQ(one.predictions, 2u);
  EXPECT_EQ(one.matched, 1u);
  EXPECT_DOUBLE_EQ(one.binned_mean_iou.at(AreaBin::kMedium), 1.0);

  const auto best = cmd_analyze(dir / "preds.json", dir / "truths.json", dir / "best",
                                MatchMode::kBestPerPrediction);
  EXPECT_EQ(best.matched, 2u);
  const double shifted = (36.0 * 40) / (2 * 1600.0 - 36.0 * 40);
  EXPECT_NEAR(best.binned_mean_iou.at(AreaBin::kMedium), (1.0 + shifted) / 2, 1e-12);

  for (const char* f : {"binned_iou.csv", "iou_vs_area.csv", "score_vs_iou.csv", "iou_vs_area.svg"}) {
    EXPECT_TRUE(fs::exists(dir / "one" / f)) << f;
  }
  EXPECT_FALSE(one.large_at_least_small.has_value());  // no small or large boxes
}

TEST(Analyze, UnknownImageIsSchemaError) {
  const fs::path dir = fresh_dir("lsm_test_analyze_bad");
  write_analysis_fixture(dir);
  write_json(dir / "preds.json",
             {{{"image_id", 9}, {"category_id", 1}, {"bbox", {1, 1, 4, 4}}, {"score", 0.5}}});
  EXPECT_THROW(cmd_analyze(dir / "preds.json", dir / "truths.json", dir / "out"), SchemaError);
}

TEST(GenData, WritesLoadableDataset) {
  const fs::path dir = fresh_dir("lsm_test_gen");
  cmd_gen_data(dir, 3, 112, 5);
  const auto loaded = load_coco_json(dir / "images", dir / "annotations.json");
  const auto expected = generate_shapes_dataset(3, 112, 5);
  ASSERT_EQ(loaded.samples.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded.samples[i].annotations, expected[i].annotations);
    const Tensor& a = loaded.samples[i].image;
    const Tensor& b = expected[i].image;
    ASSERT_TRUE(a.same_shape(b));
    double worst = 0;
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
    EXPECT_LE(worst, 0.5 / 255 + 1e-12);  // 8-bit quantization
  }
}

TEST(Sweep, RejectsTooManyPointsAndBudget) {
  const ExperimentConfig c = tiny_experiment("sweep_budget");
  SweepOptions o;
  o.output_dir = fresh_dir("lsm_test_sweep_budget");
  const std::vector<std::string> nine(9, "0.3");
  EXPECT_THROW(cmd_sweep(c, SweepParameter::kAlpha, nine, o), BudgetError);
  o.budget_minutes = 1e-6;
  EXPECT_THROW(cmd_sweep(c, SweepParameter::kAlpha, {"0.3"}, o), BudgetError);
  o.budget_minutes = 45;
  EXPECT_THROW(cmd_sweep(c, SweepParameter::kAlpha, {"0.9"}, o), ConfigError);  // alpha > t
  EXPECT_FALSE(fs::exists(o.output_dir / "sweep.csv"));
}

TEST(Sweep, AlphaRowsAndDegenerateFlag) {
  ExperimentConfig c = tiny_experiment("sweep_alpha");
  SweepOptions o;
  o.output_dir = fresh_dir("lsm_test_sweep_alpha");
  const auto rows = cmd_sweep(c, SweepParameter::kAlpha, {"0.2", "0.3", "0.4"}, o);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_FALSE(rows[0].degenerate);
  EXPECT_FALSE(rows[1].degenerate);
  EXPECT_TRUE(rows[2].degenerate);  // alpha == t
  for (const auto& r : rows) {
    ASSERT_TRUE(r.baseline.has_value());
    EXPECT_EQ(r.baseline->ap50, rows[0].baseline->ap50);  // one shared baseline
  }
  const std::string csv = read_file(o.output_dir / "sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "alpha,baseline_ap50,baseline_mAP,baseline_recall,lsm_ap50,lsm_mAP,lsm_recall,"
            "degenerate");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find("0.4,"), std::string::npos);
  EXPECT_TRUE(fs::exists(o.output_dir / "sweep.svg"));
}

TEST(Sweep, PimLevelTable) {
  ExperimentConfig c = tiny_experiment("sweep_levels");
  c.trainer.steps = 3;
  SweepOptions o;
  o.output_dir = fresh_dir("lsm_test_sweep_levels");
  const auto rows =
      cmd_sweep(c, SweepParameter::kPimLevels, {"P2d,P3d", "P2d,P4d", "P3d,P4d", "P2d,P3d,P4d"}, o);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_FALSE(rows[0].baseline.has_value());
  const std::string t5 = read_file(o.output_dir / "table5.csv");
  std::istringstream lines(t5);
  std::string line;
  std::vector<std::string> flags;
  std::getline(lines, line);
  EXPECT_EQ(line, "P2d,P3d,P4d,AP50_95,AP_S,AP_M,AP_L,AP50");
  while (std::getline(lines, line)) flags.push_back(line.substr(0, 5));
  EXPECT_EQ(flags, (std::vector<std::string>{"1,1,0", "1,0,1", "0,1,1", "1,1,1"}));
  EXPECT_TRUE(fs::exists(o.output_dir / "table5.md"));
}

// A short supervised run on one high-contrast square.
TEST(TrainedFixture, ProposalsFindAHighContrastSquare) {
  DetectionSample s;
  s.id = 1;
  s.image = Tensor({3, 64, 64}, 0.1);
  for (int c = 0; c < 3; ++c) {
    for (int y = 20; y < 44; ++y) {
      for (int x = 16; x < 40; ++x) s.image.at(c, y, x) = 0.9;
    }
  }
  s.annotations = {Box(16, 20, 24, 24, 1)};

  Detector det = Detector::create({}, 3, true);
  const LossOptions options;
  std::vector<Tensor> momentum;
  for (const auto& e : det.params().entries()) momentum.push_back(Tensor::zeros_like(e.var.value()));
  for (int step = 0; step < 60; ++step) {
    det.params().zero_grad();
    const StudentView view = forward_student(det, s.image, 32, false);
    ag::backward(supervised_loss(det, view, s.annotations, options, step).total());
    auto& entries = det.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Tensor& w = entries[i].var.mutable_value();
      const Tensor& g = entries[i].var.grad();
      if (g.empty()) continue;
      for (std::size_t k = 0; k < w.size(); ++k) {
        momentum[i][k] = 0.9 * momentum[i][k] + g[k];
        w[k] -= 0.02 * momentum[i][k];
      }
    }
  }
  const auto pyramid = det.extract_pyramid(s.image);
  const auto proposals = det.propose(pyramid, 10).proposals;
  double best = 0;
  for (const auto& p : *proposals) best = std::max(best, iou(p.box, s.annotations[0]));
  EXPECT_GE(best, 0.5);
}

// Fixed short supervised run, evaluated again from its checkpoint.
TEST(TrainedFixture, EvalMatchesRecordedBound) {
  ExperimentConfig c;
  c.name = "fixture";
  c.output_dir = fresh_dir("lsm_test_fixture").string();
  c.data.num_images = 40;
  c.data.image_size = 112;
  c.data.eval_images = 10;
  c.split.labeled_fraction = 1.0;
  c.trainer.mode = TrainMode::kBaseline;
  c.trainer.steps = 300;
  c.trainer.burn_in_steps = 300;
  c.trainer.labeled_batch = 2;
  c.trainer.lambda_e = 0.9;
  const auto outcome = cmd_train(c);
  ASSERT_TRUE(outcome.summary.final_eval.has_value());

  const auto data = prepare_data(c);
  const auto text = cmd_eval(outcome.summary.final_checkpoint, data.training.evaluation);
  const auto j = nlohmann::json::parse(text);
  EXPECT_DOUBLE_EQ(j.at("ap50").get<double>(), outcome.summary.final_eval->ap50);
  EXPECT_GT(j.at("ap50").get<double>(), kFixtureAp50Bound);
}
