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

#include "lsm/evaluation.hpp"
#include "lsm/random.hpp"
#include "oracles.hpp"

using namespace lsm;

namespace {

// Predictions are jittered copies of truths plus clutter, scores distinct.
std::vector<ImageDetections> random_fixture(int n_images, std::uint64_t seed,
                                            double max_side = 60) {
  Rng rng(seed);
  std::vector<ImageDetections> out;
  for (int i = 0; i < n_images; ++i) {
    ImageDetections im;
    im.image_id = i + 1;
    const int nt = rng.uniform_int(0, 5);
    for (int k = 0; k < nt; ++k) {
      const double w = rng.uniform(4, max_side), h = rng.uniform(4, max_side);
      im.truths.emplace_back(rng.uniform(0, 150), rng.uniform(0, 150), w, h,
                             rng.uniform_int(0, 2));
    }
    for (const auto& t : im.truths) {
      if (rng.bernoulli(0.2)) continue;
      const double j = 0.25 * std::min(t.w(), t.h());
      im.predictions.emplace_back(t.x() + rng.uniform(-j, j), t.y() + rng.uniform(-j, j),
                                  t.w() * rng.uniform(0.8, 1.2), t.h() * rng.uniform(0.8, 1.2),
                                  rng.bernoulli(0.9) ? t.category() : rng.uniform_int(0, 2),
                                  rng.uniform());
    }
    const int clutter = rng.uniform_int(0, 4);
    for (int k = 0; k < clutter; ++k) {
      im.predictions.emplace_back(rng.uniform(0, 150), rng.uniform(0, 150),
                                  rng.uniform(4, max_side), rng.uniform(4, max_side),
                                  rng.uniform_int(0, 2), rng.uniform());
    }
    out.push_back(std::move(im));
  }
  return out;
}

std::vector<oracle::Image> to_oracle(const std::vector<ImageDetections>& images) {
  std::vector<oracle::Image> out;
  for (const auto& im : images) out.push_back({im.predictions, im.truths});
  return out;
}

}  // namespace

TEST(Evaluation, HandComputedSingleTruth) {
  // False positive ranked above the true positive: precision 1/2 at full recall.
  std::vector<ImageDetections> images{
      {1, {Box(50, 50, 10, 10, 0, 0.9), Box(0, 0, 10, 10, 0, 0.8)}, {Box(0, 0, 10, 10, 0)}}};
  const auto r = evaluate(images);
  EXPECT_NEAR(r.ap50, 0.5, 1e-12);
  EXPECT_NEAR(r.ap50_95, 0.5, 1e-12);
  EXPECT_NEAR(r.avg_recall, 1.0, 1e-12);
  // Swapping the scores gives a perfect ranking.
  images[0].predictions = {Box(50, 50, 10, 10, 0, 0.8), Box(0, 0, 10, 10, 0, 0.9)};
  EXPECT_NEAR(evaluate(images).ap50, 1.0, 1e-12);
}

TEST(Evaluation, FivePredictionsThreeTruths) {
  const std::vector<Box> truths{Box(0, 0, 20, 20, 0), Box(40, 40, 20, 20, 0),
                                Box(80, 0, 10, 30, 1)};
  const std::vector<Box> preds{Box(1, 1, 20, 20, 0, 0.95), Box(100, 100, 5, 5, 0, 0.9),
                               Box(42, 38, 20, 22, 0, 0.7), Box(80, 2, 10, 28, 1, 0.6),
                               Box(0, 0, 20, 20, 0, 0.5)};
  const std::vector<ImageDetections> images{{1, preds, truths}};
  const auto r = evaluate(images);
  const auto o = to_oracle(images);
  EXPECT_NEAR(r.ap50, *oracle::mean_ap(o, 0.5), 1e-12);
  EXPECT_NEAR(r.ap50_95, oracle::mean_ap_50_95(o), 1e-12);
  // Category 0: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1: AP = (51 + 50 * 2/3) / 101.
  // Category 1: AP = 1.
  EXPECT_NEAR(r.ap50, 0.5 * ((51 + 50 * 2.0 / 3.0) / 101.0 + 1.0), 1e-12);
  EXPECT_NEAR(*average_precision(preds, truths, 0.5), r.ap50, 1e-12);
}

TEST(Evaluation, MatchesOracleOnRandomFixtures) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto images = random_fixture(20, seed);
    const auto o = to_oracle(images);
    const auto r = evaluate(images);
    EXPECT_NEAR(r.ap50, oracle::mean_ap(o, 0.5).value_or(0), 1e-12) << seed;
    EXPECT_NEAR(r.ap50_95, oracle::mean_ap_50_95(o), 1e-12) << seed;
    EXPECT_NEAR(*mean_average_precision(images, 0.75), *oracle::mean_ap(o, 0.75), 1e-12);
  }
}

TEST(Evaluation, TopHundredPerImage) {
  ImageDetections im;
  im.image_id = 1;
  im.truths.emplace_back(0, 0, 10, 10, 0);
  for (int i = 0; i < 100; ++i) im.predictions.emplace_back(50 + i, 50, 5, 5, 0, 0.9 - i * 1e-4);
  im.predictions.emplace_back(0, 0, 10, 10, 0, 0.01);  // 101st by score
  const std::vector<ImageDetections> images{im};
  EXPECT_NEAR(evaluate(images).ap50, 0.0, 1e-12);
  EXPECT_NEAR(evaluate(images).avg_recall, 0.0, 1e-12);
  EXPECT_NEAR(evaluate(images).ap50, *oracle::mean_ap(to_oracle(images), 0.5), 1e-12);
}

TEST(Evaluation, LowScoredFalsePositivesNeverHelp) {
  auto images = random_fixture(10, 21);
  const double before = evaluate(images).ap50;
  Rng rng(2);
  for (auto& im : images) {
    im.predictions.emplace_back(rng.uniform(0, 100), 190, 5, 5, rng.uniform_int(0, 2), 1e-6);
    EXPECT_LE(evaluate(images).ap50, before + 1e-12);
  }
}

TEST(Evaluation, InvariantToMonotoneScoreRescaling) {
  auto images = random_fixture(15, 5);
  const auto a = evaluate(images);
  for (auto& im : images)
    for (auto& p : im.predictions)
      p = Box(p.x(), p.y(), p.w(), p.h(), p.category(), 0.5 * *p.score() * *p.score());
  const auto b = evaluate(images);
  EXPECT_NEAR(a.ap50, b.ap50, 1e-12);
  EXPECT_NEAR(a.ap50_95, b.ap50_95, 1e-12);
}

TEST(Evaluation, AreaBinsConsistentWithOverall) {
  // Every truth and prediction small: the small-bin AP equals the overall AP.
  const auto images = random_fixture(20, 9, 25);
  bool all_small = true;
  for (const auto& im : images) {
    for (const auto& b : im.truths) all_small &= area_bin_of(b) == AreaBin::kSmall;
  }
  ASSERT_TRUE(all_small);
  const auto r = evaluate(images);
  ASSERT_TRUE(r.ap_small.has_value());
  EXPECT_NEAR(*r.ap_small, r.ap50_95, 1e-12);
  EXPECT_FALSE(r.ap_large.has_value());
}

TEST(Evaluation, PerfectAndEmptyPredictions) {
  auto images = random_fixture(10, 3);
  for (auto& im : images) {
    im.predictions.clear();
    double s = 0.99;
    for (const auto& t : im.truths) {
      im.predictions.emplace_back(t.x(), t.y(), t.w(), t.h(), t.category(), s);
      s -= 0.01;
    }
  }
  const auto perfect = evaluate(images);
  EXPECT_NEAR(perfect.ap50, 1.0, 1e-12);
  EXPECT_NEAR(perfect.ap50_95, 1.0, 1e-12);
  EXPECT_NEAR(perfect.avg_recall, 1.0, 1e-12);
  for (auto& im : images) im.predictions.clear();
  const auto none = evaluate(images);
  EXPECT_EQ(none.ap50, 0.0);
  EXPECT_EQ(none.avg_recall, 0.0);
  EXPECT_EQ(none.n_images, 10);
}

TEST(Evaluation, DatasetPairingRejectsUnknownIds) {
  DetectionSample s;
  s.id = 4;
  s.annotations = {Box(0, 0, 10, 10, 0)};
  const std::vector<DetectionSample> ds{s};
  std::unordered_map<std::int64_t, std::vector<Box>> preds{{4, {Box(0, 0, 10, 10, 0, 0.5)}}};
  EXPECT_NEAR(evaluate(preds, ds).ap50, 1.0, 1e-12);
  preds[5] = {};
  EXPECT_THROW(evaluate(preds, ds), std::invalid_argument);
}

TEST(Evaluation, JsonCarriesMetrics) {
  const auto r = evaluate(random_fixture(5, 2));
  const auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j.at("ap50").get<double>(), r.ap50);
  EXPECT_TRUE(j.contains("avg_recall"));
}

TEST(Trace, AlignsStepsAcrossLogs) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "lsm_test_trace";
  fs::create_directories(dir);
  {
    std::ofstream a(dir / "a.ndjson");
    a << R"({"step":0,"total":1})" << "\n"
      << R"({"step":9,"teacher_mAP":0.1,"teacher_ap50":0.2,"recall":0.3})" << "\n"
      << R"({"step":19,"teacher_mAP":0.4,"teacher_ap50":0.5,"recall":0.6})" << "\n";
    std::ofstream b(dir / "b.ndjson");
    b << R"({"step":9,"teacher_mAP":0.15,"teacher_ap50":0.25,"recall":0.35})" << "\n"
      << R"({"step":29,"teacher_mAP":0.45,"teacher_ap50":0.55,"recall":0.65})" << "\n";
    std::ofstream c(dir / "c.ndjson");
    c << R"({"step":9,"teacher_mAP":0.15,"teacher_ap50":0.25,"recall":0.35})" << "\n";
  }
  const std::string csv = recall_precision_trace({{"base", dir / "a.ndjson"}, {"lsm", dir / "b.ndjson"}});
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,base_recall,base_ap50,base_mAP,lsm_recall,lsm_ap50,lsm_mAP");
  std::getline(in, line);
  EXPECT_EQ(line, "9,0.3,0.2,0.1,0.35,0.25,0.15");
  std::getline(in, line);
  EXPECT_EQ(line, "19,0.6,0.5,0.4,,,");
  std::getline(in, line);
  EXPECT_EQ(line, "29,,,,0.65,0.55,0.45");
  EXPECT_THROW(recall_precision_trace({{"c", dir / "c.ndjson"}}), std::invalid_argument);
  EXPECT_THROW(recall_precision_trace({{"x", dir / "missing.ndjson"}}), std::runtime_error);
}
