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

#include "lsm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "lsm/checkpoint.hpp"
#include "lsm/image_io.hpp"
#include "lsm/pseudo_label.hpp"

namespace lsm {
namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

// --- minimal SVG charts ------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x, y;
  bool points = false;  // scatter instead of polyline
};

void write_chart_svg(const std::filesystem::path& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series, bool log_x = false) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 60;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  auto tx = [&](double v) { return log_x ? std::log10(std::max(v, 1e-12)) : v; };
  double x0 = 1e300, x1 = -1e300, y0 = 0, y1 = 1e-12;
  for (const auto& s : series) {
    for (double v : s.x) {
      x0 = std::min(x0, tx(v));
      x1 = std::max(x1, tx(v));
    }
    for (double v : s.y) y1 = std::max(y1, v);
  }
  if (!(x1 > x0)) {
    x0 = (x0 > 1e299 ? 0 : x0) - 1;
    x1 = x0 + 2;
  }
  y1 = std::max(y1 * 1.05, 1e-6);
  auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    const double xp = L + (W - L - R) * i / 4.0;
    os << "<text x=\"" << xp << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
       << fmt(log_x ? std::pow(10.0, xv) : xv, 3) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
       << fmt(yv, 3) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">"
     << x_label << (log_x ? " (log scale)" : "") << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 5];
    if (s.points) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"2\" fill=\"" << c
           << "\" fill-opacity=\"0.5\"/>\n";
      }
    } else {
      os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
      os << "\"/>\n";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c
           << "\"/>\n";
      }
    }
    os << "<text x=\"" << W - R - 110 << "\" y=\"" << T + 14 * (k + 1) << "\" fill=\"" << c << "\">"
       << s.name << "</text>\n";
  }
  os << "</svg>\n";
  write_text(path, os.str());
}

std::vector<DetectionSample> with_held_out_truths(const std::vector<DetectionSample>& unlabeled,
                                                  const HeldOutTruths& held_out) {
  std::vector<DetectionSample> out;
  for (const auto& s : unlabeled) {
    DetectionSample t;
    t.id = s.id;
    t.file_name = s.file_name;
    t.declared_width = s.width();
    t.declared_height = s.height();
    t.annotations = held_out.truths_for_evaluation(s.id);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

// --- data --------------------------------------------------------------------

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData p;
  std::vector<DetectionSample> samples, evaluation;
  if (cfg.data.source == "shapes") {
    p.categories = shapes_categories();
    p.image_size = cfg.data.image_size;
    samples = generate_shapes_dataset(cfg.data.num_images, cfg.data.image_size, cfg.data.seed);
    if (cfg.data.eval_images > 0) {
      evaluation = generate_shapes_dataset(cfg.data.eval_images, cfg.data.image_size,
                                           cfg.data.eval_seed);
    }
  } else {
    CocoDataset train = load_coco_json(cfg.data.coco_images_dir, cfg.data.coco_annotations);
    p.categories = train.categories;
    samples = std::move(train.samples);
    if (!cfg.data.coco_eval_annotations.empty()) {
      evaluation = load_coco_json(cfg.data.coco_eval_images_dir.empty()
                                      ? cfg.data.coco_images_dir
                                      : cfg.data.coco_eval_images_dir,
                                  cfg.data.coco_eval_annotations)
                       .samples;
    }
  }
  SplitResult split = split_labeled_unlabeled(std::move(samples), cfg.split);
  p.training.labeled = std::move(split.labeled);
  p.training.unlabeled = std::move(split.unlabeled);
  p.training.evaluation = std::move(evaluation);
  p.held_out = std::move(split.held_out);
  return p;
}

// --- train / eval ------------------------------------------------------------

TrainOutcome cmd_train(const ExperimentConfig& cfg,
                       const std::optional<std::filesystem::path>& resume_from) {
  cfg.validate();
  TrainOutcome outcome;
  outcome.output_dir = cfg.resolved_output_dir();
  std::filesystem::create_directories(outcome.output_dir);
  write_text(outcome.output_dir / kResolvedConfigName, cfg.dump());

  const PreparedData data = prepare_data(cfg);
  if (static_cast<int>(data.categories.size()) != cfg.detector.num_classes) {
    throw ConfigError({"detector.num_classes is " + std::to_string(cfg.detector.num_classes) +
                       " but the dataset has " + std::to_string(data.categories.size()) +
                       " categories"});
  }
  RunOptions options;
  options.output_dir = outcome.output_dir;
  options.resume_from = resume_from;
  options.resolved_config = cfg.to_json();
  outcome.summary = run_training(data.training, cfg.detector, cfg.trainer, options);

  if (outcome.summary.final_eval) {
    write_text(outcome.output_dir / "final_eval.json",
               outcome.summary.final_eval->to_json().dump(2) + "\n");
  }
  if (!data.training.unlabeled.empty()) {
    const Checkpoint ck = load_checkpoint(outcome.summary.final_checkpoint);
    std::vector<PseudoLabelSet> sets;
    for (const auto& s : data.training.unlabeled) {
      sets.push_back(generate_pseudo_labels(ck.state.teacher, s.image, ck.state.thresholds, s.id));
    }
    write_pseudo_labels_json(outcome.output_dir / "pseudo_labels.json", sets, data.categories);
    write_coco_json(outcome.output_dir / "unlabeled_truths.json", data.categories,
                    with_held_out_truths(data.training.unlabeled, data.held_out),
                    data.image_size);
  }
  return outcome;
}

std::string cmd_eval(const std::filesystem::path& checkpoint,
                     const std::vector<DetectionSample>& dataset,
                     const std::filesystem::path& output_json, bool use_student) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  for (const auto& s : dataset) {
    if (s.image.empty()) {
      throw std::invalid_argument("evaluation sample " + std::to_string(s.id) + " has no pixels");
    }
  }
  const Detector& model = use_student ? ck.state.student : ck.state.teacher;
  const EvalResult r = evaluate_detector(model, dataset, 0.05);
  nlohmann::json j = r.to_json();
  j["model"] = use_student ? "student" : "teacher";
  j["checkpoint_step"] = ck.state.step;
  const std::string text = j.dump(2) + "\n";
  if (!output_json.empty()) {
    if (output_json.has_parent_path()) std::filesystem::create_directories(output_json.parent_path());
    write_text(output_json, text);
  }
  return text;
}

// --- analyze -----------------------------------------------------------------

AnalyzeReport cmd_analyze(const std::filesystem::path& predictions_json,
                          const std::filesystem::path& truths_json,
                          const std::filesystem::path& output_dir, MatchMode matching) {
  const CocoDataset truths = load_coco_json({}, truths_json);
  const auto predictions = load_coco_predictions(predictions_json, truths.categories);
  std::unordered_map<std::int64_t, const DetectionSample*> by_id;
  for (const auto& s : truths.samples) by_id[s.id] = &s;
  for (const auto& [id, boxes] : predictions) {
    if (!by_id.count(id)) {
      throw SchemaError(predictions_json.string() + ": predictions reference image id " +
                        std::to_string(id) + " absent from " + truths_json.string());
    }
  }
  std::filesystem::create_directories(output_dir);

  AnalyzeReport report;
  std::map<AreaBin, double> sums;
  constexpr int kScoreBins = 10;
  std::vector<double> score_sum(kScoreBins, 0.0);
  std::vector<std::size_t> score_count(kScoreBins, 0);
  std::ostringstream scatter;
  scatter << "image_id,category_id,area,area_bin,score,iou\n";
  Series points{"pseudo-boxes", {}, {}, true};

  std::vector<std::int64_t> ids;
  for (const auto& s : truths.samples) ids.push_back(s.id);
  std::sort(ids.begin(), ids.end());
  for (std::int64_t id : ids) {
    const auto it = predictions.find(id);
    if (it == predictions.end()) continue;
    const auto& preds = it->second;
    const auto& gts = by_id.at(id)->annotations;
    report.predictions += preds.size();
    const MatchResult m = match_per_category(preds, gts, 0.0, matching);
    for (const auto& pair : m.pairs) {
      const Box& p = preds[pair.prediction];
      const AreaBin bin = area_bin_of(p);
      sums[bin] += pair.iou;
      ++report.bin_counts[bin];
      ++report.matched;
      const double score = p.score().value_or(1.0);
      const int sb = std::clamp(static_cast<int>(score * kScoreBins), 0, kScoreBins - 1);
      score_sum[sb] += pair.iou;
      ++score_count[sb];
      scatter << id << ',' << truths.categories[static_cast<std::size_t>(p.category())].coco_id
              << ',' << fmt(p.area(), 10) << ',' << to_string(bin) << ',' << fmt(score, 10) << ','
              << fmt(pair.iou, 10) << '\n';
      points.x.push_back(p.area());
      points.y.push_back(pair.iou);
    }
  }
  report.binned_mean_iou = [&] {
    std::vector<Box> all;
    MatchResult merged;
    // Recompute through the geometry routine for a single source of truth.
    for (std::int64_t id : ids) {
      const auto it = predictions.find(id);
      if (it == predictions.end()) continue;
      const std::size_t base = all.size();
      const MatchResult m =
          match_per_category(it->second, by_id.at(id)->annotations, 0.0, matching);
      for (auto pair : m.pairs) {
        pair.prediction += base;
        merged.pairs.push_back(pair);
      }
      all.insert(all.end(), it->second.begin(), it->second.end());
    }
    return binned_mean_iou(merged, all);
  }();

  std::ostringstream binned;
  binned << "area_bin,area_lower,area_upper,count,mean_iou\n";
  for (AreaBin bin : kAllAreaBins) {
    const auto range = area_bin_range(bin);
    const auto mean = report.binned_mean_iou.find(bin);
    binned << to_string(bin) << ',' << fmt(range.lower) << ','
           << (std::isinf(range.upper) ? std::string("inf") : fmt(range.upper)) << ','
           << (report.bin_counts.count(bin) ? report.bin_counts.at(bin) : 0) << ','
           << (mean != report.binned_mean_iou.end() ? fmt(mean->second, 10) : "") << '\n';
  }
  std::ostringstream by_score;
  by_score << "score_lower,score_upper,count,mean_iou\n";
  for (int b = 0; b < kScoreBins; ++b) {
    by_score << fmt(b / 10.0) << ',' << fmt((b + 1) / 10.0) << ',' << score_count[b] << ','
             << (score_count[b] ? fmt(score_sum[b] / score_count[b], 10) : "") << '\n';
  }
  write_text(output_dir / "binned_iou.csv", binned.str());
  write_text(output_dir / "iou_vs_area.csv", scatter.str());
  write_text(output_dir / "score_vs_iou.csv", by_score.str());
  write_chart_svg(output_dir / "iou_vs_area.svg", "IoU of pseudo-boxes versus box area", "box area",
                  "IoU with best same-category truth", {points}, true);

  const auto small = report.binned_mean_iou.find(AreaBin::kSmall);
  const auto large = report.binned_mean_iou.find(AreaBin::kLarge);
  if (small != report.binned_mean_iou.end() && large != report.binned_mean_iou.end()) {
    report.large_at_least_small = large->second >= small->second;
  }
  nlohmann::json summary{{"predictions", report.predictions}, {"matched", report.matched}};
  for (const auto& [bin, v] : report.binned_mean_iou) summary["mean_iou"][to_string(bin)] = v;
  summary["large_at_least_small"] = report.large_at_least_small
                                        ? nlohmann::json(*report.large_at_least_small)
                                        : nlohmann::json(nullptr);
  write_text(output_dir / "analysis.json", summary.dump(2) + "\n");
  return report;
}

// --- sweep -------------------------------------------------------------------

SweepParameter parse_sweep_parameter(const std::string& text) {
  if (text == "alpha") return SweepParameter::kAlpha;
  if (text == "t") return SweepParameter::kT;
  if (text == "pim_levels") return SweepParameter::kPimLevels;
  throw std::invalid_argument("unknown sweep parameter '" + text + "' (alpha, t, pim_levels)");
}

namespace {

std::string normalize_levels(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == 'P' || c == 'p' || c == 'd' || c == ' ') continue;
    out += (c == '+' || c == ';') ? ',' : c;
  }
  return out;
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' ? c : '_';
  return out;
}

struct PlannedRun {
  std::size_t row;
  bool baseline;
  ExperimentConfig config;
};

}  // namespace

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& base, SweepParameter parameter,
                                const std::vector<std::string>& values,
                                const SweepOptions& options) {
  base.validate();
  if (values.empty()) throw std::invalid_argument("sweep needs at least one value");
  if (values.size() > kMaxSweepPoints) {
    throw BudgetError("sweep of " + std::to_string(values.size()) + " points exceeds the limit of " +
                      std::to_string(kMaxSweepPoints));
  }
  const std::string pname = parameter == SweepParameter::kAlpha ? "alpha"
                            : parameter == SweepParameter::kT   ? "t"
                                                                : "pim_levels";
  std::vector<SweepRow> rows(values.size());
  std::vector<PlannedRun> plan;
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < values.size(); ++i) {
    ExperimentConfig c = base;
    c.trainer.mode = TrainMode::kLsm;
    try {
      if (parameter == SweepParameter::kAlpha) c.set("trainer.alpha", values[i]);
      if (parameter == SweepParameter::kT) c.set("trainer.t", values[i]);
      if (parameter == SweepParameter::kPimLevels) {
        c.set("detector.pim_levels", normalize_levels(values[i]));
      }
    } catch (const std::exception& e) {
      problems.push_back(pname + "=" + values[i] + ": " + e.what());
      continue;
    }
    for (auto& e : c.validation_errors()) problems.push_back(pname + "=" + values[i] + ": " + e);
    rows[i].value = values[i];
    rows[i].degenerate = c.trainer.thresholds.alpha == c.trainer.thresholds.t;
    c.name = base.name + "_" + pname + "_" + slug(values[i]);
    c.output_dir = (options.output_dir / "runs" / (pname + "_" + slug(values[i]))).string();
    plan.push_back({i, false, c});
    // Baselines ignore alpha, so one run serves every alpha point.
    const bool need_baseline = parameter == SweepParameter::kT ||
                               (parameter == SweepParameter::kAlpha && i == 0);
    if (need_baseline) {
      ExperimentConfig b = c;
      b.trainer.mode = TrainMode::kBaseline;
      b.name = base.name + "_baseline_" + pname + "_" + slug(values[i]);
      b.output_dir = (options.output_dir / "runs" / ("baseline_" + pname + "_" + slug(values[i]))).string();
      plan.push_back({i, true, b});
    }
  }
  if (!problems.empty()) throw ConfigError(problems);

  const double minutes = static_cast<double>(plan.size()) * base.trainer.steps *
                         options.seconds_per_step / 60.0;
  if (minutes > options.budget_minutes) {
    std::ostringstream os;
    os << "sweep needs " << plan.size() << " runs of " << base.trainer.steps
       << " steps, an estimated " << std::fixed << std::setprecision(1) << minutes
       << " minutes, exceeding the budget of " << options.budget_minutes << " minutes";
    throw BudgetError(os.str());
  }

  std::filesystem::create_directories(options.output_dir);
  auto run_one = [](const ExperimentConfig& c) {
    const TrainOutcome out = cmd_train(c);
    if (!out.summary.final_eval) throw std::runtime_error("sweep run produced no evaluation");
    return *out.summary.final_eval;
  };
  std::vector<EvalResult> results(plan.size());
  if (options.parallel) {
    std::vector<std::future<EvalResult>> futures;
    for (const auto& p : plan) futures.push_back(std::async(std::launch::async, run_one, p.config));
    for (std::size_t k = 0; k < plan.size(); ++k) results[k] = futures[k].get();
  } else {
    for (std::size_t k = 0; k < plan.size(); ++k) results[k] = run_one(plan[k].config);
  }
  std::optional<EvalResult> shared_baseline;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    if (plan[k].baseline) {
      rows[plan[k].row].baseline = results[k];
      if (parameter == SweepParameter::kAlpha) shared_baseline = results[k];
    } else {
      rows[plan[k].row].lsm = results[k];
    }
  }
  if (shared_baseline) {
    for (auto& r : rows) r.baseline = shared_baseline;
  }

  std::ostringstream csv;
  csv << pname << ",baseline_ap50,baseline_mAP,baseline_recall,lsm_ap50,lsm_mAP,lsm_recall,degenerate\n";
  for (const auto& r : rows) {
    csv << (parameter == SweepParameter::kPimLevels ? "\"" + r.value + "\"" : r.value) << ','
        << (r.baseline ? fmt(r.baseline->ap50, 10) : "") << ','
        << (r.baseline ? fmt(r.baseline->ap50_95, 10) : "") << ','
        << (r.baseline ? fmt(r.baseline->avg_recall, 10) : "") << ',' << fmt(r.lsm.ap50, 10) << ','
        << fmt(r.lsm.ap50_95, 10) << ',' << fmt(r.lsm.avg_recall, 10) << ','
        << (r.degenerate ? "true" : "false") << '\n';
  }
  write_text(options.output_dir / "sweep.csv", csv.str());

  if (parameter == SweepParameter::kPimLevels) {
    std::ostringstream t5csv, md;
    t5csv << "P2d,P3d,P4d,AP50_95,AP_S,AP_M,AP_L,AP50\n";
    md << "| P2d | P3d | P4d | AP50:95 | AP_S | AP_M | AP_L |\n|:-:|:-:|:-:|:-:|:-:|:-:|:-:|\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      ExperimentConfig c = base;
      c.set("detector.pim_levels", normalize_levels(rows[i].value));
      auto has = [&](int l) {
        return std::find(c.detector.pim_levels.begin(), c.detector.pim_levels.end(), l) !=
               c.detector.pim_levels.end();
      };
      const auto& e = rows[i].lsm;
      t5csv << has(2) << ',' << has(3) << ',' << has(4) << ',' << fmt(e.ap50_95, 10) << ','
            << opt_fmt(e.ap_small) << ',' << opt_fmt(e.ap_medium) << ',' << opt_fmt(e.ap_large)
            << ',' << fmt(e.ap50, 10) << '\n';
      auto mark = [&](int l) { return has(l) ? "x" : " "; };
      auto pct = [](const std::optional<double>& v) { return v ? fmt(100.0 * *v, 4) : "-"; };
      md << "| " << mark(2) << " | " << mark(3) << " | " << mark(4) << " | "
         << pct(e.ap50_95) << " | " << pct(e.ap_small) << " | " << pct(e.ap_medium) << " | "
         << pct(e.ap_large) << " |\n";
    }
    write_text(options.output_dir / "table5.csv", t5csv.str());
    write_text(options.output_dir / "table5.md", md.str());
  } else {
    Series b{"mean teacher", {}, {}}, l{"LSM", {}, {}};
    for (const auto& r : rows) {
      const double x = std::stod(r.value);
      if (r.baseline) {
        b.x.push_back(x);
        b.y.push_back(r.baseline->ap50_95);
      }
      l.x.push_back(x);
      l.y.push_back(r.lsm.ap50_95);
    }
    write_chart_svg(options.output_dir / "sweep.svg", "Threshold sweep", pname, "teacher mAP",
                    {b, l});
  }
  return rows;
}

void cmd_gen_data(const std::filesystem::path& output_dir, int n_images, int image_size,
                  std::uint64_t seed) {
  auto samples = generate_shapes_dataset(n_images, image_size, seed);
  std::filesystem::create_directories(output_dir / "images");
  for (auto& s : samples) {
    char name[32];
    std::snprintf(name, sizeof name, "%06lld.png", static_cast<long long>(s.id));
    s.file_name = name;
    write_image(output_dir / "images" / name, s.image);
  }
  write_coco_json(output_dir / "annotations.json", shapes_categories(), samples, image_size);
}

}  // namespace lsm
