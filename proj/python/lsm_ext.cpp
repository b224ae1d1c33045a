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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lsm/checkpoint.hpp"
#include "lsm/config.hpp"
#include "lsm/data.hpp"
#include "lsm/evaluation.hpp"
#include "lsm/experiment.hpp"
#include "lsm/geometry.hpp"
#include "lsm/pseudo_label.hpp"

namespace py = pybind11;
using namespace lsm;

namespace {

std::vector<Box> boxes_from_scores(const std::vector<double>& scores) {
  std::vector<Box> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.emplace_back(static_cast<double>(i), 0.0, 1.0, 1.0, 0, scores[i]);
  }
  return out;
}

py::dict eval_to_dict(const EvalResult& r) {
  py::dict d;
  d["ap50"] = r.ap50;
  d["ap50_95"] = r.ap50_95;
  d["ap_small"] = r.ap_small;
  d["ap_medium"] = r.ap_medium;
  d["ap_large"] = r.ap_large;
  d["avg_recall"] = r.avg_recall;
  d["n_images"] = r.n_images;
  return d;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  auto cfg = ExperimentConfig::load(path, overrides);
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_lsm, m) {
  m.doc() = "Low-confidence samples mining for semi-supervised detection";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<BudgetError>(m, "BudgetError", PyExc_ValueError);

  py::class_<Box>(m, "Box")
      .def(py::init<double, double, double, double, int, std::optional<double>>(), py::arg("x"),
           py::arg("y"), py::arg("w"), py::arg("h"), py::arg("category") = 0,
           py::arg("score") = std::nullopt)
      .def_property_readonly("x", &Box::x)
      .def_property_readonly("y", &Box::y)
      .def_property_readonly("w", &Box::w)
      .def_property_readonly("h", &Box::h)
      .def_property_readonly("area", &Box::area)
      .def_property_readonly("category", &Box::category)
      .def_property_readonly("score", &Box::score)
      .def("__repr__", [](const Box& b) {
        return "Box(" + std::to_string(b.x()) + ", " + std::to_string(b.y()) + ", " +
               std::to_string(b.w()) + ", " + std::to_string(b.h()) + ", category=" +
               std::to_string(b.category()) + ")";
      });

  m.def("iou", py::overload_cast<const Box&, const Box&>(&iou), py::arg("a"), py::arg("b"));
  m.def("area_bin", [](const Box& b) { return to_string(area_bin_of(b)); }, py::arg("box"));
  m.def(
      "nms",
      [](const std::vector<Box>& boxes, double threshold) {
        std::vector<Rect> rects;
        std::vector<double> scores;
        for (const auto& b : boxes) {
          rects.push_back(Rect::of(b));
          scores.push_back(b.score().value_or(0.0));
        }
        return nms(rects, scores, threshold);
      },
      py::arg("boxes"), py::arg("iou_threshold"));

  m.def(
      "partition_scores",
      [](const std::vector<double>& scores, double t, double alpha) {
        const Thresholds th{t, alpha};
        th.validate();
        const auto set = PseudoLabelSet::partition(boxes_from_scores(scores), th);
        py::dict d;
        d["main"] = set.main_set;
        d["pim"] = set.pim_set;
        d["sd"] = set.sd_interval;
        return d;
      },
      py::arg("scores"), py::arg("t") = 0.7, py::arg("alpha") = 0.5,
      "Index sets of scores above t, above alpha, and strictly between them.");

  m.def(
      "evaluate",
      [](const std::vector<std::vector<Box>>& predictions,
         const std::vector<std::vector<Box>>& truths) {
        if (predictions.size() != truths.size()) {
          throw std::invalid_argument("predictions and truths need one entry per image");
        }
        std::vector<ImageDetections> images;
        for (std::size_t i = 0; i < truths.size(); ++i) {
          images.push_back({static_cast<std::int64_t>(i + 1), predictions[i], truths[i]});
        }
        return eval_to_dict(evaluate(images));
      },
      py::arg("predictions"), py::arg("truths"));

  m.def(
      "generate_shapes",
      [](int n_images, int image_size, std::uint64_t seed) {
        py::list out;
        for (const auto& s : generate_shapes_dataset(n_images, image_size, seed)) {
          py::dict d;
          d["id"] = s.id;
          d["width"] = s.width();
          d["height"] = s.height();
          d["annotations"] = s.annotations;
          out.append(d);
        }
        return out;
      },
      py::arg("n_images"), py::arg("image_size") = 128, py::arg("seed") = 7,
      "Synthetic shapes samples (ids, sizes and boxes; pixels stay in C++).");

  m.def("default_config", [] { return ExperimentConfig{}.dump(); });
  m.def(
      "resolve_config",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return load_config(path, overrides).dump();
      },
      py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "train",
      [](const std::string& config_path, const std::vector<std::string>& overrides,
         const std::optional<std::string>& resume) {
        const auto cfg = load_config(config_path, overrides);
        std::optional<std::filesystem::path> from;
        if (resume) from = *resume;
        TrainOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = cmd_train(cfg, from);
        }
        py::dict d;
        d["output_dir"] = outcome.output_dir.string();
        d["checkpoint"] = outcome.summary.final_checkpoint.string();
        if (outcome.summary.final_eval) {
          d["final_eval"] = eval_to_dict(*outcome.summary.final_eval);
        } else {
          d["final_eval"] = py::none();
        }
        return d;
      },
      py::arg("config_path") = "", py::arg("overrides") = std::vector<std::string>{},
      py::arg("resume") = std::nullopt);

  m.def(
      "evaluate_checkpoint",
      [](const std::string& checkpoint, const std::string& config_path,
         const std::vector<std::string>& overrides, bool student) {
        const auto cfg = load_config(config_path, overrides);
        const auto data = prepare_data(cfg);
        std::string text;
        {
          py::gil_scoped_release release;
          text = cmd_eval(checkpoint, data.training.evaluation, {}, student);
        }
        return py::module_::import("json").attr("loads")(text);
      },
      py::arg("checkpoint"), py::arg("config_path") = "",
      py::arg("overrides") = std::vector<std::string>{}, py::arg("student") = false);

  m.def(
      "analyze",
      [](const std::string& predictions, const std::string& truths, const std::string& output,
         const std::string& matching) {
        if (matching != "one-to-one" && matching != "best") {
          throw std::invalid_argument("matching must be 'one-to-one' or 'best'");
        }
        const auto r = cmd_analyze(
            predictions, truths, output,
            matching == "best" ? MatchMode::kBestPerPrediction : MatchMode::kOneToOne);
        py::dict bins;
        for (const auto& [bin, v] : r.binned_mean_iou) bins[py::str(to_string(bin))] = v;
        py::dict d;
        d["binned_mean_iou"] = bins;
        d["predictions"] = r.predictions;
        d["matched"] = r.matched;
        d["large_at_least_small"] = r.large_at_least_small;
        return d;
      },
      py::arg("predictions"), py::arg("truths"), py::arg("output_dir"),
      py::arg("matching") = "one-to-one");
}
