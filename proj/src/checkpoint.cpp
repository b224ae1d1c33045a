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

#include "lsm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace lsm {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in native little-endian order");

constexpr std::size_t kMagicLength = sizeof(kCheckpointMagic) - 1;

struct TableEntry {
  std::string name;
  const Tensor* tensor;
};

}  // namespace

nlohmann::json detector_config_to_json(const DetectorConfig& c) {
  return {{"num_classes", c.num_classes},       {"fpn_channels", c.fpn_channels},
          {"backbone_widths", c.backbone_widths}, {"head_hidden", c.head_hidden},
          {"roi_size", c.roi_size},             {"roi_sampling", c.roi_sampling},
          {"canonical_scale", c.canonical_scale}, {"canonical_level", c.canonical_level},
          {"pim_levels", c.pim_levels},         {"anchor_scales", c.anchor_scales},
          {"rpn_pre_nms", c.rpn_pre_nms},       {"rpn_nms_iou", c.rpn_nms_iou},
          {"proposals_train", c.proposals_train}, {"proposals_test", c.proposals_test},
          {"box_nms_iou", c.box_nms_iou},       {"max_detections", c.max_detections}};
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.num_classes = j.at("num_classes").get<int>();
  c.fpn_channels = j.at("fpn_channels").get<int>();
  c.backbone_widths = j.at("backbone_widths").get<std::vector<int>>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.roi_size = j.at("roi_size").get<int>();
  c.roi_sampling = j.at("roi_sampling").get<int>();
  c.canonical_scale = j.at("canonical_scale").get<double>();
  c.canonical_level = j.at("canonical_level").get<int>();
  c.pim_levels = j.at("pim_levels").get<std::vector<int>>();
  c.anchor_scales = j.at("anchor_scales").get<std::vector<double>>();
  c.rpn_pre_nms = j.at("rpn_pre_nms").get<int>();
  c.rpn_nms_iou = j.at("rpn_nms_iou").get<double>();
  c.proposals_train = j.at("proposals_train").get<int>();
  c.proposals_test = j.at("proposals_test").get<int>();
  c.box_nms_iou = j.at("box_nms_iou").get<double>();
  c.max_detections = j.at("max_detections").get<int>();
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const nlohmann::json& extra) {
  std::vector<TableEntry> table;
  for (const auto& e : state.student.params().entries()) {
    table.push_back({"student." + e.name, &e.var.value()});
  }
  for (const auto& e : state.teacher.params().entries()) {
    table.push_back({"teacher." + e.name, &e.var.value()});
  }
  const auto& names = state.student.params().entries();
  for (std::size_t i = 0; i < state.momentum.size(); ++i) {
    table.push_back({"momentum." + names[i].name, &state.momentum[i]});
  }

  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : table) {
    params.push_back({{"name", t.name},
                      {"shape", t.tensor->shape()},
                      {"dtype", "f64"},
                      {"offset", offset}});
    offset += t.tensor->size();
  }
  const nlohmann::json header = {
      {"format", kCheckpointMagic},
      {"state",
       {{"step", state.step},
        {"lambda_u", state.lambda_u},
        {"lambda_e", state.lambda_e},
        {"lambda_p", state.lambda_p},
        {"t", state.thresholds.t},
        {"alpha", state.thresholds.alpha},
        {"burn_in_steps", state.burn_in_steps}}},
      {"detector", detector_config_to_json(state.student.config())},
      {"extra", extra},
      {"parameters", params}};
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, kMagicLength);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : table) {
      out.write(reinterpret_cast<const char*>(t.tensor->data()),
                static_cast<std::streamsize>(t.tensor->size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string magic(kMagicLength, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(kMagicLength));
  if (!in || magic != kCheckpointMagic) {
    std::string shown;
    for (char c : magic.substr(0, static_cast<std::size_t>(in.gcount()))) {
      shown += (c >= 32 && c < 127) ? c : '?';
    }
    throw CheckpointError("checkpoint version mismatch in " + path.string() + ": expected magic '" +
                          kCheckpointMagic + "', found '" + shown + "'");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 30)) throw CheckpointError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("unreadable checkpoint header in " + path.string() + ": " + e.what());
  }

  const auto payload_start = in.tellg();
  const DetectorConfig config = detector_config_from_json(header.at("detector"));
  ParameterSet student_params = Detector::init_parameters(config, 0, true);
  ParameterSet teacher_params = Detector::init_parameters(config, 0, false);
  std::vector<Tensor> momentum;
  for (const auto& e : student_params.entries()) momentum.push_back(Tensor::zeros_like(e.var.value()));

  auto find_tensor = [&](const std::string& name) -> Tensor* {
    const auto dot = name.find('.');
    const std::string group = name.substr(0, dot), rest = name.substr(dot + 1);
    if (group == "student" && student_params.contains(rest)) {
      return &student_params.get(rest).mutable_value();
    }
    if (group == "teacher" && teacher_params.contains(rest)) {
      return &teacher_params.get(rest).mutable_value();
    }
    if (group == "momentum") {
      const auto& entries = student_params.entries();
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name == rest) return &momentum[i];
      }
    }
    return nullptr;
  };

  std::size_t loaded = 0;
  for (const auto& p : header.at("parameters")) {
    const auto name = p.at("name").get<std::string>();
    if (p.at("dtype").get<std::string>() != "f64") {
      throw CheckpointError("parameter " + name + " has unsupported dtype");
    }
    Tensor* t = find_tensor(name);
    if (!t) throw CheckpointError("checkpoint parameter " + name + " is unknown to the detector");
    const auto shape = p.at("shape").get<std::vector<int>>();
    if (shape != t->shape()) {
      throw CheckpointError("checkpoint parameter " + name + " has shape " + shape_string(shape) +
                            ", expected " + shape_string(t->shape()));
    }
    in.seekg(payload_start + static_cast<std::streamoff>(p.at("offset").get<std::uint64_t>() *
                                                         sizeof(double)));
    in.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!in) throw CheckpointError("truncated payload for " + name + " in " + path.string());
    ++loaded;
  }
  const std::size_t expected = 3 * student_params.size();
  if (loaded != expected) {
    throw CheckpointError("checkpoint holds " + std::to_string(loaded) + " tensors, expected " +
                          std::to_string(expected));
  }

  TrainState state(Detector(config, std::move(student_params)),
                   Detector(config, std::move(teacher_params)));
  state.momentum = std::move(momentum);
  const auto& s = header.at("state");
  state.step = s.at("step").get<std::int64_t>();
  state.lambda_u = s.at("lambda_u").get<double>();
  state.lambda_e = s.at("lambda_e").get<double>();
  state.lambda_p = s.at("lambda_p").get<double>();
  state.thresholds.t = s.at("t").get<double>();
  state.thresholds.alpha = s.at("alpha").get<double>();
  state.burn_in_steps = s.at("burn_in_steps").get<int>();
  return {std::move(state), header.value("extra", nlohmann::json::object())};
}

}  // namespace lsm
