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

// Reverse-mode automatic differentiation over float64 tensors.
//
// Graphs are built dynamically: every op returns a Var whose node keeps its
// parents and a closure that pushes the node's gradient back into them. Ops
// whose inputs carry no gradient produce constant nodes, so a forward pass on
// frozen parameters (the teacher) records nothing.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "lsm/tensor.hpp"

namespace lsm::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var leaf(Tensor value);

  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor& value() const { return node_->value; }
  // Only meaningful on leaves (parameters updated in place).
  Tensor& mutable_value() { return node_->value; }

  // Empty tensor when no gradient has been accumulated.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  const std::vector<int>& shape() const { return node_->value.shape(); }
  const Node* id() const { return node_.get(); }
  const std::shared_ptr<Node>& node() const { return node_; }

  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

/// Backpropagates from a single-element root, seeding d(root)/d(root) = 1.
void backward(const Var& root);

double scalar(const Var& v);

// --- dense ops -------------------------------------------------------------

/// x: [C, H, W], w: [O, C, k, k], b: [O] -> [O, Ho, Wo].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
/// Nearest-neighbour resize of [C, h, w] to [C, out_h, out_w].
Var upsample_nearest(const Var& x, int out_h, int out_w);
/// x: [n, d], w: [o, d], b: [o] -> [n, o].
Var linear(const Var& x, const Var& w, const Var& b);
/// Collapses all trailing dims: [n, ...] -> [n, prod(...)].
Var flatten_rows(const Var& x);
Var scale(const Var& x, double factor);
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

/// Region in the feature grid of `level`, corner form, already scaled and
/// offset into continuous feature coordinates.
struct RoiBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int level = 0;
};

/// Bilinear crop-and-resize (align style) of each region from its level to
/// [n, C, out, out]. All levels must share the channel count.
Var roi_align(std::span<const Var> levels, std::span<const RoiBox> rois,
              int out_size, int sampling_ratio);

// --- losses (all return a [1] scalar) -------------------------------------

/// Sum over rows of cross-entropy(softmax(logits[i]), labels[i]) / normalizer.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels,
                          double normalizer);

struct SparseTarget {
  std::size_t index = 0;
  double target = 0;
};

/// Sum of smooth-L1(pred[index] - target) over entries / normalizer.
Var smooth_l1(const Var& pred, std::span<const SparseTarget> targets,
              double beta, double normalizer);

/// Sum of sigmoid binary cross-entropy over entries / normalizer.
Var sigmoid_bce(const Var& logits, std::span<const SparseTarget> targets,
                double normalizer);

/// Mean over rows of KL(softmax(target_logits) || softmax(input_logits)).
/// Both operands receive gradients.
Var kl_divergence(const Var& target_logits, const Var& input_logits);

}  // namespace lsm::ag
