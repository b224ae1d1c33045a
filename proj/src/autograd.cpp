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

#include "lsm/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace lsm::ag {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

Var make_result(Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var::from_node(std::move(node));
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " +
                                std::to_string(rank) + ", got " +
                                shape_string(t.shape()));
  }
}

// Unfolds [C, H, W] into [C*k*k, Ho*Wo].
void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo,
            std::vector<double>& cols) {
  const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  cols.assign(static_cast<std::size_t>(c_in) * k * k * ho * wo, 0.0);
  std::size_t row = 0;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = cols.data() + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = x.data() + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[oy * wo + ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im_accumulate(const double* cols, int k, int stride, int pad, int ho,
                       int wo, Tensor& dx) {
  const int c_in = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  std::size_t row = 0;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = cols + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx.data() + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

void log_softmax_row(const double* z, int k, double* out) {
  double m = z[0];
  for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
  double s = 0;
  for (int j = 0; j < k; ++j) s += std::exp(z[j] - m);
  const double lse = m + std::log(s);
  for (int j = 0; j < k; ++j) out[j] = z[j] - lse;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return from_node(std::move(node));
}

Var Var::leaf(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return from_node(std::move(node));
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

double scalar(const Var& v) {
  if (v.value().size() != 1) {
    throw std::invalid_argument("scalar(): tensor has shape " +
                                shape_string(v.shape()));
  }
  return v.value()[0];
}

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw std::invalid_argument("backward() requires a single-element root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_rank(x.value(), 3, "conv2d input");
  require_rank(w.value(), 4, "conv2d weight");
  const int c_in = x.value().dim(0), h = x.value().dim(1), wd = x.value().dim(2);
  const int c_out = w.value().dim(0), k = w.value().dim(2);
  if (w.value().dim(1) != c_in || w.value().dim(3) != k) {
    throw std::invalid_argument("conv2d: weight " + shape_string(w.shape()) +
                                " incompatible with input " + shape_string(x.shape()));
  }
  if (b.value().size() != static_cast<std::size_t>(c_out)) {
    throw std::invalid_argument("conv2d: bias size mismatch");
  }
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input too small");

  auto cols = std::make_shared<std::vector<double>>();
  im2col(x.value(), k, stride, pad, ho, wo, *cols);
  const int kk = c_in * k * k, hw = ho * wo;

  Tensor out({c_out, ho, wo});
  MatMap out_m(out.data(), c_out, hw);
  ConstMatMap w_m(w.value().data(), c_out, kk);
  ConstMatMap cols_m(cols->data(), kk, hw);
  out_m.noalias() = w_m * cols_m;
  for (int o = 0; o < c_out; ++o) out_m.row(o).array() += b.value()[o];

  return make_result(std::move(out), {x, w, b},
                     [cols, k, stride, pad, ho, wo, kk, hw, c_out](Node& self) {
                       ConstMatMap g(self.grad.data(), c_out, hw);
                       ConstMatMap cols_m(cols->data(), kk, hw);
                       Node& xn = *self.parents[0];
                       Node& wn = *self.parents[1];
                       Node& bn = *self.parents[2];
                       if (wn.requires_grad) {
                         MatMap gw(wn.grad_buffer().data(), c_out, kk);
                         gw.noalias() += g * cols_m.transpose();
                       }
                       if (bn.requires_grad) {
                         Tensor& gb = bn.grad_buffer();
                         for (int o = 0; o < c_out; ++o) gb[o] += g.row(o).sum();
                       }
                       if (xn.requires_grad) {
                         ConstMatMap w_m(wn.value.data(), c_out, kk);
                         RowMatrix dcols = w_m.transpose() * g;
                         col2im_accumulate(dcols.data(), k, stride, pad, ho, wo,
                                           xn.grad_buffer());
                       }
                     });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0 ? v : 0;
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& xn = *self.parents[0];
    Tensor& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xn.value[i] > 0) gx[i] += self.grad[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw std::invalid_argument("add: shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var upsample_nearest(const Var& x, int out_h, int out_w) {
  require_rank(x.value(), 3, "upsample_nearest");
  const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  std::vector<int> ys(out_h), xs(out_w);
  for (int y = 0; y < out_h; ++y) ys[y] = std::min(h - 1, y * h / out_h);
  for (int xx = 0; xx < out_w; ++xx) xs[xx] = std::min(w - 1, xx * w / out_w);
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx) out.at(ch, y, xx) = x.value().at(ch, ys[y], xs[xx]);
  return make_result(std::move(out), {x}, [ys, xs, c, out_h, out_w](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) g.at(ch, ys[y], xs[xx]) += self.grad.at(ch, y, xx);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank(x.value(), 2, "linear input");
  require_rank(w.value(), 2, "linear weight");
  const int n = x.value().dim(0), d = x.value().dim(1), o = w.value().dim(0);
  if (w.value().dim(1) != d || b.value().size() != static_cast<std::size_t>(o)) {
    throw std::invalid_argument("linear: weight " + shape_string(w.shape()) +
                                " incompatible with input " + shape_string(x.shape()));
  }
  Tensor out({n, o});
  if (n > 0) {
    MatMap out_m(out.data(), n, o);
    ConstMatMap x_m(x.value().data(), n, d);
    ConstMatMap w_m(w.value().data(), o, d);
    out_m.noalias() = x_m * w_m.transpose();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < o; ++j) out_m(i, j) += b.value()[j];
  }
  return make_result(std::move(out), {x, w, b}, [n, d, o](Node& self) {
    if (n == 0) return;
    ConstMatMap g(self.grad.data(), n, o);
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    if (xn.requires_grad) {
      MatMap gx(xn.grad_buffer().data(), n, d);
      gx.noalias() += g * ConstMatMap(wn.value.data(), o, d);
    }
    if (wn.requires_grad) {
      MatMap gw(wn.grad_buffer().data(), o, d);
      gw.noalias() += g.transpose() * ConstMatMap(xn.value.data(), n, d);
    }
    if (bn.requires_grad) {
      Tensor& gb = bn.grad_buffer();
      for (int j = 0; j < o; ++j) gb[j] += g.col(j).sum();
    }
  });
}

Var flatten_rows(const Var& x) {
  const int n = x.value().rank() == 0 ? 0 : x.value().dim(0);
  const int d = n == 0 ? 0 : static_cast<int>(x.value().size() / n);
  int width = d;
  if (n == 0) {
    width = 1;
    for (int i = 1; i < x.value().rank(); ++i) width *= x.value().dim(i);
  }
  return make_result(x.value().reshaped({n, width}), {x}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) {
    throw std::invalid_argument("weighted_sum: terms/weights size mismatch");
  }
  double total = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) total += weights[i] * scalar(terms[i]);
  std::vector<double> w(weights.begin(), weights.end());
  return make_result(Tensor({1}, total), std::vector<Var>(terms.begin(), terms.end()),
                     [w](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         if (!self.parents[i]->requires_grad) continue;
                         self.parents[i]->grad_buffer()[0] += w[i] * self.grad[0];
                       }
                     });
}

namespace {

// Four bilinear taps for one sample point; weights already divided by the
// number of samples per bin.
struct Tap {
  int level;
  std::size_t offset[4];
  double weight[4];
  bool valid;
};

Tap bilinear_tap(int level, int h, int w, double y, double x, double norm) {
  Tap t{};
  t.level = level;
  if (y < -1.0 || y > h || x < -1.0 || x > w) {
    t.valid = false;
    return t;
  }
  t.valid = true;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1 - ly, hx = 1 - lx;
  t.offset[0] = static_cast<std::size_t>(y0) * w + x0;
  t.offset[1] = static_cast<std::size_t>(y0) * w + x1;
  t.offset[2] = static_cast<std::size_t>(y1) * w + x0;
  t.offset[3] = static_cast<std::size_t>(y1) * w + x1;
  t.weight[0] = hy * hx * norm;
  t.weight[1] = hy * lx * norm;
  t.weight[2] = ly * hx * norm;
  t.weight[3] = ly * lx * norm;
  return t;
}

}  // namespace

Var roi_align(std::span<const Var> levels, std::span<const RoiBox> rois,
              int out_size, int sampling_ratio) {
  if (levels.empty()) throw std::invalid_argument("roi_align: no feature levels");
  const int channels = levels[0].value().dim(0);
  for (const auto& l : levels) {
    require_rank(l.value(), 3, "roi_align level");
    if (l.value().dim(0) != channels) {
      throw std::invalid_argument("roi_align: levels disagree on channel count");
    }
  }
  const int n = static_cast<int>(rois.size());
  const int bins = out_size * out_size;
  const int per_bin = sampling_ratio * sampling_ratio;
  const double norm = 1.0 / per_bin;

  // taps[(roi * bins + bin) * per_bin + s]
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(n) * bins * per_bin);
  for (int r = 0; r < n; ++r) {
    const RoiBox& roi = rois[r];
    if (roi.level < 0 || roi.level >= static_cast<int>(levels.size())) {
      throw std::out_of_range("roi_align: roi assigned to level " +
                              std::to_string(roi.level) + " which is absent");
    }
    const int h = levels[roi.level].value().dim(1), w = levels[roi.level].value().dim(2);
    const double rw = std::max(roi.x2 - roi.x1, 1e-6);
    const double rh = std::max(roi.y2 - roi.y1, 1e-6);
    const double bw = rw / out_size, bh = rh / out_size;
    for (int py = 0; py < out_size; ++py) {
      for (int px = 0; px < out_size; ++px) {
        for (int sy = 0; sy < sampling_ratio; ++sy) {
          for (int sx = 0; sx < sampling_ratio; ++sx) {
            const double y = roi.y1 + py * bh + (sy + 0.5) * bh / sampling_ratio;
            const double x = roi.x1 + px * bw + (sx + 0.5) * bw / sampling_ratio;
            (*taps)[((static_cast<std::size_t>(r) * bins + py * out_size + px) * per_bin) +
                    sy * sampling_ratio + sx] = bilinear_tap(roi.level, h, w, y, x, norm);
          }
        }
      }
    }
  }

  Tensor out({n, channels, out_size, out_size});
  for (int r = 0; r < n; ++r) {
    for (int bin = 0; bin < bins; ++bin) {
      const Tap* tp = &(*taps)[(static_cast<std::size_t>(r) * bins + bin) * per_bin];
      for (int c = 0; c < channels; ++c) {
        double acc = 0;
        for (int s = 0; s < per_bin; ++s) {
          const Tap& t = tp[s];
          if (!t.valid) continue;
          const Tensor& f = levels[t.level].value();
          const double* plane = f.data() + static_cast<std::size_t>(c) * f.dim(1) * f.dim(2);
          acc += t.weight[0] * plane[t.offset[0]] + t.weight[1] * plane[t.offset[1]] +
                 t.weight[2] * plane[t.offset[2]] + t.weight[3] * plane[t.offset[3]];
        }
        out[(static_cast<std::size_t>(r) * channels + c) * bins + bin] = acc;
      }
    }
  }

  return make_result(std::move(out), std::vector<Var>(levels.begin(), levels.end()),
                     [taps, n, bins, per_bin, channels](Node& self) {
                       for (int r = 0; r < n; ++r) {
                         for (int bin = 0; bin < bins; ++bin) {
                           const Tap* tp =
                               &(*taps)[(static_cast<std::size_t>(r) * bins + bin) * per_bin];
                           for (int s = 0; s < per_bin; ++s) {
                             const Tap& t = tp[s];
                             if (!t.valid) continue;
                             Node& lvl = *self.parents[t.level];
                             if (!lvl.requires_grad) continue;
                             Tensor& g = lvl.grad_buffer();
                             const std::size_t plane_size =
                                 static_cast<std::size_t>(g.dim(1)) * g.dim(2);
                             for (int c = 0; c < channels; ++c) {
                               const double go =
                                   self.grad[(static_cast<std::size_t>(r) * channels + c) * bins +
                                             bin];
                               double* plane = g.data() + c * plane_size;
                               for (int q = 0; q < 4; ++q) plane[t.offset[q]] += t.weight[q] * go;
                             }
                           }
                         }
                       }
                     });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels,
                          double normalizer) {
  require_rank(logits.value(), 2, "softmax_cross_entropy");
  const int n = logits.value().dim(0), k = logits.value().dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  }
  auto logp = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * k);
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw std::out_of_range("softmax_cross_entropy: label out of range");
    }
    log_softmax_row(logits.value().data() + static_cast<std::size_t>(i) * k, k,
                    logp->data() + static_cast<std::size_t>(i) * k);
    loss -= (*logp)[static_cast<std::size_t>(i) * k + labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result(Tensor({1}, loss / normalizer), {logits},
                     [logp, lab, n, k, normalizer](Node& self) {
                       Tensor& g = self.parents[0]->grad_buffer();
                       const double go = self.grad[0] / normalizer;
                       for (int i = 0; i < n; ++i) {
                         for (int j = 0; j < k; ++j) {
                           const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                           g[idx] += go * (std::exp((*logp)[idx]) - (j == lab[i] ? 1.0 : 0.0));
                         }
                       }
                     });
}

Var smooth_l1(const Var& pred, std::span<const SparseTarget> targets, double beta,
              double normalizer) {
  double loss = 0;
  std::vector<SparseTarget> tg(targets.begin(), targets.end());
  for (const auto& t : tg) {
    if (t.index >= pred.value().size()) throw std::out_of_range("smooth_l1: index");
    const double d = std::abs(pred.value()[t.index] - t.target);
    loss += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  return make_result(Tensor({1}, loss / normalizer), {pred},
                     [tg, beta, normalizer](Node& self) {
                       Node& p = *self.parents[0];
                       Tensor& g = p.grad_buffer();
                       const double go = self.grad[0] / normalizer;
                       for (const auto& t : tg) {
                         const double d = p.value[t.index] - t.target;
                         const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
                         g[t.index] += go * dd;
                       }
                     });
}

Var sigmoid_bce(const Var& logits, std::span<const SparseTarget> targets,
                double normalizer) {
  double loss = 0;
  std::vector<SparseTarget> tg(targets.begin(), targets.end());
  for (const auto& t : tg) {
    if (t.index >= logits.value().size()) throw std::out_of_range("sigmoid_bce: index");
    const double z = logits.value()[t.index];
    // log(1 + exp(-|z|)) + max(z, 0) - z * y
    loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * t.target;
  }
  return make_result(Tensor({1}, loss / normalizer), {logits},
                     [tg, normalizer](Node& self) {
                       Node& p = *self.parents[0];
                       Tensor& g = p.grad_buffer();
                       const double go = self.grad[0] / normalizer;
                       for (const auto& t : tg) {
                         const double z = p.value[t.index];
                         const double s = 1.0 / (1.0 + std::exp(-z));
                         g[t.index] += go * (s - t.target);
                       }
                     });
}

Var kl_divergence(const Var& target_logits, const Var& input_logits) {
  require_rank(target_logits.value(), 2, "kl_divergence");
  if (!target_logits.value().same_shape(input_logits.value())) {
    throw std::invalid_argument("kl_divergence: shape mismatch");
  }
  const int n = target_logits.value().dim(0), k = target_logits.value().dim(1);
  if (n == 0) return Var::constant(Tensor({1}, 0.0));
  auto logp = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * k);
  auto logq = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * k);
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * k;
    log_softmax_row(target_logits.value().data() + off, k, logp->data() + off);
    log_softmax_row(input_logits.value().data() + off, k, logq->data() + off);
    for (int j = 0; j < k; ++j) {
      loss += std::exp((*logp)[off + j]) * ((*logp)[off + j] - (*logq)[off + j]);
    }
  }
  return make_result(
      Tensor({1}, loss / n), {target_logits, input_logits},
      [logp, logq, n, k](Node& self) {
        const double go = self.grad[0] / n;
        Node& tn = *self.parents[0];
        Node& in = *self.parents[1];
        for (int i = 0; i < n; ++i) {
          const std::size_t off = static_cast<std::size_t>(i) * k;
          if (tn.requires_grad) {
            // d/dz_j sum_k p_k (log p_k - log q_k) = p_j (g_j - sum_k p_k g_k)
            double mean_g = 0;
            for (int j = 0; j < k; ++j) {
              mean_g += std::exp((*logp)[off + j]) * ((*logp)[off + j] - (*logq)[off + j]);
            }
            Tensor& g = tn.grad_buffer();
            for (int j = 0; j < k; ++j) {
              const double p = std::exp((*logp)[off + j]);
              g[off + j] += go * p * (((*logp)[off + j] - (*logq)[off + j]) - mean_g);
            }
          }
          if (in.requires_grad) {
            Tensor& g = in.grad_buffer();
            for (int j = 0; j < k; ++j) {
              g[off + j] += go * (std::exp((*logq)[off + j]) - std::exp((*logp)[off + j]));
            }
          }
        }
      });
}

}  // namespace lsm::ag
