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

#include <cmath>
#include <functional>
#include <vector>

#include "lsm/autograd.hpp"
#include "lsm/random.hpp"
#include "oracles.hpp"

using namespace lsm;
using ag::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Central differences against backward() on every (or a sampled subset of)
// leaf entries.
void check_gradients(std::vector<Var> leaves, const std::function<Var()>& f,
                     double tol = 1e-6, std::size_t max_checks = 40) {
  for (auto& l : leaves) l.zero_grad();
  Var out = f();
  ag::backward(out);
  std::vector<Tensor> analytic;
  for (auto& l : leaves) analytic.push_back(l.grad().empty() ? Tensor::zeros_like(l.value()) : l.grad());
  const double h = 1e-6;
  Rng rng(99);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& v = leaves[li].mutable_value();
    const std::size_t n = v.size();
    const std::size_t checks = std::min(n, max_checks);
    for (std::size_t c = 0; c < checks; ++c) {
      const std::size_t i = n <= max_checks ? c : static_cast<std::size_t>(rng.next() % n);
      const double orig = v[i];
      v[i] = orig + h;
      const double up = ag::scalar(f());
      v[i] = orig - h;
      const double down = ag::scalar(f());
      v[i] = orig;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(analytic[li][i], numeric, tol * std::max(1.0, std::abs(numeric)))
          << "leaf " << li << " entry " << i;
    }
  }
}

Var sum_all(const Var& x) {
  // Weighted reduction so each entry gets a distinct upstream gradient.
  const std::size_t n = x.value().size();
  std::vector<ag::SparseTarget> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = {i, 0.1 * std::sin(static_cast<double>(i))};
  return ag::smooth_l1(x, t, 1e9, 1.0);
}

}  // namespace

TEST(Autograd, ConvReluLinearGradients) {
  Rng rng(1);
  Var x = Var::leaf(random_tensor({3, 9, 9}, rng));
  Var w = Var::leaf(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
  Var b = Var::leaf(random_tensor({4}, rng));
  Var lw = Var::leaf(random_tensor({5, 5 * 5}, rng, -0.2, 0.2));
  Var lb = Var::leaf(random_tensor({5}, rng));
  check_gradients({x, w, b, lw, lb}, [&] {
    Var y = ag::relu(ag::conv2d(x, w, b, 2, 1));
    Var r = ag::linear(ag::flatten_rows(y), lw, lb);
    return sum_all(r);
  });
}

TEST(Autograd, ConvMatchesDirectSum) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 6, 7}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Var y = ag::conv2d(Var::constant(x), Var::constant(w), Var::constant(b), 2, 1);
  ASSERT_EQ(y.value().dim(1), 3);
  ASSERT_EQ(y.value().dim(2), 4);
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 4; ++ox) {
        double s = b[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 6 || ix < 0 || ix >= 7) continue;
              s += x.at(c, iy, ix) * w[((o * 2 + c) * 3 + ky) * 3 + kx];
            }
        EXPECT_NEAR(y.value().at(o, oy, ox), s, 1e-12);
      }
}

TEST(Autograd, AddUpsampleScaleWeightedSum) {
  Rng rng(3);
  Var a = Var::leaf(random_tensor({2, 3, 3}, rng));
  Var big = Var::leaf(random_tensor({2, 6, 5}, rng));
  check_gradients({a, big}, [&] {
    Var u = ag::upsample_nearest(a, 6, 5);
    Var s = ag::scale(ag::add(u, big), 1.7);
    Var l1 = sum_all(s);
    Var l2 = sum_all(big);
    const std::vector<Var> terms{l1, l2};
    const std::vector<double> weights{0.3, 2.0};
    return ag::weighted_sum(terms, weights);
  });
}

TEST(Autograd, RoiAlignGradientsAndConstantField) {
  Rng rng(4);
  Var l0 = Var::leaf(random_tensor({3, 10, 12}, rng));
  Var l1 = Var::leaf(random_tensor({3, 5, 6}, rng));
  const std::vector<ag::RoiBox> rois{{1.3, 2.1, 7.7, 8.2, 0}, {0.4, 0.2, 4.9, 3.3, 1},
                                     {8.0, 1.0, 11.5, 9.5, 0}};
  check_gradients({l0, l1}, [&] {
    const std::vector<Var> levels{l0, l1};
    return sum_all(ag::roi_align(levels, rois, 3, 2));
  });

  const std::vector<Var> flat{Var::constant(Tensor({2, 8, 8}, 0.25))};
  const std::vector<ag::RoiBox> r{{1.5, 1.5, 6.0, 5.0, 0}};
  const Var out = ag::roi_align(flat, r, 7, 2);
  ASSERT_EQ(out.value().shape(), (std::vector<int>{1, 2, 7, 7}));
  for (std::size_t i = 0; i < out.value().size(); ++i) EXPECT_NEAR(out.value()[i], 0.25, 1e-12);

  const std::vector<ag::RoiBox> bad{{0, 0, 1, 1, 3}};
  EXPECT_THROW(ag::roi_align(flat, bad, 7, 2), std::out_of_range);
}

TEST(Autograd, LossGradients) {
  Rng rng(5);
  Var logits = Var::leaf(random_tensor({4, 5}, rng, -2, 2));
  const std::vector<int> labels{0, 4, 2, 4};
  check_gradients({logits}, [&] { return ag::softmax_cross_entropy(logits, labels, 3.0); });

  Var pred = Var::leaf(random_tensor({12}, rng, -2, 2));
  const std::vector<ag::SparseTarget> t{{0, 0.1}, {3, 1.9}, {7, -1.0}, {11, 0.5}};
  check_gradients({pred}, [&] { return ag::smooth_l1(pred, t, 1.0 / 9, 2.0); });
  const std::vector<ag::SparseTarget> bce{{1, 1.0}, {2, 0.0}, {5, 1.0}};
  check_gradients({pred}, [&] { return ag::sigmoid_bce(pred, bce, 3.0); });

  Var p = Var::leaf(random_tensor({3, 4}, rng, -2, 2));
  Var q = Var::leaf(random_tensor({3, 4}, rng, -2, 2));
  check_gradients({p, q}, [&] { return ag::kl_divergence(p, q); });
}

TEST(Autograd, LossValuesMatchClosedForms) {
  // Uniform logits give ln(k).
  const Var u = Var::constant(Tensor({2, 4}, 0.0));
  const std::vector<int> labels{1, 3};
  EXPECT_NEAR(ag::scalar(ag::softmax_cross_entropy(u, labels, 2.0)), std::log(4.0), 1e-12);

  const Tensor a({1, 3}, {1.0, 2.0, 0.5});
  const Tensor b({1, 3}, {0.0, -1.0, 0.3});
  auto softmax = [](const Tensor& t) {
    std::vector<double> p(t.size());
    double z = 0;
    for (std::size_t i = 0; i < t.size(); ++i) z += std::exp(t[i]);
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = std::exp(t[i]) / z;
    return p;
  };
  EXPECT_NEAR(ag::scalar(ag::kl_divergence(Var::constant(a), Var::constant(b))),
              oracle::kl(softmax(a), softmax(b)), 1e-12);
  EXPECT_NEAR(ag::scalar(ag::kl_divergence(Var::constant(a), Var::constant(a))), 0.0, 1e-15);

  const Var x = Var::constant(Tensor({3}, {0.05, 2.0, -0.5}));
  const std::vector<ag::SparseTarget> t{{0, 0.0}, {1, 0.0}, {2, 0.0}};
  // beta = 0.1: quadratic below, linear above.
  const double expect = 0.5 * 0.05 * 0.05 / 0.1 + (2.0 - 0.05) + (0.5 - 0.05);
  EXPECT_NEAR(ag::scalar(ag::smooth_l1(x, t, 0.1, 1.0)), expect, 1e-12);
}

TEST(Autograd, ConstantsCollectNoGradient) {
  Rng rng(6);
  Var c = Var::constant(random_tensor({2, 3}, rng));
  Var l = Var::leaf(random_tensor({2, 3}, rng));
  EXPECT_FALSE(c.requires_grad());
  Var out = ag::kl_divergence(c, l);
  ag::backward(out);
  EXPECT_TRUE(c.grad().empty());
  EXPECT_FALSE(l.grad().empty());
}
