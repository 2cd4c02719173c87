// Copyright 2026 The AnyExperts Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <variant>
#include <vector>

#include <gtest/gtest.h>

#include "anyexperts/errors.hpp"
#include "anyexperts/harness/grad_suites.hpp"
#include "anyexperts/moe_layer.hpp"
#include "anyexperts/ops.hpp"

namespace anyexperts {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
  return m;
}

LayerConfig small_layer(std::size_t d = 8, std::size_t d_ff = 16) {
  LayerConfig cfg;
  cfg.dim = d;
  cfg.d_ff = d_ff;
  cfg.router.e_real = 4;
  cfg.router.e_virtual = 2;
  cfg.router.k_min = 2;
  cfg.router.k_max = 4;
  cfg.router.rho_max = 0.34;
  cfg.router.alpha = 0.1;
  return cfg;
}

HiddenBatch batch_of(Matrix h) {
  HiddenBatch b;
  b.modality.assign(h.rows(), Modality::kText);
  b.hidden = std::move(h);
  return b;
}

// Straight-line recomputation of the layer with plain loops.
Matrix oracle_forward(const AnyExpertsLayer& layer, const Matrix& h) {
  const LayerConfig& cfg = layer.config();
  const RouterConfig& rc = cfg.router;
  const std::size_t n = h.rows(), d = h.cols(), E = rc.num_experts();
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += h(i, j);
    mean /= d;
    for (std::size_t j = 0; j < d; ++j) var += (h(i, j) - mean) * (h(i, j) - mean);
    var /= d;
    std::vector<double> a(d);
    for (std::size_t j = 0; j < d; ++j) {
      a[j] = layer.estimator.norm_gain.value[j] * (h(i, j) - mean) /
                 std::sqrt(var + ImportanceEstimator::kNormEps) +
             layer.estimator.norm_bias.value[j];
    }
    for (std::size_t l = 0; l < layer.estimator.layers.size(); ++l) {
      const Matrix& W = layer.estimator.layers[l].weight.value;
      const Matrix& B = layer.estimator.layers[l].bias.value;
      std::vector<double> next(W.cols());
      for (std::size_t q = 0; q < W.cols(); ++q) {
        double acc = B[q];
        for (std::size_t p = 0; p < W.rows(); ++p) acc += a[p] * W(p, q);
        next[q] = (l + 1 < layer.estimator.layers.size()) ? std::max(acc, 0.0) : acc;
      }
      a = next;
    }
    const double w = 1.0 / (1.0 + std::exp(-a[0]));
    std::vector<double> hf(d);
    for (std::size_t j = 0; j < d; ++j) hf[j] = h(i, j) * (1.0 + rc.alpha * w);

    std::vector<double> mod(E);
    for (std::size_t e = 0; e < E; ++e) {
      double r = layer.gate.bias.value[e];
      for (std::size_t j = 0; j < d; ++j) r += hf[j] * layer.gate.weight.value(j, e);
      mod[e] = r * (e < rc.e_real ? 1.0 + rc.alpha * w : 1.0 - rc.alpha * w);
    }
    const double k_raw = rc.k_min + (rc.k_max - rc.k_min) * w;
    const auto k_hat = static_cast<std::size_t>(std::min<double>(rc.k_max, std::floor(k_raw + 0.5)));
    const auto cap = static_cast<std::size_t>(std::floor(rc.rho_max * k_hat));
    std::vector<std::size_t> order(E);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return mod[x] > mod[y] || (mod[x] == mod[y] && x < y);
    });
    std::vector<std::size_t> sel;
    std::size_t nv = 0;
    for (std::size_t e : order) {
      if (sel.size() == k_hat) break;
      if (e >= rc.e_real) {
        if (nv == cap) continue;
        ++nv;
      }
      sel.push_back(e);
    }
    double S = 0.0;
    for (std::size_t e : sel) S += 1.0 / (1.0 + std::exp(-mod[e]));
    for (std::size_t e : sel) {
      const double g = (1.0 / (1.0 + std::exp(-mod[e]))) / (S + rc.eps) * rc.lambda;
      std::vector<double> y(d);
      if (e < rc.e_real) {
        const RealExpert& ex = std::get<RealExpert>(layer.experts[e]);
        std::vector<double> hid(cfg.d_ff);
        for (std::size_t q = 0; q < cfg.d_ff; ++q) {
          double acc = ex.b1.value[q];
          for (std::size_t j = 0; j < d; ++j) acc += hf[j] * ex.w1.value(j, q);
          hid[q] = std::max(acc, 0.0);
        }
        for (std::size_t j = 0; j < d; ++j) {
          double acc = ex.b2.value[j];
          for (std::size_t q = 0; q < cfg.d_ff; ++q) acc += hid[q] * ex.w2.value(q, j);
          y[j] = acc;
        }
      } else {
        y = hf;
      }
      for (std::size_t j = 0; j < d; ++j) out(i, j) += g * y[j];
    }
  }
  return out;
}

TEST(Experts, VirtualExpertsHoldNoParameters) {
  Rng rng(1);
  AnyExpertsLayer layer(small_layer(), rng);
  ASSERT_EQ(layer.experts.size(), 6u);
  for (std::size_t e = 0; e < 6; ++e) {
    EXPECT_EQ(std::holds_alternative<VirtualExpert>(layer.experts[e]), e >= 4) << e;
  }
  std::size_t expert_params = 0;
  for (const Parameter* p : layer.parameters()) {
    if (p->name.rfind("expert.", 0) == 0) expert_params += p->value.size();
  }
  EXPECT_EQ(expert_params, 4u * (8 * 16 + 16 + 16 * 8 + 8));
}

TEST(Experts, ZeroInputWithZeroBiasesGivesZero) {
  Rng rng(2);
  RealExpert ex(5, 10, rng, "expert.0");
  EXPECT_EQ(ex.forward(Matrix(3, 5)), Matrix(3, 5));
}

TEST(LoadStats, HandBuiltBatch) {
  std::vector<RoutingDecision> ds(4);
  const std::vector<std::vector<std::size_t>> sel{{0, 2}, {0, 3}, {0, 2}, {1, 3}};
  for (std::size_t i = 0; i < 4; ++i) {
    ds[i].selected = sel[i];
    ds[i].k_hat = 2;
    ds[i].k_virtual = 1;
    ds[i].k_real = 1;
  }
  Matrix probs(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    probs(i, 0) = 0.4;
    probs(i, 1) = 0.1;
    probs(i, 2) = 0.3;
    probs(i, 3) = 0.2;
  }
  const LoadStats s = load_stats(ds, probs, 2, 2);
  EXPECT_EQ(s.c, (std::vector<double>{3, 1}));
  EXPECT_EQ(s.t_virtual, 4.0);
  EXPECT_EQ(s.f, (std::vector<double>{0.75, 0.25, 0.5, 0.5}));
  // 0.75*0.4 + 0.25*0.1 + 0.5*0.3 + 0.5*0.2
  EXPECT_NEAR(balance_loss(s), 0.575, 1e-12);
  EXPECT_EQ(s.avg_k_hat, 2.0);
  EXPECT_EQ(s.virtual_share, 0.5);

  Tape tape;
  EXPECT_NEAR(balance_loss(tape.constant(probs), s).scalar(), 0.575, 1e-12);
}

TEST(LoadStats, ValidateCatchesInconsistentCounts) {
  std::vector<RoutingDecision> ds(2);
  ds[0].selected = {0, 1};
  ds[0].k_hat = 2;
  ds[1].selected = {1};
  ds[1].k_hat = 1;
  LoadStats s = load_stats(ds, Matrix(2, 2, 0.5), 2, 0);
  EXPECT_NO_THROW(s.validate());
  s.c[0] += 1.0;
  EXPECT_THROW(s.validate(), ContractError);
}

TEST(BalanceLoss, UniformRouting) {
  // 6 tokens, E=4, each token takes 2 experts so every expert carries 3.
  std::vector<RoutingDecision> ds(6);
  for (std::size_t i = 0; i < 6; ++i) {
    ds[i].selected = {i % 4, (i + 2) % 4};
    ds[i].k_hat = 2;
  }
  // expert loads: 0:{0,2,4}... each expert appears in 3 tokens
  const LoadStats s = load_stats(ds, Matrix(6, 4, 0.25), 4, 0);
  for (double c : s.c) ASSERT_EQ(c, 3.0);
  EXPECT_DOUBLE_EQ(balance_loss(s), (12.0 / 6.0) / 4.0);
}

TEST(BalanceLoss, ScaleFreeInCountsAndTokens) {
  Rng rng(3);
  std::vector<RoutingDecision> ds(5);
  Matrix probs(5, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    ds[i].selected = {rng.below(3), 3 + rng.below(2)};
    if (ds[i].selected[0] == 0) ds[i].selected.push_back(1);
    ds[i].k_hat = ds[i].selected.size();
    double z = 0.0;
    for (std::size_t k = 0; k < 5; ++k) z += probs(i, k) = rng.uniform(0.1, 1.0);
    for (std::size_t k = 0; k < 5; ++k) probs(i, k) /= z;
  }
  std::vector<RoutingDecision> doubled = ds;
  doubled.insert(doubled.end(), ds.begin(), ds.end());
  Matrix probs2(10, 5);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t k = 0; k < 5; ++k) probs2(i, k) = probs(i % 5, k);
  EXPECT_NEAR(balance_loss(load_stats(ds, probs, 3, 2)), balance_loss(load_stats(doubled, probs2, 3, 2)),
              1e-15);
}

TEST(LmLoss, Examples) {
  const std::vector<std::size_t> t0{0};
  EXPECT_NEAR(lm_loss(Matrix{{0, 0}}, t0), std::log(2.0), 1e-15);
  EXPECT_LT(lm_loss(Matrix{{20, -20}}, t0), 1e-8);
  EXPECT_THROW(lm_loss(Matrix{{0, 0}}, std::vector<std::size_t>{2}), ContractError);
  EXPECT_THROW(lm_loss(Matrix(2, 2), t0), DimensionError);
}

TEST(LmLoss, MatchesScalarRecomputation) {
  Rng rng(4);
  const Matrix logits = random_matrix(4, 8, rng);
  const std::vector<std::size_t> targets{3, 0, 7, 3};
  long double acc = 0.0L;
  for (std::size_t i = 0; i < 4; ++i) {
    long double z = 0.0L;
    for (std::size_t k = 0; k < 8; ++k) z += std::exp(static_cast<long double>(logits(i, k)));
    acc += std::log(z) - logits(i, targets[i]);
  }
  const double want = static_cast<double>(acc / 4.0L);
  EXPECT_NEAR(lm_loss(logits, targets), want, 1e-12);
  Tape tape;
  EXPECT_NEAR(lm_loss(tape.constant(logits), targets).scalar(), want, 1e-12);
}

TEST(TotalLoss, Examples) {
  EXPECT_EQ(total_loss(1.0, 0.0, 0.0).total, 1.0);
  EXPECT_DOUBLE_EQ(total_loss(0.0, 1.0, 1.0).total, 0.011);
  EXPECT_DOUBLE_EQ(total_loss(0.7, 0.25, 0.05).total, 0.70075);
  const LossBundle b = total_loss(0.7, 0.25, 0.05);
  EXPECT_EQ(b.total, b.lm + b.lambda_tir * b.tir + b.lambda_bal * b.balance);
}

TEST(Forward, AllVirtualSelectionReturnsFusedInput) {
  Rng rng(5);
  LayerConfig cfg = small_layer();
  cfg.router.eps = 1e-300;  // single expert: gamma is exactly one
  AnyExpertsLayer layer(cfg, rng);
  const HiddenBatch h = batch_of(random_matrix(5, 8, rng));
  ForwardOptions opt;
  opt.selection_override = [](std::size_t, std::span<const double>, std::size_t) {
    return std::vector<std::size_t>{5};
  };
  const AnyExpertsLayer::Output out = layer.forward(h, cfg.router, opt);
  for (const RoutingDecision& d : out.decisions) ASSERT_EQ(d.gamma, (std::vector<double>{1.0}));
  EXPECT_EQ(out.output, out.h_fused);
}

TEST(Forward, IdentityExpertPassesNonNegativeInputs) {
  Rng rng(6);
  LayerConfig cfg = small_layer(4, 4);
  cfg.router.eps = 1e-300;
  AnyExpertsLayer layer(cfg, rng);
  RealExpert& ex = std::get<RealExpert>(layer.experts[0]);
  ex.w1.value = Matrix{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  ex.w2.value = ex.w1.value;
  Matrix h = random_matrix(6, 4, rng);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::abs(h[i]);
  ForwardOptions opt;
  opt.selection_override = [](std::size_t, std::span<const double>, std::size_t) {
    return std::vector<std::size_t>{0};
  };
  const AnyExpertsLayer::Output out = layer.forward(batch_of(h), cfg.router, opt);
  EXPECT_EQ(out.output, out.h_fused);
}

TEST(Forward, MatchesScalarRecomputation) {
  Rng rng(11);
  AnyExpertsLayer layer(small_layer(), rng);
  Rng extra(12);
  harness::randomize_estimator_output(layer.estimator, extra);
  const Matrix h = random_matrix(8, 8, rng);
  const Matrix got = layer.forward(batch_of(h), layer.config().router).output;
  const Matrix want = oracle_forward(layer, h);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12) << i;
}

TEST(Forward, TapeAndPlainPathsAgree) {
  Rng rng(13);
  AnyExpertsLayer layer(small_layer(), rng);
  const Matrix h = random_matrix(7, 8, rng);
  Tape tape;
  const AnyExpertsLayer::Vars v = layer.forward(tape, tape.constant(h), layer.config().router);
  const AnyExpertsLayer::Output o = layer.forward(batch_of(h), layer.config().router);
  EXPECT_EQ(v.output.value(), o.output);
  EXPECT_EQ(v.stats.c, o.stats.c);
}

TEST(Forward, LoadConservationOutputBoundAndVirtualShare) {
  Rng rng(14);
  LayerConfig cfg;
  cfg.dim = 8;
  cfg.d_ff = 16;
  cfg.router.e_real = 16;
  cfg.router.e_virtual = 4;
  AnyExpertsLayer layer(cfg, rng);
  Rng extra(15);
  harness::randomize_estimator_output(layer.estimator, extra);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix h = random_matrix(40, 8, rng);
    const AnyExpertsLayer::Output o = layer.forward(batch_of(h), cfg.router);
    double slots = 0.0, virt = 0.0;
    for (const RoutingDecision& d : o.decisions) {
      slots += d.k_hat;
      virt += d.k_virtual;
    }
    double counted = o.stats.t_virtual;
    for (double c : o.stats.c) counted += c;
    EXPECT_EQ(counted, slots);
    EXPECT_LE(virt / slots, cfg.router.rho_max);
    double f_sum = 0.0;
    for (double f : o.stats.f) f_sum += f;
    EXPECT_NEAR(f_sum, slots / 40.0, 1e-12);
    for (std::size_t k = cfg.router.e_real; k < cfg.router.num_experts(); ++k) {
      EXPECT_DOUBLE_EQ(o.stats.f[k], o.stats.t_virtual / (cfg.router.e_virtual * 40.0));
    }
    for (std::size_t i = 0; i < 40; ++i) {
      const RoutingDecision& d = o.decisions[i];
      const Matrix row = Matrix::row_vector(o.h_fused.row(i));
      double gsum = 0.0, max_norm = 0.0;
      for (std::size_t j = 0; j < d.selected.size(); ++j) {
        gsum += d.gamma[j];
        const std::size_t e = d.selected[j];
        const Matrix y = e < cfg.router.e_real ? std::get<RealExpert>(layer.experts[e]).forward(row) : row;
        double n2 = 0.0;
        for (std::size_t c = 0; c < y.size(); ++c) n2 += y[c] * y[c];
        max_norm = std::max(max_norm, std::sqrt(n2));
      }
      double out2 = 0.0;
      for (double v : o.output.row(i)) out2 += v * v;
      EXPECT_LE(std::sqrt(out2), gsum * max_norm * (1.0 + 1e-12));
    }
  }
}

TEST(Forward, ModalityTagsAreInvisible) {
  Rng rng(16);
  AnyExpertsLayer layer(small_layer(), rng);
  Rng extra(17);
  harness::randomize_estimator_output(layer.estimator, extra);
  HiddenBatch a = batch_of(random_matrix(6, 8, rng));
  HiddenBatch b = a;
  for (std::size_t i = 0; i < 6; ++i) {
    a.modality[i] = i % 2 ? Modality::kImage : Modality::kText;
    b.modality[i] = i % 3 ? Modality::kText : Modality::kImage;
  }
  const auto oa = layer.forward(a, layer.config().router), ob = layer.forward(b, layer.config().router);
  EXPECT_EQ(oa.w, ob.w);
  EXPECT_EQ(oa.output, ob.output);
}

TEST(Forward, BaselinePolicyBypassesTheEstimator) {
  Rng rng(18);
  AnyExpertsLayer layer(small_layer(), rng);
  const Matrix h = random_matrix(5, 8, rng);
  Tape tape;
  const AnyExpertsLayer::Vars v =
      layer.forward(tape, tape.constant(h), BaselineConfig{TopK{2}, layer.config().router.e_real});
  EXPECT_EQ(v.tir.scalar(), 0.0);
  for (const RoutingDecision& d : v.routes.decisions) {
    EXPECT_EQ(d.k_hat, 2u);
    EXPECT_EQ(d.k_virtual, 0u);
  }
  const AnyExpertsLayer::Output o =
      layer.forward(batch_of(h), BaselineConfig{TopK{2}, layer.config().router.e_real});
  EXPECT_EQ(o.h_fused, h);
  EXPECT_TRUE(o.w.empty());
}

TEST(Forward, DimensionMismatchIsReported) {
  Rng rng(19);
  AnyExpertsLayer layer(small_layer(), rng);
  EXPECT_THROW(layer.forward(batch_of(Matrix(3, 5, 1.0)), layer.config().router), DimensionError);
}

TEST(Gradients, FullLayerTotalLossOnFourTokens) {
  Rng rng(20);
  const LayerConfig cfg = small_layer();
  AnyExpertsLayer layer(cfg, rng);
  harness::randomize_estimator_output(layer.estimator, rng);
  const Matrix h = random_matrix(4, 8, rng), c = random_matrix(4, 8, rng);
  harness::FrozenRouting frozen(cfg.router);
  const ForwardOptions opt = frozen.options();
  const GradCheckReport r = check_gradients(
      [&](Tape& t) {
        AnyExpertsLayer::Vars v = layer.forward(t, t.constant(h), cfg.router, opt);
        return total_loss(ops::sum(ops::mul(v.output, t.constant(c))), v.tir, v.balance, LossWeights{});
      },
      layer.parameters(), 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.worst_coordinate;
  EXPECT_EQ(r.failures, 0u);
}

TEST(Gradients, SuitesPass) {
  for (const harness::GradSuite& s : harness::run_gradient_suites()) {
    EXPECT_TRUE(s.report.passed) << s.name << " " << s.report.worst_coordinate;
    EXPECT_GT(s.report.coordinates, 0u) << s.name;
  }
}

}  // namespace
}  // namespace anyexperts
