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

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "anyexperts/errors.hpp"
#include "anyexperts/harness/analysis.hpp"
#include "anyexperts/harness/grad_suites.hpp"
#include "anyexperts/harness/model.hpp"
#include "anyexperts/harness/synthetic.hpp"

namespace anyexperts::harness {
namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.vocab = 32;
  cfg.layer.dim = 16;
  cfg.layer.d_ff = 16;
  cfg.layer.router.e_real = 4;
  cfg.layer.router.e_virtual = 2;
  cfg.layer.router.k_min = 2;
  cfg.layer.router.k_max = 4;
  cfg.layer.router.rho_max = 0.34;
  return cfg;
}

TEST(Synthetic, NoRedundancyMeansEveryTokenIsInformative) {
  for (const SyntheticStream& s : generate(3, 4, 16, 0.0)) {
    EXPECT_EQ(s.redundant_count(), 0u);
    for (bool b : s.informative) EXPECT_TRUE(b);
  }
}

TEST(Synthetic, RedundantCountIsFloorOfImagelikeShare) {
  for (std::size_t len : {4u, 9u, 16u, 33u}) {
    for (double r : {0.25, 0.5, 0.9}) {
      for (const SyntheticStream& s : generate(5, 3, len, r)) {
        EXPECT_EQ(s.redundant_count(), static_cast<std::size_t>(std::floor(r * s.imagelike_count())));
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (!s.informative[i]) {
            EXPECT_EQ(s.modality[i], Modality::kImage);
            EXPECT_LT(s.tokens[i], StreamSpec{}.n_background);
          } else {
            EXPECT_GE(s.tokens[i], StreamSpec{}.n_background);
          }
        }
        EXPECT_EQ(imagelike_spans(s).size(), 1u);
      }
    }
  }
}

TEST(Synthetic, SameSeedSameStreams) {
  const auto a = generate(42, 6, 20, 0.5), b = generate(42, 6, 20, 0.5), c = generate(43, 6, 20, 0.5);
  bool differs = false;
  for (std::size_t s = 0; s < a.size(); ++s) {
    EXPECT_EQ(a[s].tokens, b[s].tokens);
    EXPECT_EQ(a[s].informative, b[s].informative);
    EXPECT_EQ(a[s].targets, b[s].targets);
    differs = differs || a[s].tokens != c[s].tokens;
  }
  EXPECT_TRUE(differs);
}

TEST(Synthetic, TargetsFollowTheLastInformativeToken) {
  const StreamSpec spec{64, 4};
  const auto perm = target_permutation(spec);
  EXPECT_EQ(std::set<std::size_t>(perm.begin(), perm.end()).size(), spec.vocab);
  for (const SyntheticStream& s : generate(9, 8, 24, 0.5, spec)) {
    std::size_t last = s.tokens[0];
    ASSERT_TRUE(s.informative[0]);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.informative[i]) last = s.tokens[i];
      EXPECT_EQ(s.targets[i], perm[last]);
    }
  }
}

TEST(Synthetic, RejectsImpossibleSettings) {
  EXPECT_THROW(generate(1, 1, 16, 1.0), ConfigError);
  EXPECT_THROW(generate(1, 1, 16, -0.1), ConfigError);
  EXPECT_THROW(generate(1, 1, 3, 0.5), ConfigError);
  EXPECT_THROW(generate(1, 1, 16, 0.5, {5, 4}), ConfigError);
  EXPECT_THROW(generate(1, 1, 16, 0.5, {8, 0}), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  Parameter p("p", Matrix{{1.0, -2.0, 0.5}});
  p.grad = Matrix{{0.3, -4.0, 0.0}};
  const ParameterList params{&p};
  AdamState s = AdamState::zeros_like(params);
  adam_update(params, s, {0.1, 0.9, 0.999, 0.0});
  EXPECT_NEAR(p.value[0], 0.9, 1e-12);
  EXPECT_NEAR(p.value[1], -1.9, 1e-12);
  EXPECT_TRUE(std::isnan(p.value[2]));  // 0/0 with eps = 0
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, MatchesRecurrenceOverSeveralSteps) {
  Parameter p("p", Matrix{{2.0}});
  const ParameterList params{&p};
  AdamState s = AdamState::zeros_like(params);
  const AdamConfig cfg{0.05, 0.9, 0.999, 1e-8};
  double x = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    p.grad[0] = 2.0 * p.value[0];
    const double g = 2.0 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    adam_update(params, s, cfg);
    EXPECT_NEAR(p.value[0], x, 1e-14);
  }
  AdamState wrong;
  EXPECT_THROW(adam_update(params, wrong, cfg), InvariantError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  TrainState st = TrainState::initialize(tiny_model(), 4);
  std::vector<Matrix> before;
  for (const Parameter* p : st.model.parameters()) before.push_back(p->value);
  TrainOptions opt;
  opt.steps = 3;
  opt.adam.lr = 0.0;
  const auto data = generate(1, 4, 16, 0.5);
  train(st, data, st.config.layer.router, opt);
  const ParameterList after = st.model.parameters();
  for (std::size_t k = 0; k < after.size(); ++k) EXPECT_EQ(after[k]->value, before[k]) << after[k]->name;
  EXPECT_EQ(st.step, 3u);
  EXPECT_EQ(st.optimizer.step, 3u);
}

TEST(Train, LossDecreasesAndStateIsConsistent) {
  TrainState st = TrainState::initialize(tiny_model(), 5);
  TrainOptions opt;
  opt.steps = 200;
  opt.batch_sequences = 4;
  opt.eval_interval = 50;
  const auto data = generate(2, 8, 16, 0.5), eval = generate(3, 4, 16, 0.5);
  const TrainResult r = train(st, data, st.config.layer.router, opt, eval);
  ASSERT_EQ(r.curve.size(), 200u);
  EXPECT_LT(r.curve.back().loss.total, r.curve.front().loss.total);
  for (std::size_t i = 0; i < r.curve.size(); ++i) EXPECT_EQ(r.curve[i].step, i);
  ASSERT_EQ(r.evals.size(), 4u);
  EXPECT_EQ(r.evals.back().step, 200u);
  const ParameterList params = st.model.parameters();
  ASSERT_EQ(st.optimizer.m.size(), params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    EXPECT_EQ(st.optimizer.m[k].rows(), params[k]->value.rows());
    EXPECT_EQ(st.optimizer.v[k].cols(), params[k]->value.cols());
  }
  const EvalMetrics m = evaluate(st.model, eval, st.config.layer.router);
  EXPECT_EQ(m.loss, r.evals.back().metrics.loss);
}

TEST(Train, RerunsAreIdentical) {
  const auto data = generate(2, 6, 16, 0.5);
  TrainOptions opt;
  opt.steps = 20;
  opt.batch_sequences = 2;
  TrainState a = TrainState::initialize(tiny_model(), 6), b = TrainState::initialize(tiny_model(), 6);
  const TrainResult ra = train(a, data, a.config.layer.router, opt);
  const TrainResult rb = train(b, data, b.config.layer.router, opt);
  for (std::size_t i = 0; i < ra.curve.size(); ++i) EXPECT_EQ(ra.curve[i].loss.total, rb.curve[i].loss.total);
}

TEST(Train, RejectsBadOptions) {
  TrainState st = TrainState::initialize(tiny_model(), 1);
  const auto data = generate(2, 2, 16, 0.5);
  TrainOptions opt;
  opt.steps = 0;
  EXPECT_THROW(train(st, data, st.config.layer.router, opt), ContractError);
  opt.steps = 1;
  opt.adam.lr = -1.0;
  EXPECT_THROW(train(st, data, st.config.layer.router, opt), ContractError);
  opt.adam.lr = 0.01;
  EXPECT_THROW(train(st, {}, st.config.layer.router, opt), ContractError);
}

TEST(Train, ModelGradientsMatchFiniteDifferences) {
  const GradCheckReport r = check_model_gradients();
  EXPECT_TRUE(r.passed) << r.worst_coordinate;
  EXPECT_GT(r.coordinates, 1000u);
}

TEST(Sweep, BudgetScaleShrinksSlotsPredictably) {
  TrainState st = TrainState::initialize(tiny_model(), 7);
  TrainOptions opt;
  opt.steps = 30;
  const auto data = generate(2, 6, 16, 0.5), eval = generate(3, 6, 16, 0.5);
  train(st, data, st.config.layer.router, opt);
  const RouterConfig& rc = st.config.layer.router;
  const ImportanceTrace trace = export_importance_trace(st.model, eval, rc);
  double continuous = 0.0;
  for (const TokenTrace& t : trace.tokens) continuous += rc.k_min + (rc.k_max - rc.k_min) * t.w;
  continuous /= static_cast<double>(trace.tokens.size());

  const std::vector<double> scales{1.2, 1.0, 0.9, 0.8, 0.6};
  const SweepReport rep = budget_sweep(st, data, eval, scales, {});
  const auto rows = rep.dynamic_rows();
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_TRUE(rep.baseline_rows().empty());
  EXPECT_EQ(rows[0].budget_scale, 1.0);
  EXPECT_EQ(rows[0].eval_loss, evaluate(st.model, eval, rc).loss);
  EXPECT_EQ(rows[0].eval_loss, rows[1].eval_loss);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i].avg_k_hat, rows[i - 1].avg_k_hat);
  EXPECT_NEAR(rows[2].avg_k_hat, 0.9 * continuous, 0.5);
  const std::vector<double> bad{0.0};
  EXPECT_THROW(budget_sweep(st, data, eval, bad, {}), ConfigError);
}

TEST(Sweep, BaselineRowsFollowDynamicRows) {
  TrainState st = TrainState::initialize(tiny_model(), 8);
  const auto data = generate(2, 4, 16, 0.5);
  BaselineTraining bt;
  bt.ks = {1, 3};
  bt.options.steps = 5;
  const std::vector<double> scales{1.0};
  const SweepReport rep = budget_sweep(st, data, data, scales, bt);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[1].router, "topk");
  EXPECT_EQ(rep.rows[1].k, 1u);
  EXPECT_EQ(rep.rows[2].avg_k_real, 3.0);
  EXPECT_EQ(rep.rows[2].virtual_share, 0.0);
}

TEST(Analysis, MatchedBaselineLossInterpolatesInK) {
  SweepReport rep;
  rep.rows.push_back({"anyexperts", 0, 1.0, 5, 5, 0, 9.0, 0});
  rep.rows.push_back({"topk", 8, 1.0, 8, 8, 0, 1.0, 0});
  rep.rows.push_back({"topk", 4, 1.0, 4, 4, 0, 2.0, 0});
  EXPECT_DOUBLE_EQ(*matched_baseline_loss(rep, 5.0), 1.75);
  EXPECT_EQ(*matched_baseline_loss(rep, 4.0), 2.0);
  EXPECT_EQ(*matched_baseline_loss(rep, 8.0), 1.0);
  EXPECT_FALSE(matched_baseline_loss(rep, 3.9).has_value());
  EXPECT_FALSE(matched_baseline_loss(rep, 8.1).has_value());
  EXPECT_FALSE(matched_baseline_loss(SweepReport{}, 4.0).has_value());
}

TEST(Analysis, PairwiseSeparationCountsTiesAsHalf) {
  ImportanceTrace t;
  TokenTrace a, b, c;
  a.w = 0.6;
  b.w = 0.5;
  c.w = 0.5;
  c.informative = false;
  t.tokens = {a, b, c};
  EXPECT_DOUBLE_EQ(*pairwise_separation(t), 0.75);
  t.tokens = {a, b};
  EXPECT_FALSE(pairwise_separation(t).has_value());
}

TEST(Analysis, FreshModelTraceIsFlat) {
  const TrainState st = TrainState::initialize(tiny_model(), 9);
  const auto data = generate(4, 3, 12, 0.5);
  const ImportanceTrace t = export_importance_trace(st.model, data, st.config.layer.router);
  ASSERT_EQ(t.tokens.size(), 36u);
  ASSERT_EQ(t.spans.size(), 3u);
  for (const TokenTrace& tok : t.tokens) {
    EXPECT_EQ(tok.w, 0.5);
    EXPECT_EQ(tok.k_hat, 3u);
    EXPECT_EQ(tok.informative, data[tok.sequence].informative[tok.position]);
  }
  for (const SpanTrace& s : t.spans) {
    double sum = 0.0;
    for (const TokenTrace& tok : t.tokens) {
      if (tok.sequence == s.sequence && tok.position >= s.start && tok.position < s.start + s.length)
        sum += tok.w;
    }
    EXPECT_EQ(s.sum_w, sum);
    EXPECT_EQ(s.sum_w, 0.5 * s.length);
  }
  EXPECT_DOUBLE_EQ(*pairwise_separation(t), 0.5);
  EXPECT_TRUE(export_importance_trace(st.model, {}, st.config.layer.router).tokens.empty());
}

TEST(Analysis, CsvHeaders) {
  std::ostringstream a, b, c;
  write_loss_curve_csv(a, {});
  write_eval_csv(b, {});
  write_sweep_csv(c, {});
  EXPECT_EQ(a.str(), "step,total,lm,tir,balance\n");
  EXPECT_EQ(b.str(), "step,eval_loss,eval_accuracy,avg_k_hat,avg_k_real,virtual_share\n");
  EXPECT_EQ(c.str(), "router,k,budget_scale,avg_k_hat,avg_k_real,virtual_share,eval_loss,eval_accuracy\n");
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

}  // namespace
}  // namespace anyexperts::harness
