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

#ifndef ANYEXPERTS_HARNESS_ANALYSIS_HPP_
#define ANYEXPERTS_HARNESS_ANALYSIS_HPP_

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anyexperts/harness/model.hpp"

namespace anyexperts::harness {

struct SweepRow {
  std::string router;  // "anyexperts" or "topk"
  std::size_t k = 0;   // top-k baselines only
  double budget_scale = 1.0;
  double avg_k_hat = 0.0;
  double avg_k_real = 0.0;
  double virtual_share = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
};

// AnyExperts rows in descending budget_scale order, then one row per baseline k.
struct SweepReport {
  std::vector<SweepRow> rows;

  std::vector<SweepRow> dynamic_rows() const;
  std::vector<SweepRow> baseline_rows() const;
};

struct BaselineTraining {
  std::vector<std::size_t> ks;
  TrainOptions options;
};

// Evaluates `state` at every budget scale (values above 1 are clamped to 1)
// without touching its parameters, and trains one static top-k model per
// baseline k from the same initialisation seed.
SweepReport budget_sweep(const TrainState& state, std::span<const SyntheticStream> train_data,
                         std::span<const SyntheticStream> eval_data, std::span<const double> scales,
                         const BaselineTraining& baselines);

SweepRow sweep_row(const std::string& router, std::size_t k, double budget_scale,
                   const EvalMetrics& m);

// Baseline eval loss linearly interpolated in k at the given real activation;
// nullopt when the activation lies outside the trained baseline range.
std::optional<double> matched_baseline_loss(const SweepReport& report, double avg_k_real);

struct TokenTrace {
  std::size_t sequence = 0;
  std::size_t position = 0;
  Modality modality = Modality::kText;
  bool informative = true;
  double w = 0.0;
  std::size_t k_hat = 0;
  std::size_t k_real = 0;
};

struct SpanTrace {
  std::size_t sequence = 0;
  std::size_t span_index = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  double sum_w = 0.0;
};

struct ImportanceTrace {
  std::vector<TokenTrace> tokens;
  std::vector<SpanTrace> spans;
};

ImportanceTrace export_importance_trace(const ToyModel& model,
                                        std::span<const SyntheticStream> sequences,
                                        const RouterConfig& router);

// Fraction of (informative, redundant) token pairs whose weights are ordered
// informative > redundant; ties count one half. nullopt without both kinds.
std::optional<double> pairwise_separation(const ImportanceTrace& trace);

// Output formats (documented in docs/formats.md). Doubles use 17 significant digits.
void write_loss_curve_csv(std::ostream& out, std::span<const LossPoint> curve);
void write_eval_csv(std::ostream& out, std::span<const EvalPoint> evals);
void write_sweep_csv(std::ostream& out, const SweepReport& report);
void write_trace_jsonl(std::ostream& out, const ImportanceTrace& trace);
std::string format_double(double v);

}  // namespace anyexperts::harness

#endif  // ANYEXPERTS_HARNESS_ANALYSIS_HPP_
