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

#include "anyexperts/harness/analysis.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <ostream>

#include <json.hpp>

#include "anyexperts/errors.hpp"

namespace anyexperts::harness {

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

std::vector<SweepRow> SweepReport::dynamic_rows() const {
  std::vector<SweepRow> out;
  for (const SweepRow& r : rows)
    if (r.router == "anyexperts") out.push_back(r);
  return out;
}

std::vector<SweepRow> SweepReport::baseline_rows() const {
  std::vector<SweepRow> out;
  for (const SweepRow& r : rows)
    if (r.router == "topk") out.push_back(r);
  return out;
}

SweepRow sweep_row(const std::string& router, std::size_t k, double budget_scale,
                   const EvalMetrics& m) {
  return {router,           k,           budget_scale,        m.stats.avg_k_hat,
          m.stats.avg_k_real, m.stats.virtual_share, m.loss, m.accuracy};
}

SweepReport budget_sweep(const TrainState& state, std::span<const SyntheticStream> train_data,
                         std::span<const SyntheticStream> eval_data, std::span<const double> scales,
                         const BaselineTraining& baselines) {
  std::vector<double> clamped;
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError(fmt::format("budget scale {} must be positive", s));
    clamped.push_back(std::min(s, 1.0));
  }
  std::stable_sort(clamped.begin(), clamped.end(), std::greater<>());

  SweepReport report;
  for (double s : clamped) {
    RouterConfig router = state.config.layer.router;
    router.budget_scale = s;
    report.rows.push_back(
        sweep_row("anyexperts", 0, s, evaluate(state.model, eval_data, router)));
  }
  const RouterConfig& router = state.config.layer.router;
  for (std::size_t k : baselines.ks) {
    BaselineConfig cfg{TopK{k}, router.e_real, router.lambda, router.eps};
    TrainState baseline = TrainState::initialize(state.config, state.seed);
    train(baseline, train_data, cfg, baselines.options);
    report.rows.push_back(sweep_row("topk", k, 1.0, evaluate(baseline.model, eval_data, cfg)));
  }
  return report;
}

std::optional<double> matched_baseline_loss(const SweepReport& report, double avg_k_real) {
  auto rows = report.baseline_rows();
  std::sort(rows.begin(), rows.end(),
            [](const SweepRow& a, const SweepRow& b) { return a.k < b.k; });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double k = static_cast<double>(rows[i].k);
    if (avg_k_real == k) return rows[i].eval_loss;
    if (i + 1 < rows.size()) {
      const double k_next = static_cast<double>(rows[i + 1].k);
      if (avg_k_real > k && avg_k_real < k_next) {
        const double t = (avg_k_real - k) / (k_next - k);
        return rows[i].eval_loss + t * (rows[i + 1].eval_loss - rows[i].eval_loss);
      }
    }
  }
  return std::nullopt;
}

ImportanceTrace export_importance_trace(const ToyModel& model,
                                        std::span<const SyntheticStream> sequences,
                                        const RouterConfig& router) {
  ImportanceTrace trace;
  if (sequences.empty()) return trace;
  const TokenBatch batch = flatten(sequences);
  Tape tape;
  ToyModel::Vars v = model.forward(tape, batch.tokens, router);
  const Matrix& w = v.layer.importance.weight.value();
  const auto& decisions = v.layer.routes.decisions;
  std::size_t flat = 0;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const SyntheticStream& seq = sequences[s];
    const std::size_t base = flat;
    for (std::size_t i = 0; i < seq.size(); ++i, ++flat) {
      trace.tokens.push_back({s, i, seq.modality[i], seq.informative[i], w[flat],
                              decisions[flat].k_hat, decisions[flat].k_real});
    }
    const auto spans = imagelike_spans(seq);
    for (std::size_t k = 0; k < spans.size(); ++k) {
      double total = 0.0;
      for (std::size_t i = 0; i < spans[k].length; ++i) total += w[base + spans[k].start + i];
      trace.spans.push_back({s, k, spans[k].start, spans[k].length, total});
    }
  }
  return trace;
}

std::optional<double> pairwise_separation(const ImportanceTrace& trace) {
  std::vector<double> informative, redundant;
  for (const TokenTrace& t : trace.tokens) (t.informative ? informative : redundant).push_back(t.w);
  if (informative.empty() || redundant.empty()) return std::nullopt;
  // Rank-sum form of the pairwise count: sort redundant weights once.
  std::sort(redundant.begin(), redundant.end());
  double ordered = 0.0;
  for (double wi : informative) {
    const auto lo = std::lower_bound(redundant.begin(), redundant.end(), wi);
    const auto hi = std::upper_bound(redundant.begin(), redundant.end(), wi);
    ordered += static_cast<double>(lo - redundant.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return ordered / (static_cast<double>(informative.size()) * static_cast<double>(redundant.size()));
}

void write_loss_curve_csv(std::ostream& out, std::span<const LossPoint> curve) {
  out << "step,total,lm,tir,balance\n";
  for (const LossPoint& p : curve) {
    out << p.step << ',' << format_double(p.loss.total) << ',' << format_double(p.loss.lm) << ','
        << format_double(p.loss.tir) << ',' << format_double(p.loss.balance) << '\n';
  }
}

void write_eval_csv(std::ostream& out, std::span<const EvalPoint> evals) {
  out << "step,eval_loss,eval_accuracy,avg_k_hat,avg_k_real,virtual_share\n";
  for (const EvalPoint& e : evals) {
    out << e.step << ',' << format_double(e.metrics.loss) << ',' << format_double(e.metrics.accuracy)
        << ',' << format_double(e.metrics.stats.avg_k_hat) << ','
        << format_double(e.metrics.stats.avg_k_real) << ','
        << format_double(e.metrics.stats.virtual_share) << '\n';
  }
}

void write_sweep_csv(std::ostream& out, const SweepReport& report) {
  out << "router,k,budget_scale,avg_k_hat,avg_k_real,virtual_share,eval_loss,eval_accuracy\n";
  for (const SweepRow& r : report.rows) {
    out << r.router << ',' << r.k << ',' << format_double(r.budget_scale) << ','
        << format_double(r.avg_k_hat) << ',' << format_double(r.avg_k_real) << ','
        << format_double(r.virtual_share) << ',' << format_double(r.eval_loss) << ','
        << format_double(r.eval_accuracy) << '\n';
  }
}

void write_trace_jsonl(std::ostream& out, const ImportanceTrace& trace) {
  for (const TokenTrace& t : trace.tokens) {
    const nlohmann::json j = {{"record", "token"},         {"sequence", t.sequence},
                              {"position", t.position},     {"modality", modality_name(t.modality)},
                              {"informative", t.informative}, {"w", t.w},
                              {"k_hat", t.k_hat},           {"k_real", t.k_real}};
    out << j.dump() << '\n';
  }
  for (const SpanTrace& s : trace.spans) {
    const nlohmann::json j = {{"record", "span"},   {"sequence", s.sequence},
                              {"span_index", s.span_index}, {"start", s.start},
                              {"length", s.length}, {"sum_w", s.sum_w}};
    out << j.dump() << '\n';
  }
}

}  // namespace anyexperts::harness
