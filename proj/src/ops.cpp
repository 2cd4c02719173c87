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

#include "anyexperts/ops.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "anyexperts/errors.hpp"

namespace anyexperts::ops {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractError("operands recorded on different tapes");
  return t;
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(
        fmt::format("{}: shape mismatch {} vs {}", op, a.shape_string(), b.shape_string()));
  }
}

// Accumulates `g` into the gradient of node `id` if it participates in differentiation.
void accumulate(Tape& t, std::size_t id, const Matrix& g) {
  if (!t.requires_grad(id)) return;
  Matrix& acc = t.grad(id);
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}


}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = anyexperts::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t, ia, anyexperts::matmul(g, transpose(t.value(ib))));
    if (t.requires_grad(ib)) accumulate(t, ib, anyexperts::matmul(transpose(t.value(ia)), g));
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix g = t.grad(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    Matrix g = t.grad(self);
    accumulate(t, ia, g);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = -g[i];
    accumulate(t, ib, g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    Matrix ga(g.rows(), g.cols()), gb(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    accumulate(t, ia, ga);
    accumulate(t, ib, gb);
  });
}

Var div(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("div", a.value(), b.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    Matrix ga(g.rows(), g.cols()), gb(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] / bv[i];
      gb[i] = -g[i] * av[i] / (bv[i] * bv[i]);
    }
    accumulate(t, ia, ga);
    accumulate(t, ib, gb);
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, factor](Tape& t, std::size_t self) {
    Matrix g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= factor;
    accumulate(t, ia, g);
  });
}

Var add_scalar(Var a, double offset) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix g = t.grad(self);
    accumulate(t, ia, g);
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw DimensionError(fmt::format("add_row: {} + bias {}", av.shape_string(), bv.shape_string()));
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  const std::size_t ia = a.id(), ib = bias.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix g = t.grad(self);
    accumulate(t, ia, g);
    if (t.requires_grad(ib)) {
      Matrix gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
      accumulate(t, ib, gb);
    }
  });
}

Var mul_rows(Var a, Var s) {
  Tape& t = tape_of(a, s);
  const Matrix& av = a.value();
  const Matrix& sv = s.value();
  if (sv.cols() != 1 || sv.rows() != av.rows()) {
    throw DimensionError(
        fmt::format("mul_rows: {} scaled by {}", av.shape_string(), sv.shape_string()));
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= sv[r];
  const std::size_t ia = a.id(), is = s.id();
  return t.record(std::move(out), {ia, is}, [ia, is](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    const Matrix& sv = t.value(is);
    Matrix ga(g.rows(), g.cols()), gs(g.rows(), 1);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) {
        ga(r, c) = g(r, c) * sv[r];
        gs[r] += g(r, c) * av(r, c);
      }
    accumulate(t, ia, ga);
    accumulate(t, is, gs);
  });
}

Var broadcast_cols(Var s, std::size_t cols) {
  Tape& t = tape_of(s);
  const Matrix& sv = s.value();
  if (sv.cols() != 1) throw DimensionError("broadcast_cols expects an n×1 column");
  Matrix out(sv.rows(), cols);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = sv[r];
  const std::size_t is = s.id();
  return t.record(std::move(out), {is}, [is](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix gs(g.rows(), 1);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gs[r] += g(r, c);
    accumulate(t, is, gs);
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = anyexperts::sigmoid(out[i]);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    Matrix g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
    accumulate(t, ia, g);
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = anyexperts::relu(out[i]);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ia);
    Matrix g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(x[i] > 0.0)) g[i] = 0.0;
    accumulate(t, ia, g);
  });
}

Var square(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ia);
    Matrix g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 2.0 * x[i];
    accumulate(t, ia, g);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return t.record(Matrix(1, 1, s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Matrix& x = t.value(ia);
    accumulate(t, ia, Matrix(x.rows(), x.cols(), g));
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractError("mean of an empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ContractError("mean_rows of an empty matrix");
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out[c] += av(r, c);
  const double inv_n = 1.0 / static_cast<double>(av.rows());
  for (std::size_t c = 0; c < out.cols(); ++c) out[c] *= inv_n;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, inv_n](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    Matrix ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) = g[c] * inv_n;
    accumulate(t, ia, ga);
  });
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  if (bias.tape() != &t) throw ContractError("operands recorded on different tapes");
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (d == 0) throw ContractError("layer_norm of an empty row");
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError(fmt::format("layer_norm_rows: input {} with gain {} and bias {}",
                                     xv.shape_string(), gain.value().shape_string(),
                                     bias.value().shape_string()));
  }
  Matrix normalized(n, d);
  Matrix inv_std(n, 1);
  Matrix out(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    if (var + eps <= 0.0) throw NumericError("layer_norm: zero variance with eps == 0");
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normalized(r, c) = (row[c] - mu) * inv_std[r];
      out(r, c) = normalized(r, c) * gain.value()[c] + bias.value()[c];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.record(std::move(out), {ix, ig, ib},
                  [ix, ig, ib, normalized = std::move(normalized),
                   inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    const Matrix& gv = t.value(ig);
                    const std::size_t n = g.rows(), d = g.cols();
                    Matrix gx(n, d), gg(gv.rows(), gv.cols()), gb(gv.rows(), gv.cols());
                    for (std::size_t r = 0; r < n; ++r) {
                      double mean_dn = 0.0, mean_dn_n = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dn = g(r, c) * gv[c];
                        mean_dn += dn;
                        mean_dn_n += dn * normalized(r, c);
                        gg[c] += g(r, c) * normalized(r, c);
                        gb[c] += g(r, c);
                      }
                      mean_dn /= static_cast<double>(d);
                      mean_dn_n /= static_cast<double>(d);
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dn = g(r, c) * gv[c];
                        gx(r, c) = inv_std[r] * (dn - mean_dn - normalized(r, c) * mean_dn_n);
                      }
                    }
                    accumulate(t, ix, gx);
                    accumulate(t, ig, gg);
                    accumulate(t, ib, gb);
                  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix ga(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) inner += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) = y(r, c) * (g(r, c) - inner);
    }
    accumulate(t, ia, ga);
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : row) v -= lse;
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix ga(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) total += g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) = g(r, c) - std::exp(y(r, c)) * total;
    }
    accumulate(t, ia, ga);
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (begin > end || end > av.cols()) {
    throw DimensionError(
        fmt::format("slice_cols [{}, {}) out of range for {}", begin, end, av.shape_string()));
  }
  Matrix out(av.rows(), end - begin);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = av(r, c);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    Matrix ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c + begin) = g(r, c);
    accumulate(t, ia, ga);
  });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw DimensionError(fmt::format("gather_rows: row {} of {}", rows[i], av.shape_string()));
    }
    std::copy(av.row(rows[i]).begin(), av.row(rows[i]).end(), out.row(i).begin());
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, rows = std::move(rows)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    Matrix ga(x.rows(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(rows[i], c) += g(i, c);
    accumulate(t, ia, ga);
  });
}

Var scatter_add_rows(Var a, std::vector<std::size_t> rows, std::size_t n_out) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (rows.size() != av.rows()) {
    throw DimensionError(fmt::format("scatter_add_rows: {} row targets for {}", rows.size(),
                                     av.shape_string()));
  }
  Matrix out(n_out, av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_out) throw DimensionError("scatter_add_rows: target row out of range");
    for (std::size_t c = 0; c < av.cols(); ++c) out(rows[i], c) += av(i, c);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, rows = std::move(rows)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix ga(rows.size(), g.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(i, c) = g(rows[i], c);
    accumulate(t, ia, ga);
  });
}

Var gather(Var a, std::vector<std::pair<std::size_t, std::size_t>> positions) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(positions.size(), 1);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto [r, c] = positions[i];
    if (r >= av.rows() || c >= av.cols()) {
      throw DimensionError(fmt::format("gather: ({}, {}) out of range for {}", r, c,
                                       av.shape_string()));
    }
    out[i] = av(r, c);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia},
                  [ia, positions = std::move(positions)](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    const Matrix& x = t.value(ia);
                    Matrix ga(x.rows(), x.cols());
                    for (std::size_t i = 0; i < positions.size(); ++i)
                      ga(positions[i].first, positions[i].second) += g[i];
                    accumulate(t, ia, ga);
                  });
}

}  // namespace anyexperts::ops
