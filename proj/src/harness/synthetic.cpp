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

#include "anyexperts/harness/synthetic.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <numeric>

#include "anyexperts/errors.hpp"
#include "anyexperts/rng.hpp"

namespace anyexperts::harness {

namespace {
constexpr std::uint64_t kTargetKey = 0x7a11e5c0ffee1234ULL;
}  // namespace

std::size_t SyntheticStream::imagelike_count() const {
  return static_cast<std::size_t>(std::count(modality.begin(), modality.end(), Modality::kImage));
}

std::size_t SyntheticStream::redundant_count() const {
  return static_cast<std::size_t>(std::count(informative.begin(), informative.end(), false));
}

std::vector<Span> imagelike_spans(const SyntheticStream& s) {
  std::vector<Span> spans;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.modality[i] != Modality::kImage) continue;
    if (spans.empty() || spans.back().start + spans.back().length != i) {
      spans.push_back({i, 0});
    }
    ++spans.back().length;
  }
  return spans;
}

std::vector<std::size_t> target_permutation(const StreamSpec& spec) {
  std::vector<std::size_t> perm(spec.vocab);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(kTargetKey);
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.below(i)]);
  }
  return perm;
}

std::vector<SyntheticStream> generate(std::uint64_t seed, std::size_t n_sequences,
                                      std::size_t seq_len, double redundancy,
                                      const StreamSpec& spec) {
  if (!(redundancy >= 0.0 && redundancy < 1.0)) throw ConfigError("redundancy must lie in [0, 1)");
  if (seq_len < 4) throw ConfigError("seq_len must be at least 4");
  if (spec.n_background < 1 || spec.vocab < spec.n_background + 2) {
    throw ConfigError(fmt::format("vocab={} too small for {} background ids and 2 content ids",
                                  spec.vocab, spec.n_background));
  }
  const auto perm = target_permutation(spec);
  const std::size_t n_content = spec.vocab - spec.n_background;
  const std::size_t prefix = std::max<std::size_t>(1, seq_len / 4);
  const std::size_t image = seq_len / 2;

  Rng root(seed);
  std::vector<SyntheticStream> out(n_sequences);
  for (std::size_t s = 0; s < n_sequences; ++s) {
    Rng rng = root.split(s);
    SyntheticStream& st = out[s];
    st.tokens.resize(seq_len);
    st.modality.assign(seq_len, Modality::kText);
    st.informative.assign(seq_len, true);
    st.targets.resize(seq_len);
    for (std::size_t i = prefix; i < prefix + image; ++i) st.modality[i] = Modality::kImage;

    // Partial Fisher-Yates picks exactly floor(redundancy * image) slots.
    const auto n_redundant =
        static_cast<std::size_t>(redundancy * static_cast<double>(image));
    std::vector<std::size_t> slots(image);
    std::iota(slots.begin(), slots.end(), prefix);
    for (std::size_t k = 0; k < n_redundant; ++k) {
      std::swap(slots[k], slots[k + rng.below(image - k)]);
      st.informative[slots[k]] = false;
    }

    std::size_t last_informative = 0;
    for (std::size_t i = 0; i < seq_len; ++i) {
      if (st.informative[i]) {
        st.tokens[i] = spec.n_background + rng.below(n_content);
        last_informative = st.tokens[i];
      } else {
        st.tokens[i] = rng.below(spec.n_background);
      }
      st.targets[i] = perm[last_informative];
    }
  }
  return out;
}

}  // namespace anyexperts::harness
