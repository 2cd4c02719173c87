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

#ifndef ANYEXPERTS_HARNESS_SYNTHETIC_HPP_
#define ANYEXPERTS_HARNESS_SYNTHETIC_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "anyexperts/batch.hpp"

namespace anyexperts::harness {

// Vocabulary layout: ids [0, n_background) are the background archetype
// family that redundant imagelike tokens are drawn from; the rest are content
// ids carried by informative tokens.
struct StreamSpec {
  std::size_t vocab = 32;
  std::size_t n_background = 4;
};

// One sequence: a textlike prefix, an imagelike span, a textlike suffix.
// Inside the imagelike span exactly floor(redundancy * span length) tokens are
// redundant background tokens. The target at every position is a fixed
// permutation of the most recent informative token's id.
struct SyntheticStream {
  std::vector<std::size_t> tokens;
  std::vector<Modality> modality;
  std::vector<bool> informative;
  std::vector<std::size_t> targets;

  std::size_t size() const { return tokens.size(); }
  std::size_t imagelike_count() const;
  std::size_t redundant_count() const;
};

// Contiguous imagelike run [start, start + length) of a sequence.
struct Span {
  std::size_t start = 0;
  std::size_t length = 0;
};
std::vector<Span> imagelike_spans(const SyntheticStream& s);

// Throws ConfigError if the vocabulary cannot hold the construction.
std::vector<SyntheticStream> generate(std::uint64_t seed, std::size_t n_sequences,
                                      std::size_t seq_len, double redundancy,
                                      const StreamSpec& spec = {});

// Seed-independent target map: informative id -> target id.
std::vector<std::size_t> target_permutation(const StreamSpec& spec);

}  // namespace anyexperts::harness

#endif  // ANYEXPERTS_HARNESS_SYNTHETIC_HPP_
