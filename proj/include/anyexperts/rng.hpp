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

#ifndef ANYEXPERTS_RNG_HPP_
#define ANYEXPERTS_RNG_HPP_

#include <cstdint>

namespace anyexperts {

// Counter-based generator: the n-th draw is a pure function of (key, n), so a
// stream never depends on how other streams were consumed. The mix is
// SplitMix64's finalizer applied to key + n * golden_gamma.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream_id) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal (Box-Muller, one output per call).
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace anyexperts

#endif  // ANYEXPERTS_RNG_HPP_
