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

#ifndef ANYEXPERTS_BATCH_HPP_
#define ANYEXPERTS_BATCH_HPP_

#include <string_view>
#include <vector>

#include "anyexperts/matrix.hpp"

namespace anyexperts {

enum class Modality { kText, kImage };

std::string_view modality_name(Modality m);  // "textlike" / "imagelike"

// Token hidden states (one row per token) with their modality tags. The tags
// are bookkeeping only; no computation reads them.
struct HiddenBatch {
  Matrix hidden;
  std::vector<Modality> modality;

  std::size_t tokens() const { return hidden.rows(); }
  std::size_t dim() const { return hidden.cols(); }
};

}  // namespace anyexperts

#endif  // ANYEXPERTS_BATCH_HPP_
