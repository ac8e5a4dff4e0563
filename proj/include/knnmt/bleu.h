// Copyright 2026 The knnmt Authors.
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

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace knnmt {

inline constexpr std::string_view kBleuSignature =
    "BLEU+case.mixed+numrefs.1+smooth.exp+tok.13a";

struct BleuScore {
  double score = 0;                      // 0..100
  std::array<double, 4> precisions{};    // percent, after smoothing
  std::array<std::size_t, 4> correct{};  // clipped n-gram matches
  std::array<std::size_t, 4> total{};    // hypothesis n-grams
  double brevity_penalty = 0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  std::string to_string() const;
};

// WMT "13a" tokenization: punctuation split off, except periods and commas
// inside numbers and dashes after digits.
std::vector<std::string> tokenize_13a(std::string_view line);

// Case-sensitive corpus BLEU against one reference per line with
// exponential smoothing of zero n-gram precisions.
BleuScore corpus_bleu(std::span<const std::string> hypotheses,
                      std::span<const std::string> references);

}  // namespace knnmt
