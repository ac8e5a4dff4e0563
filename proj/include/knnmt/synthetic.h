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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "knnmt/corpus.h"

namespace knnmt {

// Seeded toy language pair. Target sentences follow
//   DET [ADJ] NOUN VERB [DET [ADJ] NOUN] [PREP DET [ADJ] NOUN] .
// and the source side is a word-by-word dictionary translation with noun
// phrases reordered to NOUN ADJ and the verb moved to the end of the clause.
// Every domain has its own nouns, shares the rest of the lexicon, and gives
// some shared source nouns a domain-specific translation.
struct SyntheticConfig {
  std::uint64_t seed = 1;
  int shared_nouns = 60;
  int domain_nouns = 40;
  int polysemous_nouns = 10;  // shared source nouns with per-domain senses
  int verbs = 40;
  int adjectives = 30;
  int determiners = 3;
  int prepositions = 6;
  int frames = 200;  // sentence templates per domain
  double domain_noun_share = 0.7;
};

struct SyntheticSplits {
  std::vector<RawPair> train;
  std::vector<RawPair> valid;
  std::vector<RawPair> test;
};

// Sentences are drawn from the domain's templates, one noun slot per
// template filled from the domain's nouns. The three splits never share a
// (template, filler) combination.
SyntheticSplits generate_domain(const SyntheticConfig& config, int domain,
                                std::size_t train, std::size_t valid,
                                std::size_t test);

// "source\ttarget" lines.
std::string to_tsv(const std::vector<RawPair>& pairs);

}  // namespace knnmt
