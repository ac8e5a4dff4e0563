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

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "knnmt/base_model.h"
#include "knnmt/datastore.h"

namespace knnmt {

// p_final = lambda * p_knn + (1 - lambda) * p_mt, or p_mt alone when the
// retrieval came back empty or lambda is 0 (no search is run then).
struct StepDistribution {
  ProbVector p_mt;
  ProbVector p_knn;  // empty vector when no retrieval was performed
  ProbVector p_final;
  bool knn_empty = true;
  RetrievalSet retrieved;
};

struct TokenSeqHash {
  std::size_t operator()(const TokenSeq& seq) const;
};

// Retrievals of one source sentence keyed by target prefix. Search results
// depend only on the query, k and nprobe, so they can be replayed across
// lambda/temperature settings without changing any output.
using RetrievalMemo = std::unordered_map<TokenSeq, RetrievalSet, TokenSeqHash>;

// One memo per sentence of a fixed corpus, valid for one (store, k, nprobe).
class RetrievalCache {
 public:
  explicit RetrievalCache(std::size_t sentences) : memos_(sentences) {}

  // Drops everything if the settings differ from the cached ones.
  void bind(const Datastore* datastore, const KnnParams& params);
  RetrievalMemo* memo(std::size_t sentence) { return &memos_.at(sentence); }
  std::size_t size() const { return memos_.size(); }

 private:
  std::vector<RetrievalMemo> memos_;
  const Datastore* datastore_ = nullptr;
  int k_ = 0;
  int nprobe_ = 0;
};

// One retrieval per context, shared by every candidate next token.
StepDistribution step_distribution(const TranslationModel& model,
                                   const Datastore* datastore,
                                   const SourceEncoding& encoding,
                                   std::span<const TokenId> prefix,
                                   const KnnParams& params,
                                   RetrievalMemo* memo = nullptr);

StepDistribution step_distribution(const TranslationModel& model,
                                   const Datastore* datastore,
                                   const TranslationContext& ctx,
                                   const KnnParams& params);

struct Hypothesis {
  TokenSeq tokens;  // starts with BOS
  double log_prob = 0;
  bool finished = false;  // last token is EOS

  std::size_t length() const { return tokens.size() - 1; }
  // Mean log-probability per generated token, or the raw sum.
  double score(bool length_norm) const;
};

struct DecodeOptions {
  int beam = 5;
  int max_len = 0;  // 0 = 2 * source length + 8
  bool length_norm = true;
};

int resolve_max_len(const DecodeOptions& opts, std::size_t source_len);

// Ranked best-first. Ties are broken by the token sequence, smallest first.
std::vector<Hypothesis> beam_search(const TranslationModel& model,
                                    const Datastore* datastore,
                                    std::span<const TokenId> source,
                                    const KnnParams& params,
                                    const DecodeOptions& opts,
                                    RetrievalMemo* memo = nullptr);

struct Translation {
  TokenSeq tokens;  // BOS/EOS stripped
  double score = 0;
  std::string error;  // non-empty when decoding this sentence failed
};

// Order-preserving; `workers` threads never change the output.
std::vector<Translation> translate_corpus(const TranslationModel& model,
                                          const Datastore* datastore,
                                          std::span<const TokenSeq> sources,
                                          const KnnParams& params,
                                          const DecodeOptions& opts,
                                          int workers = 1,
                                          RetrievalCache* cache = nullptr);

struct RetrievalRecord {
  int step = 0;
  TokenId token = 0;
  RetrievalSet retrieved;
  std::vector<double> neighbor_probs;  // per retrieved item
  ProbVector p_knn;
};

struct RetrievalDump {
  std::vector<RetrievalRecord> records;
  bool missing_provenance = false;
};

// Greedy decoding over p_final, recording what was retrieved at each step.
RetrievalDump dump_retrievals(const TranslationModel& model,
                              const Datastore& datastore,
                              std::span<const TokenId> source,
                              const KnnParams& params, int max_len = 0);

// {"step", "token", "neighbors": [{"distance", "value", "prob",
// "sentence-id", "step-id"}]} on one line.
std::string retrieval_record_json(const RetrievalRecord& record,
                                  const Vocab& target_vocab);

}  // namespace knnmt
