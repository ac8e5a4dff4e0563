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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knnmt/base_model.h"
#include "knnmt/corpus.h"
#include "knnmt/dense.h"
#include "knnmt/vector_index.h"

namespace knnmt {

struct KnnParams {
  int k = 64;
  double temperature = 10.0;
  int nprobe = 32;
  double lambda = 0.5;

  void validate() const;
};

struct Provenance {
  std::uint32_t sentence = 0;
  std::uint16_t step = 0;  // target position of the value, 1-based

  bool operator==(const Provenance&) const = default;
};

struct RetrievedItem {
  double distance = 0;
  TokenId value = 0;
  std::uint64_t id = 0;
  std::optional<Provenance> provenance;
};

struct RetrievalSet {
  std::vector<RetrievedItem> items;  // ascending distance, at most k
  bool empty_store = false;
};

struct KnnDistribution {
  ProbVector probs;    // zero outside the retrieved values
  bool empty = false;  // nothing retrieved; probs is all zero
};

// Softmax over -distance / T, summed per value token. Exact for any input;
// distances are shifted by their minimum before exponentiation.
KnnDistribution knn_distribution(const RetrievalSet& retrieved,
                                 double temperature, std::size_t vocab_size);

// Share of each neighbor in the normalizer, in retrieval order.
std::vector<double> neighbor_probabilities(const RetrievalSet& retrieved,
                                           double temperature);

struct DatastoreConfig {
  bool flat = false;
  IvfPqConfig ivfpq;
  bool store_provenance = false;
};

// (key, next-target-token) pairs with a search index over the keys. Entry
// ids are 0..size-1 in (sentence, position) order.
class Datastore {
 public:
  Datastore() = default;
  Datastore(std::unique_ptr<VectorIndex> index, std::vector<TokenId> values,
            std::vector<Provenance> provenance, std::uint64_t vocab_fingerprint,
            std::uint64_t model_fingerprint, const DatastoreConfig& config);

  std::size_t size() const { return values_.size(); }
  std::size_t dim() const { return index_ ? index_->dim() : 0; }
  const VectorIndex& index() const { return *index_; }
  std::span<const TokenId> values() const { return values_; }
  bool has_provenance() const { return !provenance_.empty(); }
  std::span<const Provenance> provenance() const { return provenance_; }
  std::uint64_t vocab_fingerprint() const { return vocab_fingerprint_; }
  std::uint64_t model_fingerprint() const { return model_fingerprint_; }
  const DatastoreConfig& config() const { return config_; }

  RetrievalSet retrieve(const KeyVector& query, const KnnParams& params) const;

  // Throws a mismatch error unless both fingerprints agree with `model`.
  void check_compatible(const TranslationModel& model,
                        std::uint64_t target_vocab_fingerprint) const;

  std::string serialize() const;
  static Datastore deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static Datastore load(const std::string& path);

 private:
  std::shared_ptr<const VectorIndex> index_;
  std::vector<TokenId> values_;
  std::vector<Provenance> provenance_;
  std::uint64_t vocab_fingerprint_ = 0;
  std::uint64_t model_fingerprint_ = 0;
  DatastoreConfig config_;
};

// Keys and values for every target position of every pair (EOS included,
// BOS excluded), in (sentence, position) order.
struct DatastoreEntries {
  RowMatrix<float> keys;
  std::vector<TokenId> values;
  std::vector<Provenance> provenance;
};

DatastoreEntries compute_entries(const TranslationModel& model,
                                 const ParallelCorpus& corpus);

Datastore build_datastore(const TranslationModel& model,
                          std::uint64_t target_vocab_fingerprint,
                          const ParallelCorpus& corpus,
                          const DatastoreConfig& config);

// Convenience overload that checks the corpus vocab against the model.
Datastore build_datastore(const LexicalNgramModel& model,
                          const ParallelCorpus& corpus,
                          const DatastoreConfig& config);

// Builds a store from precomputed entries.
Datastore build_from_entries(DatastoreEntries entries,
                             std::uint64_t vocab_fingerprint,
                             std::uint64_t model_fingerprint,
                             const DatastoreConfig& config);

// Union with ids re-assigned in list order. IVF-PQ stores are re-trained on
// a proportional sample of the reconstructed keys of every constituent,
// keeping the shared cluster count or, if counts differ, the automatic one.
Datastore merge_datastores(std::span<const Datastore* const> stores);

// Keeps the entries of the given sentence subset (sorted sentence ids).
DatastoreEntries select_sentences(const DatastoreEntries& entries,
                                  std::span<const std::uint32_t> sentences);

}  // namespace knnmt
