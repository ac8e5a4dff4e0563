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
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "knnmt/common.h"
#include "knnmt/corpus.h"
#include "knnmt/dense.h"

namespace knnmt {

// (source, generated target prefix). The prefix starts with BOS.
struct TranslationContext {
  std::span<const TokenId> source;
  std::span<const TokenId> prefix;
};

struct StepOutput {
  ProbVector p_mt;  // over the target vocabulary
  KeyVector key;    // unit norm
};

// Per-sentence state computed once from the source and reused at every step.
class SourceEncoding {
 public:
  virtual ~SourceEncoding() = default;
};

// What the retrieval decoder needs from a translation model: a next-token
// distribution and a context representation for every prefix.
class TranslationModel {
 public:
  virtual ~TranslationModel() = default;

  virtual std::size_t target_vocab_size() const = 0;
  virtual std::size_t key_dim() const = 0;
  virtual std::uint64_t fingerprint() const = 0;

  virtual std::unique_ptr<const SourceEncoding> encode(
      std::span<const TokenId> source) const = 0;
  virtual StepOutput step(const SourceEncoding& enc,
                          std::span<const TokenId> prefix) const = 0;

  StepOutput step(const TranslationContext& ctx) const {
    auto enc = encode(ctx.source);
    return step(*enc, ctx.prefix);
  }
};

// Teacher-forced sum of log p_mt over target[1..]. target starts with BOS.
double score_sequence(const TranslationModel& model,
                      std::span<const TokenId> source,
                      std::span<const TokenId> target);

struct ModelConfig {
  double mu = 0.5;       // weight of the lexical component
  double alpha = 0.1;    // add-alpha smoothing
  int window = 2;        // target tokens in the key
  std::uint64_t seed = 1;
  int dim = 64;          // key dimension
  double source_weight = 1.0;
  double target_weight = 2.0;
};

// Reference base model: uniform-alignment lexical table mixed with a target
// bigram LM. Keys are unit-normalized sums of seeded feature embeddings over
// source unigrams and the last `window` target tokens.
class LexicalNgramModel final : public TranslationModel {
 public:
  static LexicalNgramModel fit(const ModelConfig& config,
                               const ParallelCorpus& corpus,
                               const Tokenizer& tokenizer = Tokenizer());

  std::size_t source_vocab_size() const { return lexical_.rows(); }
  std::size_t target_vocab_size() const override { return bigram_.rows(); }
  std::size_t key_dim() const override {
    return static_cast<std::size_t>(config_.dim);
  }
  std::uint64_t fingerprint() const override { return fingerprint_; }

  std::unique_ptr<const SourceEncoding> encode(
      std::span<const TokenId> source) const override;
  StepOutput step(const SourceEncoding& enc,
                  std::span<const TokenId> prefix) const override;
  using TranslationModel::step;

  const ModelConfig& config() const { return config_; }
  const Vocab& source_vocab() const { return source_vocab_; }
  const Vocab& target_vocab() const { return target_vocab_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const RowMatrix<float>& lexical_table() const { return lexical_; }
  const RowMatrix<float>& bigram_table() const { return bigram_; }

  // Embedding of a source unigram feature / a (target token, offset)
  // feature. Offsets count back from the end of the prefix, starting at 1.
  Eigen::VectorXd source_embedding(TokenId tok) const;
  Eigen::VectorXd target_embedding(TokenId tok, int offset) const;

  std::string serialize() const;
  static LexicalNgramModel deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static LexicalNgramModel load(const std::string& path);

 private:
  LexicalNgramModel() = default;
  void finalize();

  ModelConfig config_;
  Vocab source_vocab_;
  Vocab target_vocab_;
  Tokenizer tokenizer_;
  RowMatrix<float> lexical_;  // |Vs| x |Vt|, P(t | s)
  RowMatrix<float> bigram_;   // |Vt| x |Vt|, P(t_i | t_{i-1})
  RowMatrix<double> source_embed_;               // |Vs| x D
  std::vector<RowMatrix<double>> target_embed_;  // window x |Vt| x D
  std::uint64_t fingerprint_ = 0;
};

// Deterministic standard-normal vector derived from a 64-bit feature hash.
// Identical on every platform.
Eigen::VectorXd hashed_gaussian(std::uint64_t feature_hash, int dim);

std::uint64_t source_feature_hash(std::uint64_t seed, TokenId tok);
std::uint64_t target_feature_hash(std::uint64_t seed, TokenId tok, int offset);

}  // namespace knnmt
