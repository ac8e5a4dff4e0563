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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "knnmt/common.h"

namespace knnmt {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kNumReserved = 4;

// Token string <-> id map. Ids 0..3 are the reserved PAD/BOS/EOS/UNK block;
// corpus tokens start at 4.
class Vocab {
 public:
  Vocab();

  // Ordering is descending frequency, then lexicographic. Tokens spelled
  // like a reserved symbol are dropped so they can never shadow it.
  static Vocab build(std::span<const std::vector<std::string>> sentences);
  static Vocab from_tokens(std::span<const std::string> corpus_tokens);

  std::size_t size() const { return tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  // Maps unknown tokens to kUnk.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  TokenSeq encode(std::span<const std::string> tokens) const;
  // Drops PAD/BOS/EOS.
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  std::uint64_t fingerprint() const;

  // One token per line; line n holds id n + 4.
  std::string to_text() const;
  static Vocab from_text(std::string_view text);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

inline constexpr std::string_view kEndOfWord = "</w>";

class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeModel() = default;
  explicit BpeModel(std::vector<Merge> merges);

  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t merge_count() const { return merges_.size(); }

  // Splits one whitespace-free word into subword symbols.
  std::vector<std::string> encode_word(std::string_view word) const;

  // "bpe-v1 <n>" header, then "left right" per line.
  std::string to_text() const;
  static BpeModel from_text(std::string_view text);

  bool operator==(const BpeModel& other) const {
    return merges_ == other.merges_;
  }

 private:
  std::vector<Merge> merges_;
  std::map<Merge, std::size_t> rank_;
};

// Greedy most-frequent-pair merging; ties go to the lexicographically
// smallest (left, right) pair.
BpeModel learn_bpe(std::span<const std::string> lines, std::size_t num_merges);

// Splits a UTF-8 string into code points; throws on malformed input.
std::vector<std::string> utf8_chars(std::string_view text);
bool is_unicode_space(char32_t cp);
std::vector<std::string> split_whitespace(std::string_view line);

enum class TokenizerMode { kWhitespace, kBpe };

class Tokenizer {
 public:
  Tokenizer() = default;
  explicit Tokenizer(BpeModel bpe)
      : mode_(TokenizerMode::kBpe), bpe_(std::move(bpe)) {}

  TokenizerMode mode() const { return mode_; }
  const BpeModel& bpe() const { return bpe_; }

  // nullopt signals an empty line that should be skipped.
  std::optional<std::vector<std::string>> tokenize(std::string_view line) const;
  std::string detokenize(std::span<const std::string> tokens) const;

  std::uint64_t fingerprint() const;

 private:
  TokenizerMode mode_ = TokenizerMode::kWhitespace;
  BpeModel bpe_;
};

// Convenience wrapper over Tokenizer::tokenize.
std::optional<std::vector<std::string>> tokenize_line(std::string_view line,
                                                      const Tokenizer& tok);

struct SentencePair {
  TokenSeq source;  // ... EOS
  TokenSeq target;  // BOS ... EOS
};

struct RawPair {
  std::string source;
  std::string target;
  std::size_t line = 0;  // 1-based
};

struct TokenizedPair {
  std::vector<std::string> source;
  std::vector<std::string> target;
};

struct CorpusOptions {
  std::size_t max_len = 256;  // tokens per side, BOS/EOS excluded
  bool shared_vocab = false;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  Vocab source_vocab;
  Vocab target_vocab;
  std::string path;
  std::uint64_t tokenizer_fingerprint = 0;
  std::size_t skipped_empty = 0;
  std::size_t dropped_too_long = 0;

  std::size_t target_token_count() const;  // BOS excluded, EOS included
};

std::vector<RawPair> parse_tsv(std::string_view text, const std::string& name);
std::vector<RawPair> read_tsv(const std::string& path);
std::vector<RawPair> read_two_files(const std::string& source_path,
                                    const std::string& target_path);

struct TokenizeStats {
  std::size_t skipped_empty = 0;
  std::size_t dropped_too_long = 0;
};

std::vector<TokenizedPair> tokenize_pairs(std::span<const RawPair> raw,
                                          const Tokenizer& tok,
                                          const CorpusOptions& opts,
                                          TokenizeStats* stats);

std::pair<Vocab, Vocab> build_vocabs(std::span<const TokenizedPair> pairs,
                                     bool shared);

// Encodes with fixed vocabularies; OOV tokens become UNK.
ParallelCorpus encode_corpus(std::span<const TokenizedPair> pairs,
                             const Vocab& source_vocab,
                             const Vocab& target_vocab);

enum class CorpusFormat { kTsv, kTwoFiles };

// For kTwoFiles, `path` is the source file and `target_path` the target.
ParallelCorpus load_parallel(const std::string& path, CorpusFormat format,
                             const Tokenizer& tok, const CorpusOptions& opts,
                             const std::string& target_path = "");

TokenSeq encode_source(const std::vector<std::string>& tokens,
                       const Vocab& vocab);

}  // namespace knnmt
