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

#include "knnmt/corpus.h"

#include <algorithm>
#include <array>
#include <sstream>

namespace knnmt {
namespace {

constexpr std::array<std::string_view, kNumReserved> kReservedNames = {
    "<pad>", "<s>", "</s>", "<unk>"};

bool is_reserved_name(std::string_view token) {
  return std::find(kReservedNames.begin(), kReservedNames.end(), token) !=
         kReservedNames.end();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

// ---------------------------------------------------------------- Vocab

Vocab::Vocab() {
  for (auto name : kReservedNames) push(std::string(name));
}

void Vocab::push(std::string token) {
  ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(std::span<const std::vector<std::string>> sentences) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& sentence : sentences) {
    for (const auto& tok : sentence) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(),
                                                          counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (auto& [tok, count] : sorted) {
    if (!is_reserved_name(tok)) v.push(std::move(tok));
  }
  return v;
}

Vocab Vocab::from_tokens(std::span<const std::string> corpus_tokens) {
  Vocab v;
  for (const auto& tok : corpus_tokens) {
    if (is_reserved_name(tok) || v.ids_.count(tok)) {
      throw usage_error("vocab: duplicate or reserved token '" + tok + "'");
    }
    v.push(tok);
  }
  return v;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  return find(token).value_or(kUnk);
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw usage_error("token id " + std::to_string(id) + " out of vocab");
  }
  return tokens_[id];
}

TokenSeq Vocab::encode(std::span<const std::string> tokens) const {
  TokenSeq out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    out.push_back(token(id));
  }
  return out;
}

std::uint64_t Vocab::fingerprint() const {
  Fingerprint fp;
  for (const auto& t : tokens_) fp.update(t);
  return fp.value();
}

std::string Vocab::to_text() const {
  std::string out;
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\n';
  }
  return out;
}

Vocab Vocab::from_text(std::string_view text) {
  std::vector<std::string> toks;
  for (auto line : split_lines(text)) toks.emplace_back(line);
  return from_tokens(toks);
}

// ---------------------------------------------------------------- UTF-8

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len;
    char32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      throw usage_error("invalid UTF-8 at byte " + std::to_string(i));
    }
    if (i + len > text.size()) {
      throw usage_error("truncated UTF-8 sequence at byte " +
                        std::to_string(i));
    }
    for (std::size_t k = 1; k < len; ++k) {
      auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) {
        throw usage_error("invalid UTF-8 at byte " + std::to_string(i + k));
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr char32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw usage_error("invalid UTF-8 code point at byte " +
                        std::to_string(i));
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

bool is_unicode_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 ||
         cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) ||
         cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

namespace {

char32_t decode_char(const std::string& ch) {
  auto b0 = static_cast<unsigned char>(ch[0]);
  if (ch.size() == 1) return b0;
  char32_t cp = b0 & (0xFF >> (ch.size() + 1));
  for (std::size_t k = 1; k < ch.size(); ++k) {
    cp = (cp << 6) | (static_cast<unsigned char>(ch[k]) & 0x3F);
  }
  return cp;
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> words;
  std::string cur;
  for (const auto& ch : utf8_chars(line)) {
    if (is_unicode_space(decode_char(ch))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// ---------------------------------------------------------------- BPE

BpeModel::BpeModel(std::vector<Merge> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    rank_.emplace(merges_[i], i);  // first occurrence wins
  }
}

namespace {

std::vector<std::string> initial_symbols(std::string_view word) {
  auto symbols = utf8_chars(word);
  if (!symbols.empty()) symbols.back() += kEndOfWord;
  return symbols;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& left,
                 const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left &&
        symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

}  // namespace

std::vector<std::string> BpeModel::encode_word(std::string_view word) const {
  auto symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = rank_.size();
    const Merge* best = nullptr;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find(Merge(symbols[i], symbols[i + 1]));
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = &it->first;
      }
    }
    if (best == nullptr) break;
    apply_merge(symbols, best->first, best->second);
  }
  return symbols;
}

std::string BpeModel::to_text() const {
  std::string out = "bpe-v1 " + std::to_string(merges_.size()) + "\n";
  for (const auto& [l, r] : merges_) out += l + " " + r + "\n";
  return out;
}

BpeModel BpeModel::from_text(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty() || lines[0].substr(0, 7) != "bpe-v1 ") {
    throw usage_error("bpe model: missing 'bpe-v1 <n>' header");
  }
  std::size_t n = 0;
  try {
    n = std::stoul(std::string(lines[0].substr(7)));
  } catch (const std::exception&) {
    throw usage_error("bpe model: bad merge count in header");
  }
  if (lines.size() - 1 != n) {
    throw usage_error("bpe model: header says " + std::to_string(n) +
                      " merges, file has " + std::to_string(lines.size() - 1));
  }
  std::vector<Merge> merges;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto sp = lines[i].find(' ');
    if (sp == std::string_view::npos || sp == 0 || sp + 1 == lines[i].size() ||
        lines[i].find(' ', sp + 1) != std::string_view::npos) {
      throw usage_error("bpe model: malformed merge at line " +
                        std::to_string(i + 1));
    }
    merges.emplace_back(std::string(lines[i].substr(0, sp)),
                        std::string(lines[i].substr(sp + 1)));
  }
  return BpeModel(std::move(merges));
}

BpeModel learn_bpe(std::span<const std::string> lines,
                   std::size_t num_merges) {
  std::map<std::string, std::size_t> word_counts;
  for (const auto& line : lines) {
    for (auto& w : split_whitespace(line)) ++word_counts[w];
  }
  if (word_counts.empty()) throw usage_error("learn_bpe: empty corpus");

  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  words.reserve(word_counts.size());
  for (const auto& [w, c] : word_counts) words.emplace_back(initial_symbols(w), c);

  std::vector<BpeModel::Merge> merges;
  while (merges.size() < num_merges) {
    std::map<BpeModel::Merge, std::size_t> pair_counts;
    for (const auto& [symbols, count] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        pair_counts[{symbols[i], symbols[i + 1]}] += count;
      }
    }
    if (pair_counts.empty()) break;
    // std::map iterates in lexicographic order, so a strict > keeps the
    // smallest pair among equal counts.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    BpeModel::Merge merge = best->first;
    for (auto& [symbols, count] : words) {
      apply_merge(symbols, merge.first, merge.second);
    }
    merges.push_back(std::move(merge));
  }
  return BpeModel(std::move(merges));
}

// ---------------------------------------------------------------- Tokenizer

std::optional<std::vector<std::string>> Tokenizer::tokenize(
    std::string_view line) const {
  auto words = split_whitespace(line);
  if (words.empty()) return std::nullopt;
  if (mode_ == TokenizerMode::kWhitespace) return words;
  std::vector<std::string> out;
  for (const auto& w : words) {
    auto sub = bpe_.encode_word(w);
    out.insert(out.end(), std::make_move_iterator(sub.begin()),
               std::make_move_iterator(sub.end()));
  }
  return out;
}

std::string Tokenizer::detokenize(std::span<const std::string> tokens) const {
  std::string out;
  if (mode_ == TokenizerMode::kWhitespace) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) out += ' ';
      out += tokens[i];
    }
    return out;
  }
  for (const auto& t : tokens) {
    if (ends_with(t, kEndOfWord)) {
      out.append(t, 0, t.size() - kEndOfWord.size());
      out += ' ';
    } else {
      out += t;
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::uint64_t Tokenizer::fingerprint() const {
  Fingerprint fp;
  fp.update(mode_ == TokenizerMode::kWhitespace ? "whitespace" : "bpe");
  for (const auto& [l, r] : bpe_.merges()) fp.update(l).update(r);
  return fp.value();
}

std::optional<std::vector<std::string>> tokenize_line(std::string_view line,
                                                      const Tokenizer& tok) {
  return tok.tokenize(line);
}

// ---------------------------------------------------------------- Corpus

std::size_t ParallelCorpus::target_token_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.target.size() - 1;
  return n;
}

std::vector<RawPair> parse_tsv(std::string_view text, const std::string& name) {
  std::vector<RawPair> out;
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto line = lines[i];
    auto tab = line.find('\t');
    std::size_t fields = static_cast<std::size_t>(
                             std::count(line.begin(), line.end(), '\t')) +
                         1;
    if (fields != 2) {
      throw usage_error(name + ":" + std::to_string(i + 1) +
                        ": expected 2 tab-separated fields, got " +
                        std::to_string(fields));
    }
    out.push_back({std::string(line.substr(0, tab)),
                   std::string(line.substr(tab + 1)), i + 1});
  }
  return out;
}

std::vector<RawPair> read_tsv(const std::string& path) {
  return parse_tsv(read_file(path), path);
}

std::vector<RawPair> read_two_files(const std::string& source_path,
                                    const std::string& target_path) {
  auto src = read_file(source_path);
  auto tgt = read_file(target_path);
  auto src_lines = split_lines(src);
  auto tgt_lines = split_lines(tgt);
  if (src_lines.size() != tgt_lines.size()) {
    throw usage_error("line count mismatch: " + source_path + " has " +
                      std::to_string(src_lines.size()) + ", " + target_path +
                      " has " + std::to_string(tgt_lines.size()));
  }
  std::vector<RawPair> out;
  out.reserve(src_lines.size());
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    out.push_back({std::string(src_lines[i]), std::string(tgt_lines[i]), i + 1});
  }
  return out;
}

std::vector<TokenizedPair> tokenize_pairs(std::span<const RawPair> raw,
                                          const Tokenizer& tok,
                                          const CorpusOptions& opts,
                                          TokenizeStats* stats) {
  TokenizeStats local;
  std::vector<TokenizedPair> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    std::optional<std::vector<std::string>> s, t;
    try {
      s = tok.tokenize(r.source);
      t = tok.tokenize(r.target);
    } catch (const Error& e) {
      throw usage_error("line " + std::to_string(r.line) + ": " + e.what());
    }
    if (!s || !t) {
      ++local.skipped_empty;
      continue;
    }
    if (s->size() > opts.max_len || t->size() > opts.max_len) {
      ++local.dropped_too_long;
      continue;
    }
    out.push_back({std::move(*s), std::move(*t)});
  }
  if (stats) *stats = local;
  return out;
}

std::pair<Vocab, Vocab> build_vocabs(std::span<const TokenizedPair> pairs,
                                     bool shared) {
  std::vector<std::vector<std::string>> src, tgt;
  src.reserve(pairs.size());
  tgt.reserve(pairs.size());
  for (const auto& p : pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  if (shared) {
    src.insert(src.end(), tgt.begin(), tgt.end());
    Vocab v = Vocab::build(src);
    return {v, v};
  }
  return {Vocab::build(src), Vocab::build(tgt)};
}

TokenSeq encode_source(const std::vector<std::string>& tokens,
                       const Vocab& vocab) {
  TokenSeq s = vocab.encode(tokens);
  s.push_back(kEos);
  return s;
}

ParallelCorpus encode_corpus(std::span<const TokenizedPair> pairs,
                             const Vocab& source_vocab,
                             const Vocab& target_vocab) {
  ParallelCorpus c;
  c.source_vocab = source_vocab;
  c.target_vocab = target_vocab;
  c.pairs.reserve(pairs.size());
  for (const auto& p : pairs) {
    SentencePair sp;
    sp.source = encode_source(p.source, source_vocab);
    sp.target.reserve(p.target.size() + 2);
    sp.target.push_back(kBos);
    for (const auto& t : p.target) sp.target.push_back(target_vocab.id(t));
    sp.target.push_back(kEos);
    c.pairs.push_back(std::move(sp));
  }
  return c;
}

ParallelCorpus load_parallel(const std::string& path, CorpusFormat format,
                             const Tokenizer& tok, const CorpusOptions& opts,
                             const std::string& target_path) {
  auto raw = format == CorpusFormat::kTsv ? read_tsv(path)
                                          : read_two_files(path, target_path);
  TokenizeStats stats;
  auto tokenized = tokenize_pairs(raw, tok, opts, &stats);
  if (tokenized.empty()) {
    throw usage_error(path + ": no usable sentence pairs");
  }
  auto [src_vocab, tgt_vocab] = build_vocabs(tokenized, opts.shared_vocab);
  ParallelCorpus c = encode_corpus(tokenized, src_vocab, tgt_vocab);
  c.path = path;
  c.tokenizer_fingerprint = tok.fingerprint();
  c.skipped_empty = stats.skipped_empty;
  c.dropped_too_long = stats.dropped_too_long;
  return c;
}

}  // namespace knnmt
