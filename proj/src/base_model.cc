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

#include "knnmt/base_model.h"

#include <cmath>
#include <numbers>

namespace knnmt {
namespace {

constexpr std::string_view kModelMagic = "lnm-v1";

// Source words without the trailing EOS; a bare EOS stands for itself.
std::span<const TokenId> source_words(std::span<const TokenId> source) {
  if (source.size() > 1 && source.back() == kEos) {
    return source.first(source.size() - 1);
  }
  return source;
}

class LexicalEncoding final : public SourceEncoding {
 public:
  ProbVector lexical_mean;    // mean of lexical rows over source tokens
  Eigen::VectorXd key_source; // weighted sum of source feature embeddings
};

double uniform01(std::uint64_t bits) {
  // 53 random bits -> (0, 1)
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::uint64_t source_feature_hash(std::uint64_t seed, TokenId tok) {
  return splitmix64(splitmix64(seed ^ 0x736f75726365ULL) ^ tok);
}

std::uint64_t target_feature_hash(std::uint64_t seed, TokenId tok, int offset) {
  std::uint64_t h = splitmix64(seed ^ 0x746172676574ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(offset));
  return splitmix64(h ^ tok);
}

Eigen::VectorXd hashed_gaussian(std::uint64_t feature_hash, int dim) {
  Eigen::VectorXd v(dim);
  std::uint64_t state = feature_hash;
  for (int i = 0; i < dim; i += 2) {
    state = splitmix64(state);
    double u1 = uniform01(state);
    state = splitmix64(state);
    double u2 = uniform01(state);
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    v[i] = r * std::cos(theta);
    if (i + 1 < dim) v[i + 1] = r * std::sin(theta);
  }
  return v / std::sqrt(static_cast<double>(dim));
}

LexicalNgramModel LexicalNgramModel::fit(const ModelConfig& config,
                                         const ParallelCorpus& corpus,
                                         const Tokenizer& tokenizer) {
  if (corpus.pairs.empty()) throw usage_error("fit: empty corpus");
  if (config.mu < 0 || config.mu > 1) throw usage_error("fit: mu not in [0,1]");
  if (config.alpha <= 0) throw usage_error("fit: alpha must be positive");
  if (config.window < 0) throw usage_error("fit: window must be >= 0");
  if (config.dim < 1) throw usage_error("fit: dim must be >= 1");

  const auto vs = static_cast<Eigen::Index>(corpus.source_vocab.size());
  const auto vt = static_cast<Eigen::Index>(corpus.target_vocab.size());
  RowMatrix<double> lex = RowMatrix<double>::Zero(vs, vt);
  RowMatrix<double> big = RowMatrix<double>::Zero(vt, vt);

  for (const auto& pair : corpus.pairs) {
    const auto words = source_words(pair.source);
    const double credit = 1.0 / static_cast<double>(words.size());
    for (std::size_t i = 1; i < pair.target.size(); ++i) {
      const TokenId t = pair.target[i];
      if (t != kEos) {
        for (TokenId s : words) lex(s, t) += credit;
      }
      big(pair.target[i - 1], t) += 1.0;
    }
  }

  auto smooth = [&](RowMatrix<double>& counts) {
    RowMatrix<float> probs(counts.rows(), counts.cols());
    const double denom_extra = config.alpha * static_cast<double>(vt);
    for (Eigen::Index r = 0; r < counts.rows(); ++r) {
      const double denom = counts.row(r).sum() + denom_extra;
      probs.row(r) =
          ((counts.row(r).array() + config.alpha) / denom).cast<float>();
    }
    return probs;
  };

  LexicalNgramModel m;
  m.config_ = config;
  m.source_vocab_ = corpus.source_vocab;
  m.target_vocab_ = corpus.target_vocab;
  m.tokenizer_ = tokenizer;
  m.lexical_ = smooth(lex);
  m.bigram_ = smooth(big);
  m.finalize();
  return m;
}

void LexicalNgramModel::finalize() {
  const int d = config_.dim;
  const auto vs = lexical_.rows();
  const auto vt = bigram_.rows();
  source_embed_.resize(vs, d);
  for (Eigen::Index s = 0; s < vs; ++s) {
    source_embed_.row(s) =
        hashed_gaussian(source_feature_hash(config_.seed,
                                            static_cast<TokenId>(s)),
                        d)
            .transpose();
  }
  target_embed_.assign(static_cast<std::size_t>(config_.window),
                       RowMatrix<double>(vt, d));
  for (int j = 1; j <= config_.window; ++j) {
    auto& table = target_embed_[static_cast<std::size_t>(j - 1)];
    for (Eigen::Index t = 0; t < vt; ++t) {
      table.row(t) = hashed_gaussian(target_feature_hash(
                                         config_.seed,
                                         static_cast<TokenId>(t), j),
                                     d)
                         .transpose();
    }
  }
  Fingerprint fp;
  fp.update(kModelMagic);
  fp.update_pod(config_.mu).update_pod(config_.alpha);
  fp.update_pod(config_.window).update_pod(config_.seed).update_pod(config_.dim);
  fp.update_pod(config_.source_weight).update_pod(config_.target_weight);
  fp.update_pod(source_vocab_.fingerprint());
  fp.update_pod(target_vocab_.fingerprint());
  fp.update_pod(tokenizer_.fingerprint());
  fp.update(lexical_.data(), sizeof(float) * lexical_.size());
  fp.update(bigram_.data(), sizeof(float) * bigram_.size());
  fingerprint_ = fp.value();
}

Eigen::VectorXd LexicalNgramModel::source_embedding(TokenId tok) const {
  return source_embed_.row(tok).transpose();
}

Eigen::VectorXd LexicalNgramModel::target_embedding(TokenId tok,
                                                    int offset) const {
  return target_embed_.at(static_cast<std::size_t>(offset - 1))
      .row(tok)
      .transpose();
}

std::unique_ptr<const SourceEncoding> LexicalNgramModel::encode(
    std::span<const TokenId> source) const {
  if (source.empty()) throw usage_error("empty source sequence");
  auto enc = std::make_unique<LexicalEncoding>();
  enc->lexical_mean = ProbVector::Zero(bigram_.rows());
  enc->key_source = Eigen::VectorXd::Zero(config_.dim);
  for (TokenId s : source) {
    if (s >= lexical_.rows()) {
      throw usage_error("source token id " + std::to_string(s) +
                        " out of vocab");
    }
    enc->key_source += config_.source_weight * source_embed_.row(s).transpose();
  }
  const auto words = source_words(source);
  for (TokenId s : words) {
    enc->lexical_mean += lexical_.row(s).transpose().cast<double>();
  }
  enc->lexical_mean /= static_cast<double>(words.size());
  return enc;
}

StepOutput LexicalNgramModel::step(const SourceEncoding& base_enc,
                                   std::span<const TokenId> prefix) const {
  const auto& enc = static_cast<const LexicalEncoding&>(base_enc);
  if (prefix.empty()) throw usage_error("empty target prefix");
  for (TokenId t : prefix) {
    if (t >= bigram_.rows()) {
      throw usage_error("target token id " + std::to_string(t) +
                        " out of vocab");
    }
  }
  StepOutput out;
  out.p_mt = config_.mu * enc.lexical_mean +
             (1.0 - config_.mu) *
                 bigram_.row(prefix.back()).transpose().cast<double>();
  out.p_mt /= out.p_mt.sum();

  Eigen::VectorXd key = enc.key_source;
  for (int j = 1; j <= config_.window; ++j) {
    const auto n = static_cast<int>(prefix.size());
    const TokenId tok = j <= n ? prefix[static_cast<std::size_t>(n - j)] : kPad;
    key += config_.target_weight *
           target_embed_[static_cast<std::size_t>(j - 1)].row(tok).transpose();
  }
  const double norm = key.norm();
  out.key = (norm > 0 ? key / norm : key).cast<float>();
  return out;
}

double score_sequence(const TranslationModel& model,
                      std::span<const TokenId> source,
                      std::span<const TokenId> target) {
  auto enc = model.encode(source);
  double total = 0;
  for (std::size_t i = 1; i < target.size(); ++i) {
    auto out = model.step(*enc, target.first(i));
    total += std::log(out.p_mt[target[i]]);
  }
  return total;
}

std::string LexicalNgramModel::serialize() const {
  BinaryWriter w;
  w.magic(kModelMagic);
  w.pod(config_.mu);
  w.pod(config_.alpha);
  w.pod(static_cast<std::uint32_t>(config_.window));
  w.pod(config_.seed);
  w.pod(static_cast<std::uint32_t>(config_.dim));
  w.pod(source_vocab_.fingerprint());
  w.pod(target_vocab_.fingerprint());
  w.pod(static_cast<std::uint32_t>(lexical_.rows()));
  w.pod(static_cast<std::uint32_t>(bigram_.rows()));
  w.array(std::span<const float>(lexical_.data(), lexical_.size()));
  w.array(std::span<const float>(bigram_.data(), bigram_.size()));
  // Trailing section: key weights, tokenizer and vocabularies, so a model
  // file is enough to translate raw text.
  w.pod(config_.source_weight);
  w.pod(config_.target_weight);
  w.pod(static_cast<std::uint8_t>(tokenizer_.mode() == TokenizerMode::kBpe));
  w.string(tokenizer_.bpe().to_text());
  w.string(source_vocab_.to_text());
  w.string(target_vocab_.to_text());
  return w.take();
}

LexicalNgramModel LexicalNgramModel::deserialize(std::string_view bytes) {
  BinaryReader r(bytes, "model file");
  r.expect_magic(kModelMagic);
  LexicalNgramModel m;
  r.section("config");
  m.config_.mu = r.pod<double>();
  m.config_.alpha = r.pod<double>();
  m.config_.window = static_cast<int>(r.pod<std::uint32_t>());
  m.config_.seed = r.pod<std::uint64_t>();
  m.config_.dim = static_cast<int>(r.pod<std::uint32_t>());
  const auto src_fp = r.pod<std::uint64_t>();
  const auto tgt_fp = r.pod<std::uint64_t>();
  const auto vs = r.pod<std::uint32_t>();
  const auto vt = r.pod<std::uint32_t>();
  r.section("lexical table");
  m.lexical_.resize(vs, vt);
  r.array(std::span<float>(m.lexical_.data(), m.lexical_.size()));
  r.section("bigram table");
  m.bigram_.resize(vt, vt);
  r.array(std::span<float>(m.bigram_.data(), m.bigram_.size()));
  r.section("tokenizer");
  m.config_.source_weight = r.pod<double>();
  m.config_.target_weight = r.pod<double>();
  const bool bpe = r.pod<std::uint8_t>() != 0;
  auto bpe_text = r.string();
  m.tokenizer_ = bpe ? Tokenizer(BpeModel::from_text(bpe_text)) : Tokenizer();
  r.section("vocabularies");
  m.source_vocab_ = Vocab::from_text(r.string());
  m.target_vocab_ = Vocab::from_text(r.string());
  if (m.source_vocab_.fingerprint() != src_fp ||
      m.target_vocab_.fingerprint() != tgt_fp ||
      m.source_vocab_.size() != vs || m.target_vocab_.size() != vt) {
    throw mismatch_error("model file: vocabulary does not match fingerprint");
  }
  if (!r.at_end()) throw usage_error("model file: trailing bytes");
  m.finalize();
  return m;
}

void LexicalNgramModel::save(const std::string& path) const {
  write_file(path, serialize());
}

LexicalNgramModel LexicalNgramModel::load(const std::string& path) {
  return deserialize(read_file(path));
}

}  // namespace knnmt
