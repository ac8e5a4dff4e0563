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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "knnmt/synthetic.h"
#include "test_util.h"

namespace knnmt {
namespace {

LexicalNgramModel fit_rows(
    const std::vector<std::pair<std::string, std::string>>& rows,
    ModelConfig cfg = ModelConfig()) {
  return LexicalNgramModel::fit(cfg, testing::make_corpus(rows));
}

ParallelCorpus synthetic_corpus(std::size_t n, std::uint64_t seed = 1) {
  SyntheticConfig syn;
  syn.seed = seed;
  return testing::corpus_from_raw(generate_domain(syn, 0, n, 0, 0).train);
}

// Independent feature sum: seeded Gaussian per source token and per
// (offset, prefix token), padded when the prefix is shorter than the window.
KeyVector oracle_key(const ModelConfig& c, std::span<const TokenId> source,
                     std::span<const TokenId> prefix) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(c.dim);
  for (TokenId s : source) {
    sum += c.source_weight * hashed_gaussian(source_feature_hash(c.seed, s), c.dim);
  }
  for (int j = 1; j <= c.window; ++j) {
    const TokenId t = j <= static_cast<int>(prefix.size())
                          ? prefix[prefix.size() - static_cast<std::size_t>(j)]
                          : kPad;
    sum += c.target_weight * hashed_gaussian(target_feature_hash(c.seed, t, j), c.dim);
  }
  return (sum / sum.norm()).cast<float>();
}

TEST(BaseModel, SingleObservationDominatesLexicalRow) {
  const auto m = fit_rows({{"a", "x"}});
  const TokenId a = m.source_vocab().id("a");
  const TokenId x = m.target_vocab().id("x");
  Eigen::Index arg;
  m.lexical_table().row(a).maxCoeff(&arg);
  EXPECT_EQ(static_cast<TokenId>(arg), x);
}

TEST(BaseModel, ComponentTablesAreNormalized) {
  const auto m = LexicalNgramModel::fit(ModelConfig(), synthetic_corpus(300));
  for (Eigen::Index r = 0; r < m.lexical_table().rows(); ++r) {
    EXPECT_NEAR(m.lexical_table().row(r).cast<double>().sum(), 1.0, 1e-5);
  }
  for (Eigen::Index r = 0; r < m.bigram_table().rows(); ++r) {
    EXPECT_NEAR(m.bigram_table().row(r).cast<double>().sum(), 1.0, 1e-5);
  }
}

TEST(BaseModel, MuZeroIgnoresSource) {
  ModelConfig cfg;
  cfg.mu = 0;
  const auto c = synthetic_corpus(200);
  const auto m = LexicalNgramModel::fit(cfg, c);
  const auto& pair = c.pairs[3];
  TokenSeq shuffled = pair.source;
  std::reverse(shuffled.begin(), shuffled.end() - 1);
  shuffled[0] = c.pairs[9].source[0];
  const TokenSeq prefix(pair.target.begin(), pair.target.begin() + 3);
  const auto a = m.step({pair.source, prefix});
  const auto b = m.step({shuffled, prefix});
  EXPECT_EQ(a.p_mt, b.p_mt);
}

TEST(BaseModel, DictionaryArgmaxMatchesTranslation) {
  const auto rows = testing::dictionary_rows(100);
  const auto c = testing::make_corpus(rows);
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  int hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const TokenSeq src{m.source_vocab().id(rows[i].first), kEos};
    const TokenSeq prefix{kBos};
    const auto out = m.step({src, prefix});
    Eigen::Index arg;
    out.p_mt.maxCoeff(&arg);
    hits += static_cast<TokenId>(arg) == m.target_vocab().id(rows[i].second);
  }
  EXPECT_GT(hits, 90);
}

TEST(BaseModel, StepIsDeterministicAndNormalized) {
  const auto c = synthetic_corpus(300);
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  for (std::size_t p = 0; p < 20; ++p) {
    const auto& pair = c.pairs[p];
    auto enc = m.encode(pair.source);
    for (std::size_t i = 1; i < pair.target.size(); ++i) {
      const std::span<const TokenId> prefix(pair.target.data(), i);
      const auto a = m.step(*enc, prefix);
      const auto b = m.step(*enc, prefix);
      EXPECT_EQ(a.p_mt, b.p_mt);
      EXPECT_EQ(a.key, b.key);
      EXPECT_NEAR(a.p_mt.sum(), 1.0, 1e-9);
      EXPECT_GT(a.p_mt.minCoeff(), 0.0);
      EXPECT_NEAR(a.key.norm(), 1.0f, 1e-6f);
      EXPECT_TRUE(a.key.allFinite());
    }
  }
}

TEST(BaseModel, KeyDependsOnlyOnWindow) {
  const auto c = synthetic_corpus(300);
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  const auto& src = c.pairs[0].source;
  const TokenSeq a{kBos, 7, 8, 9, 10};
  const TokenSeq b{kBos, 11, 12, 9, 10};
  EXPECT_EQ(m.step({src, a}).key, m.step({src, b}).key);
}

TEST(BaseModel, KeyMatchesFeatureSumOracle) {
  const auto c = synthetic_corpus(300);
  ModelConfig cfg;
  cfg.seed = 42;
  const auto m = LexicalNgramModel::fit(cfg, c);
  const auto& src = c.pairs[5].source;
  const TokenSeq a{kBos, 7, 8};
  const TokenSeq b{kBos, 7, 9};
  const KeyVector ka = m.step({src, a}).key;
  const KeyVector kb = m.step({src, b}).key;
  const KeyVector oa = oracle_key(cfg, src, a);
  const KeyVector ob = oracle_key(cfg, src, b);
  EXPECT_LT((ka - oa).cwiseAbs().maxCoeff(), 1e-6f);
  EXPECT_LT((kb - ob).cwiseAbs().maxCoeff(), 1e-6f);
  const float d = (ka - kb).squaredNorm();
  EXPECT_GT(d, 0.0f);
  EXPECT_NEAR(d, (oa - ob).squaredNorm(), 1e-5f);
  // Shorter prefixes pad the window.
  const TokenSeq bos{kBos};
  EXPECT_LT((m.step({src, bos}).key - oracle_key(cfg, src, bos)).cwiseAbs().maxCoeff(),
            1e-6f);
}

TEST(BaseModel, SeedChangesKeysOnly) {
  const auto c = synthetic_corpus(200);
  ModelConfig a, b;
  b.seed = 2;
  const auto ma = LexicalNgramModel::fit(a, c);
  const auto mb = LexicalNgramModel::fit(b, c);
  const TokenSeq prefix{kBos, 5};
  const auto sa = ma.step({c.pairs[0].source, prefix});
  const auto sb = mb.step({c.pairs[0].source, prefix});
  EXPECT_EQ(sa.p_mt, sb.p_mt);
  EXPECT_NE(sa.key, sb.key);
  EXPECT_NE(ma.fingerprint(), mb.fingerprint());
}

TEST(BaseModel, KeysAreLocal) {
  const auto c = synthetic_corpus(400);
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  struct Ctx {
    KeyVector key;
    TokenId next;
  };
  std::vector<Ctx> ctxs;
  for (std::size_t p = 0; p < 150; ++p) {
    const auto& pair = c.pairs[p];
    auto enc = m.encode(pair.source);
    for (std::size_t i = 1; i < pair.target.size(); ++i) {
      ctxs.push_back({m.step(*enc, std::span(pair.target.data(), i)).key,
                      pair.target[i]});
    }
  }
  double same = 0, diff = 0;
  std::size_t ns = 0, nd = 0;
  for (std::size_t i = 0; i < ctxs.size(); ++i) {
    for (std::size_t j = i + 1; j < ctxs.size(); ++j) {
      const double d = (ctxs[i].key - ctxs[j].key).squaredNorm();
      if (ctxs[i].next == ctxs[j].next) {
        same += d;
        ++ns;
      } else {
        diff += d;
        ++nd;
      }
    }
  }
  ASSERT_GT(ns, 0u);
  EXPECT_LT(same / static_cast<double>(ns), diff / static_cast<double>(nd));
}

TEST(BaseModel, OutOfVocabIdsAreErrors) {
  const auto m = fit_rows({{"a", "x"}});
  const TokenSeq bad{999, kEos};
  EXPECT_THROW(m.encode(bad), Error);
  const TokenSeq src{kEos};
  const TokenSeq prefix{kBos, 999};
  auto enc = m.encode(src);
  EXPECT_THROW(m.step(*enc, prefix), Error);
}

TEST(BaseModel, FitRejectsBadInput) {
  EXPECT_THROW(LexicalNgramModel::fit(ModelConfig(), ParallelCorpus()), Error);
  ModelConfig cfg;
  cfg.alpha = 0;
  EXPECT_THROW(fit_rows({{"a", "x"}}, cfg), Error);
}

TEST(ScoreSequence, BosEosIsOneStep) {
  const auto c = synthetic_corpus(100);
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  const TokenSeq target{kBos, kEos};
  const auto& src = c.pairs[0].source;
  EXPECT_DOUBLE_EQ(score_sequence(m, src, target),
                   std::log(m.step({src, TokenSeq{kBos}}).p_mt[kEos]));
}

TEST(ScoreSequence, EqualsSumOfSteps) {
  const auto c = synthetic_corpus(100);
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  const auto& pair = c.pairs[4];
  double manual = 0;
  for (std::size_t i = 1; i < pair.target.size(); ++i) {
    const TokenSeq prefix(pair.target.begin(),
                          pair.target.begin() + static_cast<std::ptrdiff_t>(i));
    manual += std::log(m.step({pair.source, prefix}).p_mt[pair.target[i]]);
  }
  EXPECT_NEAR(score_sequence(m, pair.source, pair.target), manual, 1e-12);
}

TEST(ScoreSequence, ReferenceBeatsShuffledTarget) {
  const auto c = synthetic_corpus(500);
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  std::mt19937_64 rng(3);
  int wins = 0, total = 0;
  for (std::size_t p = 0; p < 100; ++p) {
    const auto& pair = c.pairs[p];
    TokenSeq shuffled = pair.target;
    std::shuffle(shuffled.begin() + 1, shuffled.end() - 1, rng);
    if (shuffled == pair.target) continue;
    ++total;
    wins += score_sequence(m, pair.source, pair.target) >
            score_sequence(m, pair.source, shuffled);
  }
  EXPECT_GT(wins, total * 9 / 10);
}

TEST(ModelFile, RoundTripIsByteIdentical) {
  const auto c = synthetic_corpus(200);
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  const std::string bytes = m.serialize();
  EXPECT_EQ(bytes.rfind("lnm-v1", 0), 0u);
  const auto back = LexicalNgramModel::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.fingerprint(), m.fingerprint());
  const TokenSeq prefix{kBos, 6};
  EXPECT_EQ(back.step({c.pairs[1].source, prefix}).key,
            m.step({c.pairs[1].source, prefix}).key);
}

TEST(ModelFile, RefitIsByteIdentical) {
  const auto c = synthetic_corpus(200);
  EXPECT_EQ(LexicalNgramModel::fit(ModelConfig(), c).serialize(),
            LexicalNgramModel::fit(ModelConfig(), c).serialize());
}

TEST(ModelFile, CorruptFilesAreRejected) {
  const auto m = LexicalNgramModel::fit(ModelConfig(), synthetic_corpus(50));
  const std::string bytes = m.serialize();
  EXPECT_THROW(LexicalNgramModel::deserialize(bytes.substr(0, bytes.size() / 2)),
               Error);
  EXPECT_THROW(LexicalNgramModel::deserialize("lnm-v9" + bytes.substr(6)), Error);
  EXPECT_THROW(LexicalNgramModel::deserialize(bytes + "x"), Error);
}

}  // namespace
}  // namespace knnmt
