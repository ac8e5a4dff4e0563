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

#include "knnmt/datastore.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "knnmt/synthetic.h"
#include "test_util.h"

namespace knnmt {
namespace {

RetrievalSet make_set(const std::vector<std::pair<double, TokenId>>& items) {
  RetrievalSet r;
  std::uint64_t id = 0;
  for (const auto& [d, v] : items) r.items.push_back({d, v, id++, std::nullopt});
  return r;
}

// Direct softmax over negative distances, summed per value in long double.
std::vector<double> brute_force(const RetrievalSet& r, double t, std::size_t vocab) {
  std::vector<long double> mass(vocab, 0.0L);
  long double z = 0;
  for (const auto& it : r.items) {
    const long double w = std::exp(-static_cast<long double>(it.distance) / t);
    mass[it.value] += w;
    z += w;
  }
  std::vector<double> out(vocab);
  for (std::size_t i = 0; i < vocab; ++i) out[i] = static_cast<double>(mass[i] / z);
  return out;
}

double entropy(const ProbVector& p) {
  double h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

struct Fixture {
  ParallelCorpus corpus;
  LexicalNgramModel model;
};

Fixture fixture(std::size_t n, std::uint64_t seed = 1) {
  SyntheticConfig syn;
  syn.seed = seed;
  auto c = testing::corpus_from_raw(generate_domain(syn, 0, n, 0, 0).train);
  auto m = LexicalNgramModel::fit(ModelConfig(), c);
  return {std::move(c), std::move(m)};
}

DatastoreConfig flat_config(bool provenance = false) {
  DatastoreConfig c;
  c.flat = true;
  c.store_provenance = provenance;
  return c;
}

// -------------------------------------------------------------- p_kNN math

TEST(KnnDistribution, SingleNeighborIsOneHot) {
  const auto p = knn_distribution(make_set({{0.0, 5}}), 10, 8);
  EXPECT_FALSE(p.empty);
  EXPECT_EQ(p.probs[5], 1.0);
  EXPECT_EQ(p.probs.sum(), 1.0);
}

TEST(KnnDistribution, EqualDistancesCountOccurrences) {
  for (double t : {0.5, 1.0, 10.0, 100.0}) {
    const auto p = knn_distribution(make_set({{0, 4}, {0, 5}, {0, 4}}), t, 6);
    EXPECT_NEAR(p.probs[4], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(p.probs[5], 1.0 / 3.0, 1e-12);
  }
}

TEST(KnnDistribution, HandComputedTwoNeighbors) {
  const auto p = knn_distribution(make_set({{0, 4}, {1.0986, 5}}), 1, 6);
  EXPECT_NEAR(p.probs[4], 0.750, 1e-3);
  EXPECT_NEAR(p.probs[5], 0.250, 1e-3);
}

TEST(KnnDistribution, EmptySetIsFlaggedZero) {
  const auto p = knn_distribution(RetrievalSet(), 10, 6);
  EXPECT_TRUE(p.empty);
  EXPECT_EQ(p.probs, ProbVector::Zero(6));
}

TEST(KnnDistribution, MatchesBruteForceAndRestrictsSupport) {
  std::mt19937_64 rng(1);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t vocab = 5 + uniform_index(rng, 50);
    const std::size_t k = 1 + uniform_index(rng, 64);
    std::vector<std::pair<double, TokenId>> items;
    for (std::size_t i = 0; i < k; ++i) {
      items.emplace_back(4.0 * uniform_real(rng),
                         static_cast<TokenId>(uniform_index(rng, vocab)));
    }
    std::sort(items.begin(), items.end());
    const double t = std::pow(10.0, 3.0 * uniform_real(rng) - 1.0);
    const auto set = make_set(items);
    const auto p = knn_distribution(set, t, vocab);
    const auto want = brute_force(set, t, vocab);
    double linf = 0;
    for (std::size_t y = 0; y < vocab; ++y) {
      linf = std::max(linf, std::abs(p.probs[static_cast<Eigen::Index>(y)] - want[y]));
      const bool retrieved = std::any_of(items.begin(), items.end(),
                                         [&](const auto& it) { return it.second == y; });
      if (!retrieved) EXPECT_EQ(p.probs[static_cast<Eigen::Index>(y)], 0.0);
    }
    EXPECT_LE(linf, 1e-9);
    EXPECT_NEAR(p.probs.sum(), 1.0, 1e-9);
  }
}

double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

RetrievalSet random_set(std::mt19937_64& rng, bool distinct_values) {
  std::vector<std::pair<double, TokenId>> items;
  const std::size_t k = 2 + uniform_index(rng, 63);
  for (std::size_t i = 0; i < k; ++i) {
    const auto v = distinct_values ? static_cast<TokenId>(i)
                                   : static_cast<TokenId>(uniform_index(rng, 8));
    items.emplace_back(4.0 * uniform_real(rng), v);
  }
  std::sort(items.begin(), items.end());
  return make_set(items);
}

TEST(KnnDistribution, NeighborEntropyGrowsWithTemperature) {
  std::mt19937_64 rng(2);
  for (int c = 0; c < 1000; ++c) {
    const auto set = random_set(rng, false);
    double prev = -1;
    for (double t : {1.0, 10.0, 100.0}) {
      const double h = entropy(neighbor_probabilities(set, t));
      EXPECT_GT(h, prev);
      prev = h;
    }
  }
}

TEST(KnnDistribution, EntropyGrowsWithTemperatureForDistinctValues) {
  std::mt19937_64 rng(3);
  for (int c = 0; c < 1000; ++c) {
    const auto set = random_set(rng, true);
    double prev = -1;
    for (double t : {1.0, 10.0, 100.0}) {
      const double h = entropy(knn_distribution(set, t, 70).probs);
      EXPECT_GT(h, prev);
      prev = h;
    }
  }
}

// With repeated values, flattening the neighbor weights moves p_kNN toward
// the value frequencies, which can have lower entropy.
TEST(KnnDistribution, AggregationCanLowerEntropy) {
  const auto set = make_set({{0, 1}, {1, 2}, {1, 2}, {1, 2}, {1, 2}, {1, 2}});
  const double h1 = entropy(knn_distribution(set, 1, 3).probs);
  const double h100 = entropy(knn_distribution(set, 100, 3).probs);
  EXPECT_LT(h100, h1);
  EXPECT_GT(entropy(neighbor_probabilities(set, 100)),
            entropy(neighbor_probabilities(set, 1)));
}

TEST(KnnDistribution, ScalingDistancesEqualsDividingTemperature) {
  std::mt19937_64 rng(3);
  for (int c = 0; c < 100; ++c) {
    std::vector<std::pair<double, TokenId>> items, scaled;
    const double factor = 0.1 + 5 * uniform_real(rng);
    for (int i = 0; i < 16; ++i) {
      const double d = 2 * uniform_real(rng);
      const auto v = static_cast<TokenId>(uniform_index(rng, 10));
      items.emplace_back(d, v);
      scaled.emplace_back(d * factor, v);
    }
    const auto a = knn_distribution(make_set(scaled), 10.0, 10).probs;
    const auto b = knn_distribution(make_set(items), 10.0 / factor, 10).probs;
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(KnnDistribution, NeighborProbabilitiesSumToOne) {
  const auto set = make_set({{0.1, 1}, {0.2, 1}, {0.5, 2}});
  const auto w = neighbor_probabilities(set, 1.0);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_NEAR(w[0] + w[1] + w[2], 1.0, 1e-12);
  EXPECT_NEAR(w[0] / w[2], std::exp(0.4), 1e-12);
}

TEST(KnnParams, Validation) {
  KnnParams p;
  EXPECT_EQ(p.k, 64);
  EXPECT_EQ(p.nprobe, 32);
  EXPECT_NO_THROW(p.validate());
  p.temperature = 0;
  EXPECT_THROW(p.validate(), Error);
  p = KnnParams();
  p.lambda = 1.5;
  EXPECT_THROW(p.validate(), Error);
  p = KnnParams();
  p.k = 0;
  EXPECT_THROW(p.validate(), Error);
}

// ---------------------------------------------------------------- building

TEST(Build, OnePairGivesOneEntryPerTargetToken) {
  const auto c = testing::make_corpus({{"a b", "x y"}});
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  const auto ds = build_datastore(m, c, flat_config(true));
  ASSERT_EQ(ds.size(), 3u);
  const auto& tv = c.target_vocab;
  EXPECT_EQ(std::vector<TokenId>(ds.values().begin(), ds.values().end()),
            (std::vector<TokenId>{tv.id("x"), tv.id("y"), kEos}));
  EXPECT_EQ(ds.provenance()[2], (Provenance{0, 3}));
}

TEST(Build, DuplicatePairsDoubleTheCount) {
  const auto c = testing::make_corpus({{"a b", "x y"}, {"a b", "x y"}});
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  const auto ds = build_datastore(m, c, flat_config());
  EXPECT_EQ(ds.size(), 6u);
  const auto& flat = dynamic_cast<const FlatIndex&>(ds.index());
  EXPECT_EQ(flat.keys().row(0), flat.keys().row(3));
}

TEST(Build, SizeEqualsIndependentRecount) {
  const auto f = fixture(1000);
  std::size_t want = 0;
  for (const auto& p : f.corpus.pairs) want += p.target.size() - 1;
  const auto ds = build_datastore(f.model, f.corpus, DatastoreConfig());
  EXPECT_EQ(ds.size(), want);
  EXPECT_EQ(ds.index().size(), want);
}

TEST(Build, KeysMatchModelSteps) {
  const auto f = fixture(50);
  const auto e = compute_entries(f.model, f.corpus);
  const auto& pair = f.corpus.pairs[7];
  std::size_t row = 0;
  for (std::size_t p = 0; p < 7; ++p) row += f.corpus.pairs[p].target.size() - 1;
  const TokenSeq prefix(pair.target.begin(), pair.target.begin() + 2);
  const auto step = f.model.step({pair.source, prefix});
  EXPECT_EQ(e.keys.row(static_cast<Eigen::Index>(row + 1)).transpose(), step.key);
  EXPECT_EQ(e.values[row + 1], pair.target[2]);
}

TEST(Build, MismatchedVocabIsRefused) {
  const auto f = fixture(50);
  const auto other = testing::make_corpus({{"q", "r"}});
  EXPECT_THROW(build_datastore(f.model, other, flat_config()), Error);
}

TEST(Build, EmptyCorpusIsAnError) {
  const auto f = fixture(50);
  ParallelCorpus empty = f.corpus;
  empty.pairs.clear();
  EXPECT_THROW(build_datastore(f.model, empty, flat_config()), Error);
}

// --------------------------------------------------------------- retrieval

TEST(Retrieve, StoredKeyComesBackFirst) {
  const auto f = fixture(100);
  const auto ds = build_datastore(f.model, f.corpus, flat_config(true));
  const auto e = compute_entries(f.model, f.corpus);
  KnnParams p;
  p.k = 1;
  const auto r = ds.retrieve(e.keys.row(10).transpose(), p);
  ASSERT_EQ(r.items.size(), 1u);
  EXPECT_EQ(r.items[0].distance, 0.0);
  EXPECT_EQ(r.items[0].value, e.values[r.items[0].id]);
  ASSERT_TRUE(r.items[0].provenance);
}

TEST(Retrieve, KBeyondSizeReturnsAll) {
  const auto c = testing::make_corpus({{"a b", "x y"}});
  const auto m = LexicalNgramModel::fit(ModelConfig(), c);
  const auto ds = build_datastore(m, c, flat_config());
  KnnParams p;
  p.k = 64;
  EXPECT_EQ(ds.retrieve(KeyVector::Zero(64), p).items.size(), 3u);
}

TEST(Retrieve, FlatAndIdentityIvfAgree) {
  const auto f = fixture(600);
  const auto flat = build_datastore(f.model, f.corpus, flat_config());
  DatastoreConfig dc;
  dc.ivfpq.clusters = 16;
  dc.ivfpq.identity_codes = true;
  const auto ivf = build_datastore(f.model, f.corpus, dc);
  KnnParams p;
  p.nprobe = 16;
  std::mt19937_64 rng(5);
  for (int q = 0; q < 30; ++q) {
    const KeyVector query = testing::random_unit(64, rng);
    const auto a = flat.retrieve(query, p);
    const auto b = ivf.retrieve(query, p);
    ASSERT_EQ(a.items.size(), b.items.size());
    for (std::size_t i = 0; i < a.items.size(); ++i) {
      EXPECT_EQ(a.items[i].id, b.items[i].id);
      EXPECT_EQ(a.items[i].value, b.items[i].value);
      EXPECT_NEAR(a.items[i].distance, b.items[i].distance, 1e-5);
    }
  }
}

TEST(Retrieve, FlatDistributionMatchesBruteForce) {
  const auto f = fixture(300);
  const auto ds = build_datastore(f.model, f.corpus, flat_config());
  const auto e = compute_entries(f.model, f.corpus);
  const std::size_t vocab = f.model.target_vocab_size();
  std::mt19937_64 rng(6);
  for (int q = 0; q < 20; ++q) {
    const KeyVector query = testing::random_unit(64, rng);
    KnnParams p;
    const auto r = ds.retrieve(query, p);
    // Independent top-k over all keys.
    std::vector<std::pair<float, std::size_t>> all;
    for (Eigen::Index i = 0; i < e.keys.rows(); ++i) {
      all.emplace_back((e.keys.row(i).transpose() - query).squaredNorm(),
                       static_cast<std::size_t>(i));
    }
    std::partial_sort(all.begin(), all.begin() + p.k, all.end());
    RetrievalSet oracle;
    for (int i = 0; i < p.k; ++i) {
      oracle.items.push_back({all[static_cast<std::size_t>(i)].first,
                              e.values[all[static_cast<std::size_t>(i)].second],
                              all[static_cast<std::size_t>(i)].second, std::nullopt});
    }
    const auto got = knn_distribution(r, p.temperature, vocab).probs;
    const auto want = brute_force(oracle, p.temperature, vocab);
    for (std::size_t y = 0; y < vocab; ++y) {
      EXPECT_NEAR(got[static_cast<Eigen::Index>(y)], want[y], 1e-9);
    }
  }
}

// ------------------------------------------------------------- persistence

TEST(DatastoreFile, SaveLoadSaveIsIdentical) {
  const auto f = fixture(300);
  for (bool flat : {true, false}) {
    DatastoreConfig dc;
    dc.flat = flat;
    dc.store_provenance = true;
    dc.ivfpq.clusters = 8;
    const auto ds = build_datastore(f.model, f.corpus, dc);
    const std::string bytes = ds.serialize();
    EXPECT_EQ(bytes.rfind("knnds-v1", 0), 0u);
    const auto back = Datastore::deserialize(bytes);
    EXPECT_EQ(back.serialize(), bytes);
    EXPECT_EQ(back.size(), ds.size());
    EXPECT_TRUE(back.has_provenance());
  }
}

TEST(DatastoreFile, RebuildIsByteIdentical) {
  const auto f = fixture(300);
  DatastoreConfig dc;
  dc.ivfpq.clusters = 8;
  EXPECT_EQ(build_datastore(f.model, f.corpus, dc).serialize(),
            build_datastore(f.model, f.corpus, dc).serialize());
}

TEST(DatastoreFile, TruncationNamesTheSection) {
  const auto f = fixture(100);
  DatastoreConfig dc;
  dc.ivfpq.clusters = 4;
  const std::string bytes = build_datastore(f.model, f.corpus, dc).serialize();
  for (std::size_t cut : {bytes.size() - 2, bytes.size() / 2, std::size_t{12}}) {
    try {
      Datastore::deserialize(bytes.substr(0, cut));
      FAIL() << "cut at " << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kUsage);
      EXPECT_NE(std::string(e.what()).find("section"), std::string::npos) << e.what();
    }
  }
  EXPECT_THROW(Datastore::deserialize("knnds-v0" + bytes.substr(8)), Error);
}

TEST(DatastoreFile, WrongModelIsRefused) {
  const auto f = fixture(100);
  const auto ds = build_datastore(f.model, f.corpus, flat_config());
  ModelConfig other;
  other.seed = 99;
  const auto m2 = LexicalNgramModel::fit(other, f.corpus);
  try {
    ds.check_compatible(m2, m2.target_vocab().fingerprint());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.exit_code(), 3);
    EXPECT_NE(std::string(e.what()).find("--allow-fingerprint-mismatch"),
              std::string::npos);
  }
  EXPECT_NO_THROW(ds.check_compatible(f.model, f.model.target_vocab().fingerprint()));
}

// ------------------------------------------------------------------- merge

TEST(Merge, SingleStoreIsIdentity) {
  const auto f = fixture(200);
  DatastoreConfig dc;
  dc.ivfpq.clusters = 4;
  const auto a = build_datastore(f.model, f.corpus, dc);
  const Datastore* list[] = {&a};
  EXPECT_EQ(merge_datastores(list).serialize(), a.serialize());
}

TEST(Merge, SizesAddAndOwnQueriesSurvive) {
  const auto f = fixture(400);
  ParallelCorpus ca = f.corpus, cb = f.corpus;
  ca.pairs.resize(200);
  cb.pairs.erase(cb.pairs.begin(), cb.pairs.begin() + 200);
  for (bool flat : {true, false}) {
    DatastoreConfig dc;
    dc.flat = flat;
    dc.ivfpq.clusters = 4;
    dc.ivfpq.identity_codes = !flat;
    const auto a = build_datastore(f.model, ca, dc);
    const auto b = build_datastore(f.model, cb, dc);
    const Datastore* list[] = {&a, &b};
    const auto m = merge_datastores(list);
    EXPECT_EQ(m.size(), a.size() + b.size());
    const auto ea = compute_entries(f.model, ca);
    KnnParams p;
    p.k = 1;
    p.nprobe = 4;
    for (Eigen::Index i = 0; i < ea.keys.rows(); i += 37) {
      const KeyVector q = ea.keys.row(i).transpose();
      EXPECT_EQ(a.retrieve(q, p).items[0].value, m.retrieve(q, p).items[0].value);
    }
  }
}

TEST(Merge, DifferentClusterCountsMerge) {
  const auto f = fixture(400);
  ParallelCorpus ca = f.corpus, cb = f.corpus;
  ca.pairs.resize(100);
  cb.pairs.erase(cb.pairs.begin(), cb.pairs.begin() + 100);
  DatastoreConfig dc;
  dc.ivfpq.identity_codes = true;
  const auto a = build_datastore(f.model, ca, dc);
  const auto b = build_datastore(f.model, cb, dc);
  const auto& ia = dynamic_cast<const IvfPqIndex&>(a.index());
  const auto& ib = dynamic_cast<const IvfPqIndex&>(b.index());
  ASSERT_NE(ia.clusters(), ib.clusters());
  const Datastore* list[] = {&a, &b};
  const auto m = merge_datastores(list);
  EXPECT_EQ(m.size(), a.size() + b.size());
  EXPECT_EQ(dynamic_cast<const IvfPqIndex&>(m.index()).clusters(),
            default_cluster_count(m.size()));
}

TEST(Merge, DifferentModelsAreRefused) {
  const auto f = fixture(100);
  const auto g = fixture(100, 2);
  const auto a = build_datastore(f.model, f.corpus, flat_config());
  const auto b = build_datastore(g.model, g.corpus, flat_config());
  const Datastore* list[] = {&a, &b};
  EXPECT_THROW(merge_datastores(list), Error);
}

TEST(SelectSentences, KeepsWholeSentences) {
  const auto f = fixture(50);
  const auto e = compute_entries(f.model, f.corpus);
  const std::vector<std::uint32_t> keep{1, 3};
  const auto s = select_sentences(e, keep);
  const std::size_t want =
      f.corpus.pairs[1].target.size() - 1 + f.corpus.pairs[3].target.size() - 1;
  EXPECT_EQ(s.values.size(), want);
  EXPECT_EQ(static_cast<std::size_t>(s.keys.rows()), want);
}

}  // namespace
}  // namespace knnmt
