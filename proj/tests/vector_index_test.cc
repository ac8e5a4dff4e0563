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

#include "knnmt/vector_index.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "knnmt/kmeans.h"
#include "test_util.h"

namespace knnmt {
namespace {

using testing::clustered_keys;
using testing::iota_ids;
using testing::random_keys;

constexpr int kDim = 64;

// O(n * k) selection: k passes, each picking the smallest unpicked
// (distance, id) pair.
std::vector<Neighbor> selection_oracle(const RowMatrix<float>& keys,
                                       std::span<const std::uint64_t> ids,
                                       const KeyVector& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (Eigen::Index i = 0; i < keys.rows(); ++i) {
    all.push_back({ids[static_cast<std::size_t>(i)],
                   (keys.row(i).transpose() - q).squaredNorm()});
  }
  std::vector<Neighbor> out;
  std::vector<bool> used(all.size(), false);
  for (std::size_t r = 0; r < std::min(k, all.size()); ++r) {
    std::size_t best = all.size();
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (used[i]) continue;
      if (best == all.size() || neighbor_less(all[i], all[best])) best = i;
    }
    used[best] = true;
    out.push_back(all[best]);
  }
  return out;
}

std::set<std::uint64_t> id_set(const SearchResult& r) {
  std::set<std::uint64_t> s;
  for (const auto& n : r.neighbors) s.insert(n.id);
  return s;
}

double recall(const SearchResult& approx, const SearchResult& exact) {
  const auto a = id_set(approx);
  std::size_t hit = 0;
  for (const auto& n : exact.neighbors) hit += a.count(n.id);
  return static_cast<double>(hit) / static_cast<double>(exact.neighbors.size());
}

FlatIndex make_flat(const RowMatrix<float>& keys) {
  FlatIndex f(static_cast<std::size_t>(keys.cols()));
  f.add(iota_ids(static_cast<std::size_t>(keys.rows())), keys);
  return f;
}

IvfPqIndex make_ivf(const RowMatrix<float>& keys, IvfPqConfig cfg) {
  IvfPqIndex idx(static_cast<std::size_t>(keys.cols()), cfg);
  idx.train(keys);
  idx.add(iota_ids(static_cast<std::size_t>(keys.rows())), keys);
  idx.freeze();
  return idx;
}

KeyVector row(const RowMatrix<float>& m, Eigen::Index i) {
  return m.row(i).transpose();
}

// ------------------------------------------------------------------ kmeans

TEST(KMeans, KEqualsNRecoversPoints) {
  const auto pts = random_keys(12, 4, 1);
  const auto res = kmeans(pts, 12);
  EXPECT_EQ(res.distortion, 0.0);
  std::set<std::vector<float>> want, got;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    want.insert({pts.row(i).data(), pts.row(i).data() + 4});
    got.insert({res.centroids.row(i).data(), res.centroids.row(i).data() + 4});
  }
  EXPECT_EQ(want, got);
}

TEST(KMeans, OneClusterIsTheMean) {
  const auto pts = random_keys(200, 8, 2);
  const auto res = kmeans(pts, 1);
  const Eigen::VectorXf mean = pts.colwise().mean().transpose();
  EXPECT_LT((res.centroids.row(0).transpose() - mean).cwiseAbs().maxCoeff(), 1e-5f);
}

TEST(KMeans, SeparableBlobsRecoverMeans) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0.0f, 0.1f);
  const Eigen::Vector2f m0(-2.0f, 0.0f), m1(2.0f, 1.0f);
  RowMatrix<float> pts(2000, 2);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Eigen::Vector2f& m = i % 2 ? m1 : m0;
    pts(i, 0) = m[0] + g(rng);
    pts(i, 1) = m[1] + g(rng);
  }
  const auto res = kmeans(pts, 2);
  Eigen::Vector2f c0 = res.centroids.row(0).transpose();
  Eigen::Vector2f c1 = res.centroids.row(1).transpose();
  if (c0[0] > c1[0]) std::swap(c0, c1);
  EXPECT_LT((c0 - m0).cwiseAbs().maxCoeff(), 0.05f);
  EXPECT_LT((c1 - m1).cwiseAbs().maxCoeff(), 0.05f);
}

TEST(KMeans, TooFewPointsIsAnError) {
  EXPECT_THROW(kmeans(random_keys(3, 4, 1), 4), Error);
}

TEST(KMeans, SeededAndDeterministic) {
  const auto pts = random_keys(500, 8, 3);
  EXPECT_EQ(kmeans(pts, 10).centroids, kmeans(pts, 10).centroids);
}

// --------------------------------------------------------------- flat index

TEST(FlatIndex, SelfQueryRanksFirstAtZero) {
  const auto keys = random_keys(100, kDim, 1);
  const auto f = make_flat(keys);
  const auto r = f.search(row(keys, 37), 5);
  ASSERT_EQ(r.neighbors.size(), 5u);
  EXPECT_EQ(r.neighbors[0].id, 37u);
  EXPECT_EQ(r.neighbors[0].distance, 0.0f);
}

TEST(FlatIndex, EquidistantKeysPreferLowerId) {
  RowMatrix<float> keys(3, 2);
  keys << 1, 0, 0, 1, -1, 0;
  FlatIndex f(2);
  const std::vector<std::uint64_t> ids{9, 4, 7};
  f.add(ids, keys);
  const KeyVector q = Eigen::Vector2f(0, 0);
  const auto r = f.search(q, 3);
  ASSERT_EQ(r.neighbors.size(), 3u);
  EXPECT_EQ(r.neighbors[0].id, 4u);
  EXPECT_EQ(r.neighbors[1].id, 7u);
  EXPECT_EQ(r.neighbors[2].id, 9u);
}

TEST(FlatIndex, MatchesSelectionOracle) {
  const auto keys = random_keys(1000, kDim, 7);
  const auto f = make_flat(keys);
  const auto ids = iota_ids(1000);
  std::mt19937_64 rng(8);
  for (int q = 0; q < 20; ++q) {
    const KeyVector query = testing::random_unit(kDim, rng);
    const auto got = flat_search(f, query, 64).neighbors;
    const auto want = selection_oracle(keys, ids, query, 64);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].id, want[i].id);
      EXPECT_NEAR(got[i].distance, want[i].distance, 1e-5f);
    }
  }
}

TEST(FlatIndex, KBeyondSizeReturnsAll) {
  const auto f = make_flat(random_keys(10, kDim, 1));
  EXPECT_EQ(f.search(KeyVector::Zero(kDim), 64).neighbors.size(), 10u);
}

TEST(FlatIndex, EmptyIsFlaggedNotAnError) {
  FlatIndex f(kDim);
  const auto r = f.search(KeyVector::Zero(kDim), 4);
  EXPECT_TRUE(r.index_empty);
  EXPECT_TRUE(r.neighbors.empty());
}

TEST(FlatIndex, DuplicateIdsAreRejected) {
  FlatIndex f(kDim);
  const auto keys = random_keys(2, kDim, 1);
  const std::vector<std::uint64_t> ids{1, 1};
  EXPECT_THROW(f.add(ids, keys), Error);
}

TEST(FlatIndex, SerializeRoundTrip) {
  const auto f = make_flat(random_keys(50, kDim, 2));
  const std::string bytes = f.serialize();
  EXPECT_EQ(FlatIndex::deserialize(bytes).serialize(), bytes);
}

// ------------------------------------------------------------- IVF-PQ index

TEST(IvfPq, IdentityCodesWithFullProbeEqualFlat) {
  const auto keys = random_keys(10000, kDim, 11);
  IvfPqConfig cfg;
  cfg.clusters = 64;
  cfg.identity_codes = true;
  const auto ivf = make_ivf(keys, cfg);
  const auto flat = make_flat(keys);
  std::mt19937_64 rng(12);
  for (int q = 0; q < 100; ++q) {
    const KeyVector query = testing::random_unit(kDim, rng);
    EXPECT_EQ(id_set(ivf.search(query, 64, ivf.clusters())),
              id_set(flat.search(query, 64)));
  }
}

// The recall@64 >= 0.9 target is measured by the acceptance binary; here
// the probe order must never lose recall and full precision must be exact.
TEST(IvfPq, RecallIsMonotoneInNprobe) {
  const auto keys = clustered_keys(20000, kDim, 200, 0.05f, 21);
  IvfPqConfig cfg;
  cfg.clusters = 64;
  const auto ivf = make_ivf(keys, cfg);
  const auto flat = make_flat(keys);
  std::mt19937_64 rng(22);
  const std::vector<int> probes{1, 8, 32, ivf.clusters()};
  std::vector<double> mean(probes.size(), 0.0);
  for (int q = 0; q < 100; ++q) {
    const auto pick = static_cast<Eigen::Index>(
        uniform_index(rng, static_cast<std::size_t>(keys.rows())));
    KeyVector query = row(keys, pick);
    query += 0.05f * testing::random_unit(kDim, rng);
    query.normalize();
    const auto exact = flat.search(query, 64);
    for (std::size_t p = 0; p < probes.size(); ++p) {
      mean[p] += recall(ivf.search(query, 64, probes[p]), exact) / 100.0;
    }
  }
  for (std::size_t p = 1; p < probes.size(); ++p) {
    EXPECT_GE(mean[p], mean[p - 1]) << "nprobe " << probes[p];
  }
  EXPECT_GT(mean.back(), 0.5);
}

TEST(IvfPq, PostingsPartitionEntries) {
  const auto keys = random_keys(10000, kDim, 31);
  IvfPqConfig cfg;
  cfg.clusters = 32;
  const auto ivf = make_ivf(keys, cfg);
  const auto sizes = ivf.posting_sizes();
  EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), 10000u);
  EXPECT_EQ(ivf.size(), 10000u);
}

TEST(IvfPq, AdcMatchesReconstructedDistance) {
  const auto keys = random_keys(5000, kDim, 41);
  IvfPqConfig cfg;
  cfg.clusters = 16;
  const auto ivf = make_ivf(keys, cfg);
  std::vector<std::uint64_t> ids;
  const RowMatrix<float> recon = ivf.reconstruct_all(&ids);
  std::mt19937_64 rng(42);
  for (int q = 0; q < 20; ++q) {
    const KeyVector query = testing::random_unit(kDim, rng);
    const auto r = ivf.search(query, 50, ivf.clusters());
    for (const auto& n : r.neighbors) {
      const auto pos = static_cast<Eigen::Index>(
          std::find(ids.begin(), ids.end(), n.id) - ids.begin());
      const float exact = (recon.row(pos).transpose() - query).squaredNorm();
      EXPECT_NEAR(n.distance, exact, 1e-5f);
      EXPECT_NEAR(n.distance, ivf.reconstructed_distance(query, n.id), 1e-5f);
    }
  }
}

TEST(IvfPq, ResultsSortedFiniteNonNegative) {
  const auto keys = random_keys(3000, kDim, 51);
  IvfPqConfig cfg;
  cfg.clusters = 16;
  const auto ivf = make_ivf(keys, cfg);
  std::mt19937_64 rng(52);
  for (int q = 0; q < 20; ++q) {
    const auto r = ivf.search(testing::random_unit(kDim, rng), 64, 4);
    ASSERT_LE(r.neighbors.size(), 64u);
    for (std::size_t i = 0; i < r.neighbors.size(); ++i) {
      EXPECT_TRUE(std::isfinite(r.neighbors[i].distance));
      EXPECT_GE(r.neighbors[i].distance, 0.0f);
      if (i) EXPECT_FALSE(neighbor_less(r.neighbors[i], r.neighbors[i - 1]));
    }
  }
}

TEST(IvfPq, EmptyAndSingleEntry) {
  const auto keys = random_keys(300, kDim, 61);
  IvfPqConfig cfg;
  cfg.clusters = 4;
  IvfPqIndex idx(kDim, cfg);
  EXPECT_TRUE(idx.search(row(keys, 0), 4, 4).index_empty);
  idx.train(keys);
  const auto empty = idx.search(row(keys, 0), 4, 4);
  EXPECT_TRUE(empty.neighbors.empty());
  EXPECT_TRUE(empty.index_empty);
  const std::vector<std::uint64_t> one{77};
  idx.add(one, keys.topRows(1));
  const auto r = idx.search(row(keys, 0), 4, 4);
  ASSERT_EQ(r.neighbors.size(), 1u);
  EXPECT_EQ(r.neighbors[0].id, 77u);
}

TEST(IvfPq, KBeyondSizeReturnsAll) {
  const auto keys = random_keys(40, kDim, 62);
  IvfPqConfig cfg;
  cfg.clusters = 2;
  const auto ivf = make_ivf(keys, cfg);
  EXPECT_EQ(ivf.search(row(keys, 0), 100, 2).neighbors.size(), 40u);
}

TEST(IvfPq, Errors) {
  const auto keys = random_keys(100, kDim, 71);
  IvfPqConfig cfg;
  cfg.clusters = 200;
  IvfPqIndex too_many(kDim, cfg);
  EXPECT_THROW(too_many.train(keys), Error);
  cfg.clusters = 4;
  IvfPqIndex untrained(kDim, cfg);
  EXPECT_THROW(untrained.add(iota_ids(100), keys), Error);
  cfg.subspaces = 7;
  EXPECT_THROW(IvfPqIndex(kDim, cfg), Error);
  cfg.subspaces = 16;
  IvfPqIndex dup(kDim, cfg);
  dup.train(keys);
  dup.add(iota_ids(10), keys.topRows(10));
  EXPECT_THROW(dup.add(iota_ids(1, 5), keys.topRows(1)), Error);
  EXPECT_THROW(dup.search(row(keys, 0), 0, 1), Error);
  EXPECT_THROW(dup.search(row(keys, 0), 1, 0), Error);
}

TEST(IvfPq, SameSeedSameBytes) {
  const auto keys = random_keys(4000, kDim, 81);
  IvfPqConfig cfg;
  cfg.clusters = 16;
  const auto a = make_ivf(keys, cfg).serialize();
  EXPECT_EQ(a, make_ivf(keys, cfg).serialize());
  EXPECT_EQ(a.rfind("ivfpq-v1", 0), 0u);
  cfg.seed = 2;
  EXPECT_NE(a, make_ivf(keys, cfg).serialize());
}

TEST(IvfPq, SerializeRoundTripSearchesAlike) {
  const auto keys = random_keys(4000, kDim, 91);
  IvfPqConfig cfg;
  cfg.clusters = 16;
  const auto a = make_ivf(keys, cfg);
  const std::string bytes = a.serialize();
  const auto b = IvfPqIndex::deserialize(bytes);
  EXPECT_EQ(b.serialize(), bytes);
  std::mt19937_64 rng(92);
  for (int q = 0; q < 10; ++q) {
    const KeyVector query = testing::random_unit(kDim, rng);
    EXPECT_EQ(a.search(query, 32, 8).neighbors, b.search(query, 32, 8).neighbors);
  }
  EXPECT_THROW(IvfPqIndex::deserialize(bytes.substr(0, bytes.size() - 9)), Error);
  auto generic = deserialize_index(bytes);
  EXPECT_EQ(generic->kind(), IndexKind::kIvfPq);
}

TEST(IvfPq, DefaultClusterCount) {
  EXPECT_EQ(default_cluster_count(500000), 256);
  EXPECT_EQ(default_cluster_count(1000000), 4096);
  EXPECT_LE(default_cluster_count(1000), 1000 / 39);
  EXPECT_GE(default_cluster_count(1), 1);
}

TEST(ProductQuantizer, EncodeDecodeRoundTripsCodewords) {
  const auto data = random_keys(2000, 16, 101);
  ProductQuantizer pq(16, 4);
  KMeansOptions opts;
  pq.train(data, opts);
  ASSERT_TRUE(pq.trained());
  std::vector<std::uint8_t> code(4);
  std::vector<float> back(16), again(16);
  pq.encode({data.row(3).data(), 16}, code);
  pq.decode(code, back);
  std::vector<std::uint8_t> code2(4);
  pq.encode(back, code2);
  EXPECT_EQ(code, code2);
  pq.decode(code2, again);
  EXPECT_EQ(back, again);
}

TEST(ProductQuantizer, SmallSampleShrinksCodebook) {
  const auto data = random_keys(100, 16, 102);
  ProductQuantizer pq(16, 4);
  pq.train(data, KMeansOptions());
  EXPECT_EQ(pq.codebook_size(), 100);
}

}  // namespace
}  // namespace knnmt
