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
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "knnmt/common.h"
#include "knnmt/dense.h"
#include "knnmt/kmeans.h"

namespace knnmt {

struct Neighbor {
  std::uint64_t id = 0;
  float distance = 0;  // squared L2, exact or approximate

  bool operator==(const Neighbor&) const = default;
};

// Orders by ascending distance, then ascending id.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

struct SearchResult {
  std::vector<Neighbor> neighbors;  // ascending, at most k
  bool index_empty = false;         // untrained or no entries
};

// Keeps the k smallest candidates under neighbor_less, sorted.
void select_top_k(std::vector<Neighbor>& candidates, std::size_t k);

template <typename DerivedA, typename DerivedB>
auto squared_l2(const Eigen::MatrixBase<DerivedA>& a,
                const Eigen::MatrixBase<DerivedB>& b) {
  return (a - b).squaredNorm();
}

enum class IndexKind : std::uint8_t { kFlat = 0, kIvfPq = 1 };

class VectorIndex {
 public:
  virtual ~VectorIndex() = default;

  virtual IndexKind kind() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t size() const = 0;
  virtual void add(std::span<const std::uint64_t> ids,
                   const RowMatrix<float>& keys) = 0;
  // nprobe is ignored by exhaustive indexes.
  virtual SearchResult search(const KeyVector& query, int k,
                              int nprobe) const = 0;
  // Best available reconstruction of every stored key, ordered by id.
  virtual RowMatrix<float> reconstruct_all(
      std::vector<std::uint64_t>* ids) const = 0;
  virtual std::string serialize() const = 0;
};

std::unique_ptr<VectorIndex> deserialize_index(std::string_view bytes);

// Exhaustive exact search.
class FlatIndex final : public VectorIndex {
 public:
  explicit FlatIndex(std::size_t dim) : dim_(dim) {}

  IndexKind kind() const override { return IndexKind::kFlat; }
  std::size_t dim() const override { return dim_; }
  std::size_t size() const override { return ids_.size(); }
  void add(std::span<const std::uint64_t> ids,
           const RowMatrix<float>& keys) override;
  SearchResult search(const KeyVector& query, int k,
                      int nprobe = 0) const override;
  RowMatrix<float> reconstruct_all(
      std::vector<std::uint64_t>* ids) const override;
  std::string serialize() const override;
  static FlatIndex deserialize(std::string_view bytes);

  std::span<const std::uint64_t> ids() const { return ids_; }
  Eigen::Map<const RowMatrix<float>> keys() const {
    return {keys_.data(), static_cast<Eigen::Index>(ids_.size()),
            static_cast<Eigen::Index>(dim_)};
  }

 private:
  std::size_t dim_;
  std::vector<std::uint64_t> ids_;
  std::vector<float> keys_;
  std::unordered_set<std::uint64_t> seen_;
};

SearchResult flat_search(const FlatIndex& index, const KeyVector& query, int k);

// Per-subspace 1-byte codebooks.
class ProductQuantizer {
 public:
  ProductQuantizer() = default;
  ProductQuantizer(int dim, int subspaces);

  // Codebook size is min(256, rows of data).
  void train(const RowMatrix<float>& data, const KMeansOptions& opts);

  int dim() const { return dim_; }
  int subspaces() const { return subspaces_; }
  int sub_dim() const { return sub_dim_; }
  int codebook_size() const { return codebook_size_; }
  bool trained() const { return codebook_size_ > 0; }

  void encode(std::span<const float> vec, std::span<std::uint8_t> code) const;
  // Row-wise encode; returns rows * subspaces bytes.
  std::vector<std::uint8_t> encode_rows(const RowMatrix<float>& vecs) const;
  void decode(std::span<const std::uint8_t> code, std::span<float> out) const;
  // table[s * K + c] = |vec_s - codeword(s, c)|^2
  void distance_table(std::span<const float> vec, std::span<float> table) const;
  // table[s * K + j] = <vec_s, codeword_sj>.
  void inner_product_table(std::span<const float> vec,
                           std::span<float> table) const;

  // (subspaces * K) x sub_dim, subspace-major.
  const RowMatrix<float>& codebooks() const { return codebooks_; }
  RowMatrix<float>& mutable_codebooks() { return codebooks_; }
  void set_codebook_size(int k) { codebook_size_ = k; }

 private:
  int dim_ = 0;
  int subspaces_ = 0;
  int sub_dim_ = 0;
  int codebook_size_ = 0;
  RowMatrix<float> codebooks_;
};

struct IvfPqConfig {
  int clusters = 0;  // 0 = automatic, see default_cluster_count
  int subspaces = 16;
  int kmeans_iters = 20;
  std::uint64_t seed = 1;
  std::size_t max_train_points = 0;  // 0 = 256 * clusters
  // Debug: store full-precision vectors instead of PQ codes.
  bool identity_codes = false;
};

// 256 clusters below one million keys, 4096 from there on, never more than
// one cluster per 39 training keys.
int default_cluster_count(std::size_t num_keys);

// Inverted file over coarse k-means cells; residuals to the cell centroid
// are product-quantized and searched with asymmetric distance tables.
class IvfPqIndex final : public VectorIndex {
 public:
  IvfPqIndex(std::size_t dim, const IvfPqConfig& config);

  IndexKind kind() const override { return IndexKind::kIvfPq; }
  std::size_t dim() const override { return dim_; }
  std::size_t size() const override { return count_; }
  bool trained() const { return centroids_.rows() > 0; }

  // Trains on a seeded sample of at most max_train_points rows.
  void train(const RowMatrix<float>& keys);
  void add(std::span<const std::uint64_t> ids,
           const RowMatrix<float>& keys) override;
  SearchResult search(const KeyVector& query, int k,
                      int nprobe) const override;
  RowMatrix<float> reconstruct_all(
      std::vector<std::uint64_t>* ids) const override;
  // After freeze() the index rejects add().
  void freeze() { frozen_ = true; }

  std::string serialize() const override;
  static IvfPqIndex deserialize(std::string_view bytes);

  const IvfPqConfig& config() const { return config_; }
  int clusters() const { return static_cast<int>(centroids_.rows()); }
  const RowMatrix<float>& centroids() const { return centroids_; }
  const ProductQuantizer& quantizer() const { return pq_; }
  std::vector<std::size_t> posting_sizes() const;
  // Exact squared distance between query and the reconstruction of `id`.
  float reconstructed_distance(const KeyVector& query, std::uint64_t id) const;

 private:
  struct PostingList {
    std::vector<std::uint64_t> ids;
    std::vector<std::uint8_t> codes;  // ids.size() * subspaces
    std::vector<float> vectors;       // identity_codes only
    std::vector<float> bias;          // |r|^2 + 2 c.r per entry, derived
  };

  // (squared distance, cluster) of the nprobe nearest centroids.
  std::vector<std::pair<float, int>> probe_order(const KeyVector& query,
                                                 int nprobe) const;
  void refresh_bias(std::size_t list);
  void reconstruct(int list, std::size_t pos, std::span<float> out) const;

  std::size_t dim_;
  IvfPqConfig config_;
  RowMatrix<float> centroids_;
  ProductQuantizer pq_;
  std::vector<PostingList> lists_;
  std::unordered_set<std::uint64_t> seen_;
  std::size_t count_ = 0;
  bool frozen_ = false;
};

}  // namespace knnmt
