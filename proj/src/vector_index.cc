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

#include <algorithm>
#include <numeric>

namespace knnmt {
namespace {

constexpr std::string_view kFlatMagic = "flat-v1";
constexpr std::string_view kIvfPqMagic = "ivfpq-v1";

void check_new_ids(std::unordered_set<std::uint64_t>& seen,
                   std::span<const std::uint64_t> ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) {
      for (std::size_t j = 0; j < i; ++j) seen.erase(ids[j]);
      throw usage_error("index add: duplicate id " + std::to_string(ids[i]));
    }
  }
}

}  // namespace

void select_top_k(std::vector<Neighbor>& candidates, std::size_t k) {
  if (candidates.size() > k) {
    std::partial_sort(candidates.begin(),
                      candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.end(), neighbor_less);
    candidates.resize(k);
  } else {
    std::sort(candidates.begin(), candidates.end(), neighbor_less);
  }
}

std::unique_ptr<VectorIndex> deserialize_index(std::string_view bytes) {
  if (bytes.substr(0, kFlatMagic.size()) == kFlatMagic) {
    return std::make_unique<FlatIndex>(FlatIndex::deserialize(bytes));
  }
  return std::make_unique<IvfPqIndex>(IvfPqIndex::deserialize(bytes));
}

// ---------------------------------------------------------------- Flat

void FlatIndex::add(std::span<const std::uint64_t> ids,
                    const RowMatrix<float>& keys) {
  if (static_cast<std::size_t>(keys.rows()) != ids.size() ||
      (keys.rows() > 0 && static_cast<std::size_t>(keys.cols()) != dim_)) {
    throw usage_error("flat add: ids/keys shape mismatch");
  }
  check_new_ids(seen_, ids);
  ids_.insert(ids_.end(), ids.begin(), ids.end());
  keys_.insert(keys_.end(), keys.data(), keys.data() + keys.size());
}

SearchResult FlatIndex::search(const KeyVector& query, int k, int) const {
  if (k < 1) throw usage_error("search: k must be >= 1");
  SearchResult res;
  if (ids_.empty()) {
    res.index_empty = true;
    return res;
  }
  const auto all = keys();
  std::vector<Neighbor> cand(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    cand[i] = {ids_[i], squared_l2(all.row(static_cast<Eigen::Index>(i)),
                                   query.transpose())};
  }
  select_top_k(cand, static_cast<std::size_t>(k));
  res.neighbors = std::move(cand);
  return res;
}

SearchResult flat_search(const FlatIndex& index, const KeyVector& query,
                         int k) {
  return index.search(query, k);
}

RowMatrix<float> FlatIndex::reconstruct_all(
    std::vector<std::uint64_t>* ids) const {
  std::vector<std::size_t> order(ids_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ids_[a] < ids_[b]; });
  if (ids) {
    ids->clear();
    for (auto i : order) ids->push_back(ids_[i]);
  }
  return gather_rows(keys(), order);
}

std::string FlatIndex::serialize() const {
  BinaryWriter w;
  w.magic(kFlatMagic);
  w.pod(static_cast<std::uint32_t>(dim_));
  w.pod(static_cast<std::uint64_t>(ids_.size()));
  w.array(std::span<const std::uint64_t>(ids_));
  w.array(std::span<const float>(keys_));
  return w.take();
}

FlatIndex FlatIndex::deserialize(std::string_view bytes) {
  BinaryReader r(bytes, "flat index");
  r.expect_magic(kFlatMagic);
  FlatIndex idx(r.pod<std::uint32_t>());
  const auto n = r.pod<std::uint64_t>();
  r.section("ids");
  idx.ids_.resize(n);
  r.array(std::span<std::uint64_t>(idx.ids_));
  r.section("keys");
  idx.keys_.resize(n * idx.dim_);
  r.array(std::span<float>(idx.keys_));
  idx.seen_.insert(idx.ids_.begin(), idx.ids_.end());
  if (idx.seen_.size() != n) throw usage_error("flat index: duplicate ids");
  return idx;
}

// ---------------------------------------------------------------- PQ

ProductQuantizer::ProductQuantizer(int dim, int subspaces)
    : dim_(dim), subspaces_(subspaces) {
  if (subspaces < 1 || dim % subspaces != 0) {
    throw usage_error("product quantizer: dim " + std::to_string(dim) +
                      " not divisible by " + std::to_string(subspaces) +
                      " subspaces");
  }
  sub_dim_ = dim / subspaces;
}

void ProductQuantizer::train(const RowMatrix<float>& data,
                             const KMeansOptions& opts) {
  if (data.rows() < 1) throw usage_error("product quantizer: no training data");
  codebook_size_ = static_cast<int>(std::min<Eigen::Index>(256, data.rows()));
  codebooks_.resize(subspaces_ * codebook_size_, sub_dim_);
  for (int s = 0; s < subspaces_; ++s) {
    RowMatrix<float> sub = data.middleCols(s * sub_dim_, sub_dim_);
    KMeansOptions o = opts;
    o.seed = splitmix64(opts.seed + static_cast<std::uint64_t>(s));
    auto km = kmeans<float>(sub, codebook_size_, o);
    codebooks_.middleRows(s * codebook_size_, codebook_size_) = km.centroids;
  }
}

void ProductQuantizer::encode(std::span<const float> vec,
                              std::span<std::uint8_t> code) const {
  for (int s = 0; s < subspaces_; ++s) {
    Eigen::Map<const Eigen::RowVectorXf> sub(vec.data() + s * sub_dim_,
                                             sub_dim_);
    float best = std::numeric_limits<float>::infinity();
    int best_c = 0;
    for (int c = 0; c < codebook_size_; ++c) {
      const float d =
          squared_l2(codebooks_.row(s * codebook_size_ + c), sub);
      if (d < best) {
        best = d;
        best_c = c;
      }
    }
    code[static_cast<std::size_t>(s)] = static_cast<std::uint8_t>(best_c);
  }
}

std::vector<std::uint8_t> ProductQuantizer::encode_rows(
    const RowMatrix<float>& vecs) const {
  const auto n = static_cast<std::size_t>(vecs.rows());
  const auto s_count = static_cast<std::size_t>(subspaces_);
  std::vector<std::uint8_t> codes(n * s_count);
  std::vector<int> nearest;
  for (int s = 0; s < subspaces_; ++s) {
    const RowMatrix<float> sub = vecs.middleCols(s * sub_dim_, sub_dim_);
    const RowMatrix<float> book =
        codebooks_.middleRows(s * codebook_size_, codebook_size_);
    detail::assign_nearest(sub, book, nearest);
    for (std::size_t i = 0; i < n; ++i) {
      codes[i * s_count + static_cast<std::size_t>(s)] =
          static_cast<std::uint8_t>(nearest[i]);
    }
  }
  return codes;
}

void ProductQuantizer::decode(std::span<const std::uint8_t> code,
                              std::span<float> out) const {
  for (int s = 0; s < subspaces_; ++s) {
    Eigen::Map<Eigen::RowVectorXf>(out.data() + s * sub_dim_, sub_dim_) =
        codebooks_.row(s * codebook_size_ + code[static_cast<std::size_t>(s)]);
  }
}

void ProductQuantizer::distance_table(std::span<const float> vec,
                                      std::span<float> table) const {
  for (int s = 0; s < subspaces_; ++s) {
    Eigen::Map<const Eigen::RowVectorXf> sub(vec.data() + s * sub_dim_,
                                             sub_dim_);
    const auto block = codebooks_.middleRows(s * codebook_size_, codebook_size_);
    for (int c = 0; c < codebook_size_; ++c) {
      table[static_cast<std::size_t>(s * codebook_size_ + c)] =
          squared_l2(block.row(c), sub);
    }
  }
}

void ProductQuantizer::inner_product_table(std::span<const float> vec,
                                           std::span<float> table) const {
  for (int s = 0; s < subspaces_; ++s) {
    Eigen::Map<const Eigen::VectorXf> sub(vec.data() + s * sub_dim_, sub_dim_);
    Eigen::Map<Eigen::VectorXf> out(table.data() + s * codebook_size_,
                                    codebook_size_);
    out.noalias() =
        codebooks_.middleRows(s * codebook_size_, codebook_size_) * sub;
  }
}

// ---------------------------------------------------------------- IVF-PQ

int default_cluster_count(std::size_t num_keys) {
  const std::size_t base = num_keys < 1000000 ? 256 : 4096;
  return static_cast<int>(std::max<std::size_t>(1, std::min(base, num_keys / 39)));
}

IvfPqIndex::IvfPqIndex(std::size_t dim, const IvfPqConfig& config)
    : dim_(dim), config_(config) {
  if (!config_.identity_codes) {
    pq_ = ProductQuantizer(static_cast<int>(dim), config_.subspaces);
  } else if (config_.subspaces < 1 ||
             dim % static_cast<std::size_t>(config_.subspaces) != 0) {
    throw usage_error("ivfpq: dim not divisible by subspaces");
  }
}

void IvfPqIndex::train(const RowMatrix<float>& keys) {
  if (static_cast<std::size_t>(keys.cols()) != dim_) {
    throw usage_error("ivfpq train: key dimension mismatch");
  }
  if (frozen_ || count_ > 0) throw usage_error("ivfpq train: index not empty");
  const int c = config_.clusters > 0
                    ? config_.clusters
                    : default_cluster_count(static_cast<std::size_t>(keys.rows()));
  if (keys.rows() < c) {
    throw usage_error("ivfpq train: " + std::to_string(keys.rows()) +
                      " training keys is fewer than " + std::to_string(c) +
                      " clusters; lower --clusters");
  }
  const std::size_t cap = config_.max_train_points > 0
                              ? config_.max_train_points
                              : 256 * static_cast<std::size_t>(c);
  const auto rows = sample_indices(static_cast<std::size_t>(keys.rows()), cap,
                                   splitmix64(config_.seed));
  const RowMatrix<float> sample = gather_rows(keys, rows);

  KMeansOptions opts;
  opts.max_iters = config_.kmeans_iters;
  opts.seed = config_.seed;
  auto coarse = kmeans<float>(sample, c, opts);
  centroids_ = std::move(coarse.centroids);
  lists_.assign(static_cast<std::size_t>(c), PostingList{});

  if (!config_.identity_codes) {
    RowMatrix<float> residuals(sample.rows(), sample.cols());
    for (Eigen::Index i = 0; i < sample.rows(); ++i) {
      residuals.row(i) = sample.row(i) -
                         centroids_.row(coarse.assignment[static_cast<std::size_t>(i)]);
    }
    opts.seed = splitmix64(config_.seed ^ 0x5051ULL);
    pq_.train(residuals, opts);
  }
}

void IvfPqIndex::add(std::span<const std::uint64_t> ids,
                     const RowMatrix<float>& keys) {
  if (!trained()) throw usage_error("ivfpq add: index is not trained");
  if (frozen_) throw usage_error("ivfpq add: index is frozen");
  if (static_cast<std::size_t>(keys.rows()) != ids.size() ||
      (keys.rows() > 0 && static_cast<std::size_t>(keys.cols()) != dim_)) {
    throw usage_error("ivfpq add: ids/keys shape mismatch");
  }
  check_new_ids(seen_, ids);
  const auto s = static_cast<std::size_t>(config_.subspaces);
  std::vector<int> assignment;
  detail::assign_nearest(keys, centroids_, assignment);
  std::vector<std::uint8_t> codes;
  if (!config_.identity_codes && keys.rows() > 0) {
    RowMatrix<float> residuals = keys;
    for (Eigen::Index i = 0; i < keys.rows(); ++i) {
      residuals.row(i) -= centroids_.row(assignment[static_cast<std::size_t>(i)]);
    }
    codes = pq_.encode_rows(residuals);
  }
  std::vector<bool> touched(lists_.size(), false);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto c = static_cast<std::size_t>(assignment[i]);
    auto& list = lists_[c];
    touched[c] = true;
    list.ids.push_back(ids[i]);
    if (config_.identity_codes) {
      const float* row = keys.row(static_cast<Eigen::Index>(i)).data();
      list.vectors.insert(list.vectors.end(), row, row + dim_);
    } else {
      list.codes.insert(list.codes.end(), codes.begin() + static_cast<std::ptrdiff_t>(i * s),
                        codes.begin() + static_cast<std::ptrdiff_t>((i + 1) * s));
    }
  }
  count_ += ids.size();

  // Postings are kept sorted by id so the index bytes do not depend on how
  // adds were batched.
  for (std::size_t c = 0; c < lists_.size(); ++c) {
    if (!touched[c]) continue;
    auto& list = lists_[c];
    if (std::is_sorted(list.ids.begin(), list.ids.end())) continue;
    std::vector<std::size_t> order(list.ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return list.ids[a] < list.ids[b];
    });
    PostingList sorted;
    const std::size_t width = config_.identity_codes ? dim_ : s;
    for (auto i : order) {
      sorted.ids.push_back(list.ids[i]);
      if (config_.identity_codes) {
        sorted.vectors.insert(sorted.vectors.end(),
                              list.vectors.begin() + i * width,
                              list.vectors.begin() + (i + 1) * width);
      } else {
        sorted.codes.insert(sorted.codes.end(), list.codes.begin() + i * width,
                            list.codes.begin() + (i + 1) * width);
      }
    }
    list = std::move(sorted);
  }
  for (std::size_t c = 0; c < lists_.size(); ++c) {
    if (touched[c]) refresh_bias(c);
  }
}

// |q - c - r|^2 = |q - c|^2 + (|r|^2 + 2 c.r) - 2 q.r, so one query table
// serves every probed list.
void IvfPqIndex::refresh_bias(std::size_t list) {
  auto& l = lists_[list];
  if (config_.identity_codes) return;
  const auto s = static_cast<std::size_t>(config_.subspaces);
  std::vector<float> r(dim_);
  l.bias.resize(l.ids.size());
  for (std::size_t i = 0; i < l.ids.size(); ++i) {
    pq_.decode(std::span<const std::uint8_t>(l.codes.data() + i * s, s), r);
    double b = 0;
    for (std::size_t d = 0; d < dim_; ++d) {
      const double rd = r[d];
      b += rd * rd + 2.0 * rd *
                         centroids_(static_cast<Eigen::Index>(list),
                                    static_cast<Eigen::Index>(d));
    }
    l.bias[i] = static_cast<float>(b);
  }
}

std::vector<std::pair<float, int>> IvfPqIndex::probe_order(
    const KeyVector& query, int nprobe) const {
  std::vector<std::pair<float, int>> d(static_cast<std::size_t>(centroids_.rows()));
  for (Eigen::Index c = 0; c < centroids_.rows(); ++c) {
    d[static_cast<std::size_t>(c)] = {
        squared_l2(centroids_.row(c), query.transpose()), static_cast<int>(c)};
  }
  const auto n = static_cast<std::size_t>(
      std::clamp<int>(nprobe, 1, static_cast<int>(centroids_.rows())));
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n),
                    d.end());
  d.resize(n);
  return d;
}

SearchResult IvfPqIndex::search(const KeyVector& query, int k,
                                int nprobe) const {
  if (k < 1) throw usage_error("search: k must be >= 1");
  if (nprobe < 1) throw usage_error("search: nprobe must be >= 1");
  SearchResult res;
  if (!trained() || count_ == 0) {
    res.index_empty = true;
    return res;
  }
  const auto s = static_cast<std::size_t>(config_.subspaces);
  const auto kc = static_cast<std::size_t>(pq_.codebook_size());
  std::vector<float> table;
  if (!config_.identity_codes) {
    table.resize(s * kc);
    pq_.inner_product_table(std::span<const float>(query.data(), dim_), table);
  }
  // Bounded max-heap under neighbor_less keeps the k best seen so far.
  const auto limit = static_cast<std::size_t>(k);
  std::vector<Neighbor> cand;
  cand.reserve(limit + 1);
  auto offer = [&](Neighbor n) {
    if (cand.size() < limit) {
      cand.push_back(n);
      std::push_heap(cand.begin(), cand.end(), neighbor_less);
    } else if (neighbor_less(n, cand.front())) {
      std::pop_heap(cand.begin(), cand.end(), neighbor_less);
      cand.back() = n;
      std::push_heap(cand.begin(), cand.end(), neighbor_less);
    }
  };
  for (const auto& [center_dist, c] : probe_order(query, nprobe)) {
    const auto& list = lists_[static_cast<std::size_t>(c)];
    if (config_.identity_codes) {
      for (std::size_t i = 0; i < list.ids.size(); ++i) {
        Eigen::Map<const Eigen::VectorXf> v(list.vectors.data() + i * dim_,
                                            static_cast<Eigen::Index>(dim_));
        offer({list.ids[i], squared_l2(v, query)});
      }
      continue;
    }
    const std::uint8_t* code = list.codes.data();
    for (std::size_t i = 0; i < list.ids.size(); ++i) {
      float dot = 0;
      const float* t = table.data();
      for (std::size_t m = 0; m < s; ++m, t += kc) dot += t[*code++];
      offer({list.ids[i], std::max(0.0f, center_dist + list.bias[i] - 2 * dot)});
    }
  }
  select_top_k(cand, static_cast<std::size_t>(k));
  res.neighbors = std::move(cand);
  return res;
}

void IvfPqIndex::reconstruct(int list, std::size_t pos,
                             std::span<float> out) const {
  const auto& l = lists_[static_cast<std::size_t>(list)];
  if (config_.identity_codes) {
    std::copy_n(l.vectors.begin() + static_cast<std::ptrdiff_t>(pos * dim_),
                dim_, out.begin());
    return;
  }
  const auto s = static_cast<std::size_t>(config_.subspaces);
  pq_.decode(std::span<const std::uint8_t>(l.codes.data() + pos * s, s), out);
  for (std::size_t d = 0; d < dim_; ++d) {
    out[d] += centroids_(list, static_cast<Eigen::Index>(d));
  }
}

RowMatrix<float> IvfPqIndex::reconstruct_all(
    std::vector<std::uint64_t>* ids) const {
  std::vector<std::tuple<std::uint64_t, int, std::size_t>> where;
  where.reserve(count_);
  for (std::size_t c = 0; c < lists_.size(); ++c) {
    for (std::size_t i = 0; i < lists_[c].ids.size(); ++i) {
      where.emplace_back(lists_[c].ids[i], static_cast<int>(c), i);
    }
  }
  std::sort(where.begin(), where.end());
  RowMatrix<float> out(static_cast<Eigen::Index>(where.size()),
                       static_cast<Eigen::Index>(dim_));
  if (ids) ids->clear();
  for (std::size_t r = 0; r < where.size(); ++r) {
    const auto& [id, list, pos] = where[r];
    reconstruct(list, pos,
                std::span<float>(out.row(static_cast<Eigen::Index>(r)).data(),
                                 dim_));
    if (ids) ids->push_back(id);
  }
  return out;
}

float IvfPqIndex::reconstructed_distance(const KeyVector& query,
                                         std::uint64_t id) const {
  for (std::size_t c = 0; c < lists_.size(); ++c) {
    const auto& ids = lists_[c].ids;
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id) continue;
    Eigen::VectorXf v(static_cast<Eigen::Index>(dim_));
    reconstruct(static_cast<int>(c), static_cast<std::size_t>(it - ids.begin()),
                std::span<float>(v.data(), dim_));
    return squared_l2(v, query);
  }
  throw usage_error("ivfpq: unknown id " + std::to_string(id));
}

std::vector<std::size_t> IvfPqIndex::posting_sizes() const {
  std::vector<std::size_t> out;
  out.reserve(lists_.size());
  for (const auto& l : lists_) out.push_back(l.ids.size());
  return out;
}

std::string IvfPqIndex::serialize() const {
  if (config_.identity_codes) {
    throw usage_error("ivfpq: identity-code debug indexes cannot be saved");
  }
  if (!trained()) throw usage_error("ivfpq: cannot save an untrained index");
  BinaryWriter w;
  w.magic(kIvfPqMagic);
  w.pod(static_cast<std::uint32_t>(dim_));
  w.pod(static_cast<std::uint32_t>(config_.subspaces));
  w.pod(static_cast<std::uint32_t>(centroids_.rows()));
  w.pod(config_.seed);
  w.pod(static_cast<std::uint32_t>(pq_.codebook_size()));
  w.array(std::span<const float>(centroids_.data(), centroids_.size()));
  w.array(std::span<const float>(pq_.codebooks().data(),
                                 pq_.codebooks().size()));
  const auto s = static_cast<std::size_t>(config_.subspaces);
  for (const auto& l : lists_) {
    w.pod(static_cast<std::uint64_t>(l.ids.size()));
    for (std::size_t i = 0; i < l.ids.size(); ++i) {
      w.pod(l.ids[i]);
      w.bytes(l.codes.data() + i * s, s);
    }
  }
  return w.take();
}

IvfPqIndex IvfPqIndex::deserialize(std::string_view bytes) {
  BinaryReader r(bytes, "ivfpq index");
  r.expect_magic(kIvfPqMagic);
  const auto dim = r.pod<std::uint32_t>();
  IvfPqConfig cfg;
  cfg.subspaces = static_cast<int>(r.pod<std::uint32_t>());
  cfg.clusters = static_cast<int>(r.pod<std::uint32_t>());
  cfg.seed = r.pod<std::uint64_t>();
  const auto kc = static_cast<int>(r.pod<std::uint32_t>());
  if (cfg.subspaces < 1 || dim % static_cast<std::uint32_t>(cfg.subspaces) != 0 ||
      kc < 1 || kc > 256 || cfg.clusters < 1) {
    throw usage_error("ivfpq index: invalid header");
  }
  IvfPqIndex idx(dim, cfg);
  r.section("centroids");
  idx.centroids_.resize(cfg.clusters, dim);
  r.array(std::span<float>(idx.centroids_.data(), idx.centroids_.size()));
  r.section("codebooks");
  idx.pq_.set_codebook_size(kc);
  auto& cb = idx.pq_.mutable_codebooks();
  cb.resize(cfg.subspaces * kc, dim / static_cast<std::uint32_t>(cfg.subspaces));
  r.array(std::span<float>(cb.data(), cb.size()));
  r.section("postings");
  idx.lists_.assign(static_cast<std::size_t>(cfg.clusters), PostingList{});
  const auto s = static_cast<std::size_t>(cfg.subspaces);
  for (auto& l : idx.lists_) {
    const auto n = r.pod<std::uint64_t>();
    if (n > r.remaining()) throw usage_error("ivfpq index: truncated file in section 'postings'");
    l.ids.resize(n);
    l.codes.resize(n * s);
    for (std::size_t i = 0; i < n; ++i) {
      l.ids[i] = r.pod<std::uint64_t>();
      auto code = r.view(s);
      std::copy(code.begin(), code.end(), l.codes.begin() + static_cast<std::ptrdiff_t>(i * s));
      for (char b : code) {
        if (static_cast<std::uint8_t>(b) >= kc) {
          throw usage_error("ivfpq index: code byte outside codebook");
        }
      }
    }
    if (!std::is_sorted(l.ids.begin(), l.ids.end())) {
      throw usage_error("ivfpq index: posting list not sorted by id");
    }
    idx.seen_.insert(l.ids.begin(), l.ids.end());
    idx.count_ += n;
  }
  for (std::size_t c = 0; c < idx.lists_.size(); ++c) idx.refresh_bias(c);
  if (idx.seen_.size() != idx.count_) {
    throw usage_error("ivfpq index: duplicate ids");
  }
  if (!r.at_end()) throw usage_error("ivfpq index: trailing bytes");
  idx.frozen_ = true;
  return idx;
}

}  // namespace knnmt
