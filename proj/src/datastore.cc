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

#include <algorithm>
#include <cmath>
#include <numeric>

namespace knnmt {
namespace {

constexpr std::string_view kDatastoreMagic = "knnds-v1";

std::vector<std::uint64_t> iota_ids(std::size_t begin, std::size_t n) {
  std::vector<std::uint64_t> ids(n);
  std::iota(ids.begin(), ids.end(), static_cast<std::uint64_t>(begin));
  return ids;
}

std::unique_ptr<VectorIndex> make_index(const RowMatrix<float>& keys,
                                        const DatastoreConfig& config) {
  const auto n = static_cast<std::size_t>(keys.rows());
  const auto dim = static_cast<std::size_t>(keys.cols());
  const auto ids = iota_ids(0, n);
  if (config.flat) {
    auto idx = std::make_unique<FlatIndex>(dim);
    idx->add(ids, keys);
    return idx;
  }
  auto idx = std::make_unique<IvfPqIndex>(dim, config.ivfpq);
  idx->train(keys);
  idx->add(ids, keys);
  idx->freeze();
  return idx;
}

}  // namespace

void KnnParams::validate() const {
  if (k < 1) throw usage_error("k must be >= 1");
  if (!(temperature > 0)) throw usage_error("temperature must be > 0");
  if (nprobe < 1) throw usage_error("nprobe must be >= 1");
  if (!(lambda >= 0 && lambda <= 1)) throw usage_error("lambda must be in [0,1]");
}

std::vector<double> neighbor_probabilities(const RetrievalSet& retrieved,
                                           double temperature) {
  std::vector<double> w(retrieved.items.size());
  if (w.empty()) return w;
  double dmin = retrieved.items.front().distance;
  for (const auto& it : retrieved.items) dmin = std::min(dmin, it.distance);
  double total = 0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = std::exp(-(retrieved.items[j].distance - dmin) / temperature);
    total += w[j];
  }
  for (auto& x : w) x /= total;
  return w;
}

KnnDistribution knn_distribution(const RetrievalSet& retrieved,
                                 double temperature, std::size_t vocab_size) {
  if (!(temperature > 0)) throw usage_error("temperature must be > 0");
  KnnDistribution out;
  out.probs = ProbVector::Zero(static_cast<Eigen::Index>(vocab_size));
  if (retrieved.items.empty()) {
    out.empty = true;
    return out;
  }
  const auto shares = neighbor_probabilities(retrieved, temperature);
  for (std::size_t j = 0; j < shares.size(); ++j) {
    const TokenId v = retrieved.items[j].value;
    if (v >= vocab_size) throw usage_error("retrieved value outside vocab");
    out.probs[v] += shares[j];
  }
  return out;
}

// ---------------------------------------------------------------- Datastore

Datastore::Datastore(std::unique_ptr<VectorIndex> index,
                     std::vector<TokenId> values,
                     std::vector<Provenance> provenance,
                     std::uint64_t vocab_fingerprint,
                     std::uint64_t model_fingerprint,
                     const DatastoreConfig& config)
    : index_(std::move(index)),
      values_(std::move(values)),
      provenance_(std::move(provenance)),
      vocab_fingerprint_(vocab_fingerprint),
      model_fingerprint_(model_fingerprint),
      config_(config) {
  if (index_->size() != values_.size()) {
    throw Error(ErrorKind::kInternal, "datastore: index/value count mismatch");
  }
  if (!provenance_.empty() && provenance_.size() != values_.size()) {
    throw Error(ErrorKind::kInternal, "datastore: provenance count mismatch");
  }
}

RetrievalSet Datastore::retrieve(const KeyVector& query,
                                 const KnnParams& params) const {
  RetrievalSet out;
  if (!index_ || values_.empty()) {
    out.empty_store = true;
    return out;
  }
  auto res = index_->search(query, params.k, params.nprobe);
  out.empty_store = res.index_empty;
  out.items.reserve(res.neighbors.size());
  for (const auto& n : res.neighbors) {
    RetrievedItem item;
    item.distance = n.distance;
    item.id = n.id;
    item.value = values_[n.id];
    if (!provenance_.empty()) item.provenance = provenance_[n.id];
    out.items.push_back(item);
  }
  return out;
}

void Datastore::check_compatible(const TranslationModel& model,
                                 std::uint64_t target_vocab_fingerprint) const {
  if (model.fingerprint() != model_fingerprint_) {
    throw mismatch_error("datastore was built with model " +
                         hex64(model_fingerprint_) + ", not " +
                         hex64(model.fingerprint()) +
                         " (use --allow-fingerprint-mismatch to override)");
  }
  if (target_vocab_fingerprint != vocab_fingerprint_) {
    throw mismatch_error("datastore target vocabulary " +
                         hex64(vocab_fingerprint_) + " does not match " +
                         hex64(target_vocab_fingerprint) +
                         " (use --allow-fingerprint-mismatch to override)");
  }
  if (model.key_dim() != dim()) {
    throw mismatch_error("datastore key dimension " + std::to_string(dim()) +
                         " does not match model key dimension " +
                         std::to_string(model.key_dim()));
  }
}

std::string Datastore::serialize() const {
  BinaryWriter w;
  w.magic(kDatastoreMagic);
  // Config block.
  const auto* ivf = dynamic_cast<const IvfPqIndex*>(index_.get());
  w.pod(static_cast<std::uint32_t>(dim()));
  w.pod(static_cast<std::uint32_t>(ivf ? ivf->config().subspaces : 0));
  w.pod(static_cast<std::uint32_t>(ivf ? ivf->clusters() : 0));
  const KnnParams defaults;
  w.pod(static_cast<std::uint32_t>(defaults.k));
  w.pod(static_cast<std::uint32_t>(defaults.nprobe));
  w.pod(ivf ? ivf->config().seed : config_.ivfpq.seed);
  w.pod(vocab_fingerprint_);
  w.pod(model_fingerprint_);
  w.pod(static_cast<std::uint8_t>(index_->kind()));
  // Embedded index.
  const std::string index_bytes = index_->serialize();
  w.pod(static_cast<std::uint64_t>(index_bytes.size()));
  w.bytes(index_bytes.data(), index_bytes.size());
  // Values and optional provenance.
  w.pod(static_cast<std::uint64_t>(values_.size()));
  w.array(std::span<const TokenId>(values_));
  w.pod(static_cast<std::uint8_t>(!provenance_.empty()));
  for (const auto& p : provenance_) {
    w.pod(p.sentence);
    w.pod(p.step);
  }
  return w.take();
}

Datastore Datastore::deserialize(std::string_view bytes) {
  BinaryReader r(bytes, "datastore file");
  r.expect_magic(kDatastoreMagic);
  r.section("config");
  DatastoreConfig cfg;
  const auto dim = r.pod<std::uint32_t>();
  cfg.ivfpq.subspaces = static_cast<int>(r.pod<std::uint32_t>());
  cfg.ivfpq.clusters = static_cast<int>(r.pod<std::uint32_t>());
  r.pod<std::uint32_t>();  // default k
  r.pod<std::uint32_t>();  // default nprobe
  cfg.ivfpq.seed = r.pod<std::uint64_t>();
  const auto vocab_fp = r.pod<std::uint64_t>();
  const auto model_fp = r.pod<std::uint64_t>();
  const auto kind = r.pod<std::uint8_t>();
  if (kind > 1) throw usage_error("datastore file: unknown index kind");
  cfg.flat = kind == static_cast<std::uint8_t>(IndexKind::kFlat);
  r.section("index");
  const auto index_len = r.pod<std::uint64_t>();
  auto index = deserialize_index(r.view(index_len));
  if (index->dim() != dim) {
    throw usage_error("datastore file: index dimension disagrees with config");
  }
  r.section("values");
  const auto n = r.pod<std::uint64_t>();
  if (n > r.remaining() / sizeof(TokenId)) {
    throw usage_error("datastore file: truncated file in section 'values'");
  }
  std::vector<TokenId> values(n);
  r.array(std::span<TokenId>(values));
  r.section("provenance");
  std::vector<Provenance> prov;
  if (r.pod<std::uint8_t>() != 0) {
    cfg.store_provenance = true;
    prov.resize(n);
    for (auto& p : prov) {
      p.sentence = r.pod<std::uint32_t>();
      p.step = r.pod<std::uint16_t>();
    }
  }
  if (!r.at_end()) throw usage_error("datastore file: trailing bytes");
  if (index->size() != n) {
    throw usage_error("datastore file: index holds " +
                      std::to_string(index->size()) + " entries but " +
                      std::to_string(n) + " values are stored");
  }
  return Datastore(std::move(index), std::move(values), std::move(prov),
                   vocab_fp, model_fp, cfg);
}

void Datastore::save(const std::string& path) const {
  write_file(path, serialize());
}

Datastore Datastore::load(const std::string& path) {
  return deserialize(read_file(path));
}

// ---------------------------------------------------------------- Build

DatastoreEntries compute_entries(const TranslationModel& model,
                                 const ParallelCorpus& corpus) {
  DatastoreEntries e;
  const std::size_t n = corpus.target_token_count();
  e.keys.resize(static_cast<Eigen::Index>(n),
                static_cast<Eigen::Index>(model.key_dim()));
  e.values.reserve(n);
  e.provenance.reserve(n);
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < corpus.pairs.size(); ++s) {
    const auto& pair = corpus.pairs[s];
    auto enc = model.encode(pair.source);
    const std::span<const TokenId> target(pair.target);
    for (std::size_t i = 1; i < target.size(); ++i) {
      e.keys.row(row++) = model.step(*enc, target.first(i)).key.transpose();
      e.values.push_back(target[i]);
      e.provenance.push_back(
          {static_cast<std::uint32_t>(s), static_cast<std::uint16_t>(i)});
    }
  }
  return e;
}

Datastore build_from_entries(DatastoreEntries entries,
                             std::uint64_t vocab_fingerprint,
                             std::uint64_t model_fingerprint,
                             const DatastoreConfig& config) {
  if (entries.values.empty()) throw usage_error("datastore: zero entries");
  auto index = make_index(entries.keys, config);
  if (!config.store_provenance) entries.provenance.clear();
  return Datastore(std::move(index), std::move(entries.values),
                   std::move(entries.provenance), vocab_fingerprint,
                   model_fingerprint, config);
}

Datastore build_datastore(const TranslationModel& model,
                          std::uint64_t target_vocab_fingerprint,
                          const ParallelCorpus& corpus,
                          const DatastoreConfig& config) {
  return build_from_entries(compute_entries(model, corpus),
                            target_vocab_fingerprint, model.fingerprint(),
                            config);
}

Datastore build_datastore(const LexicalNgramModel& model,
                          const ParallelCorpus& corpus,
                          const DatastoreConfig& config) {
  if (corpus.target_vocab.fingerprint() != model.target_vocab().fingerprint() ||
      corpus.source_vocab.fingerprint() != model.source_vocab().fingerprint()) {
    throw mismatch_error(
        "datastore build: corpus vocabulary does not match the model");
  }
  return build_datastore(model, model.target_vocab().fingerprint(), corpus,
                         config);
}

DatastoreEntries select_sentences(const DatastoreEntries& entries,
                                  std::span<const std::uint32_t> sentences) {
  DatastoreEntries out;
  std::vector<std::size_t> rows;
  std::size_t j = 0;
  for (std::size_t i = 0; i < entries.values.size(); ++i) {
    const auto s = entries.provenance[i].sentence;
    while (j < sentences.size() && sentences[j] < s) ++j;
    if (j < sentences.size() && sentences[j] == s) rows.push_back(i);
  }
  out.keys = gather_rows(entries.keys, rows);
  for (auto r : rows) {
    out.values.push_back(entries.values[r]);
    out.provenance.push_back(entries.provenance[r]);
  }
  return out;
}

Datastore merge_datastores(std::span<const Datastore* const> stores) {
  if (stores.empty()) throw usage_error("merge: no datastores given");
  const Datastore& first = *stores.front();
  const auto* first_ivf = dynamic_cast<const IvfPqIndex*>(&first.index());
  for (const Datastore* ds : stores) {
    if (ds->vocab_fingerprint() != first.vocab_fingerprint() ||
        ds->model_fingerprint() != first.model_fingerprint()) {
      throw mismatch_error("merge: datastores built with different models");
    }
    const auto* ivf = dynamic_cast<const IvfPqIndex*>(&ds->index());
    if (ds->dim() != first.dim() || (ivf == nullptr) != (first_ivf == nullptr) ||
        (ivf && ivf->config().subspaces != first_ivf->config().subspaces)) {
      throw mismatch_error("merge: datastore index configurations differ");
    }
  }

  if (stores.size() == 1) return first;

  std::size_t total = 0;
  bool all_prov = true;
  for (const Datastore* ds : stores) {
    total += ds->size();
    all_prov = all_prov && ds->has_provenance();
  }

  DatastoreEntries merged;
  merged.keys.resize(static_cast<Eigen::Index>(total),
                     static_cast<Eigen::Index>(first.dim()));
  std::vector<std::size_t> offsets;
  Eigen::Index row = 0;
  for (const Datastore* ds : stores) {
    offsets.push_back(static_cast<std::size_t>(row));
    std::vector<std::uint64_t> ids;
    auto keys = ds->index().reconstruct_all(&ids);
    merged.keys.middleRows(row, keys.rows()) = keys;
    for (auto id : ids) {
      merged.values.push_back(ds->values()[id]);
      if (all_prov) merged.provenance.push_back(ds->provenance()[id]);
    }
    row += keys.rows();
  }

  DatastoreConfig cfg = first.config();
  cfg.store_provenance = all_prov;
  if (first_ivf == nullptr) {
    cfg.flat = true;
    return build_from_entries(std::move(merged), first.vocab_fingerprint(),
                              first.model_fingerprint(), cfg);
  }

  // Proportional training sample: each store contributes its share of the
  // 256-per-cluster budget.
  cfg.flat = false;
  cfg.ivfpq = first_ivf->config();
  // Stores trained with different cluster counts merge under the automatic
  // count for the combined size.
  cfg.ivfpq.clusters = first_ivf->clusters();
  for (const Datastore* ds : stores) {
    if (dynamic_cast<const IvfPqIndex&>(ds->index()).clusters() != cfg.ivfpq.clusters) {
      cfg.ivfpq.clusters = default_cluster_count(total);
      break;
    }
  }
  const std::size_t budget = cfg.ivfpq.max_train_points > 0
                                 ? cfg.ivfpq.max_train_points
                                 : 256 * static_cast<std::size_t>(cfg.ivfpq.clusters);
  std::vector<std::size_t> train_rows;
  for (std::size_t i = 0; i < stores.size(); ++i) {
    const std::size_t n = stores[i]->size();
    const std::size_t share =
        total <= budget ? n : std::max<std::size_t>(1, budget * n / total);
    for (auto r : sample_indices(n, share, splitmix64(cfg.ivfpq.seed + i))) {
      train_rows.push_back(offsets[i] + r);
    }
  }
  const RowMatrix<float> sample = gather_rows(merged.keys, train_rows);
  IvfPqConfig train_cfg = cfg.ivfpq;
  train_cfg.max_train_points = static_cast<std::size_t>(sample.rows());
  auto index = std::make_unique<IvfPqIndex>(first.dim(), train_cfg);
  index->train(sample);
  index->add(iota_ids(0, total), merged.keys);
  index->freeze();
  if (!all_prov) merged.provenance.clear();
  return Datastore(std::move(index), std::move(merged.values),
                   std::move(merged.provenance), first.vocab_fingerprint(),
                   first.model_fingerprint(), cfg);
}

}  // namespace knnmt
