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

#include "knnmt/decoder.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include <json.hpp>

namespace knnmt {

std::size_t TokenSeqHash::operator()(const TokenSeq& seq) const {
  std::uint64_t h = seq.size();
  for (TokenId t : seq) h = splitmix64(h ^ t);
  return static_cast<std::size_t>(h);
}

void RetrievalCache::bind(const Datastore* datastore, const KnnParams& params) {
  if (datastore == datastore_ && params.k == k_ && params.nprobe == nprobe_) {
    return;
  }
  for (auto& m : memos_) m.clear();
  datastore_ = datastore;
  k_ = params.k;
  nprobe_ = params.nprobe;
}

StepDistribution step_distribution(const TranslationModel& model,
                                   const Datastore* datastore,
                                   const SourceEncoding& encoding,
                                   std::span<const TokenId> prefix,
                                   const KnnParams& params,
                                   RetrievalMemo* memo) {
  StepOutput out = model.step(encoding, prefix);
  StepDistribution d;
  d.p_mt = std::move(out.p_mt);
  if (datastore == nullptr || params.lambda == 0) {
    d.p_final = d.p_mt;
    return d;
  }
  if (memo) {
    TokenSeq key(prefix.begin(), prefix.end());
    auto it = memo->find(key);
    if (it == memo->end()) {
      it = memo->emplace(std::move(key), datastore->retrieve(out.key, params))
               .first;
    }
    d.retrieved = it->second;
  } else {
    d.retrieved = datastore->retrieve(out.key, params);
  }
  auto knn = knn_distribution(d.retrieved, params.temperature,
                              model.target_vocab_size());
  d.p_knn = std::move(knn.probs);
  d.knn_empty = knn.empty;
  if (d.knn_empty) {
    d.p_final = d.p_mt;
  } else {
    d.p_final = params.lambda * d.p_knn + (1.0 - params.lambda) * d.p_mt;
  }
  return d;
}

StepDistribution step_distribution(const TranslationModel& model,
                                   const Datastore* datastore,
                                   const TranslationContext& ctx,
                                   const KnnParams& params) {
  auto enc = model.encode(ctx.source);
  return step_distribution(model, datastore, *enc, ctx.prefix, params);
}

double Hypothesis::score(bool length_norm) const {
  if (!length_norm || length() == 0) return log_prob;
  return log_prob / static_cast<double>(length());
}

int resolve_max_len(const DecodeOptions& opts, std::size_t source_len) {
  if (opts.max_len > 0) return opts.max_len;
  return 2 * static_cast<int>(source_len) + 8;
}

namespace {

// A beam entry at the next step: either a carried finished hypothesis
// (token == kNoToken) or a live parent extended by `token`.
struct Candidate {
  double log_prob;
  std::size_t parent;
  TokenId token;
};

constexpr TokenId kNoToken = std::numeric_limits<TokenId>::max();

// Lexicographic comparison of parent.tokens (+ token).
int compare_sequences(const Hypothesis& a, TokenId ta, const Hypothesis& b,
                      TokenId tb) {
  const std::size_t na = a.tokens.size() + (ta != kNoToken);
  const std::size_t nb = b.tokens.size() + (tb != kNoToken);
  for (std::size_t i = 0; i < std::min(na, nb); ++i) {
    const TokenId x = i < a.tokens.size() ? a.tokens[i] : ta;
    const TokenId y = i < b.tokens.size() ? b.tokens[i] : tb;
    if (x != y) return x < y ? -1 : 1;
  }
  return na == nb ? 0 : (na < nb ? -1 : 1);
}

}  // namespace

std::vector<Hypothesis> beam_search(const TranslationModel& model,
                                    const Datastore* datastore,
                                    std::span<const TokenId> source,
                                    const KnnParams& params,
                                    const DecodeOptions& opts,
                                    RetrievalMemo* memo) {
  if (source.empty()) throw usage_error("beam_search: empty source");
  if (opts.beam < 1) throw usage_error("beam size must be >= 1");
  params.validate();
  const std::size_t beam = static_cast<std::size_t>(opts.beam);
  const std::size_t src_len =
      source.back() == kEos ? source.size() - 1 : source.size();
  const int max_len = resolve_max_len(opts, src_len);

  auto enc = model.encode(source);
  std::vector<Hypothesis> hyps{{{kBos}, 0.0, false}};

  for (int t = 0; t < max_len; ++t) {
    if (std::all_of(hyps.begin(), hyps.end(),
                    [](const Hypothesis& h) { return h.finished; })) {
      break;
    }
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < hyps.size(); ++h) {
      if (hyps[h].finished) {
        cands.push_back({hyps[h].log_prob, h, kNoToken});
        continue;
      }
      const auto dist =
          step_distribution(model, datastore, *enc, hyps[h].tokens, params, memo);
      // Only this hypothesis's best `beam` tokens can survive pruning.
      std::vector<std::pair<double, TokenId>> local;
      local.reserve(static_cast<std::size_t>(dist.p_final.size()));
      for (Eigen::Index y = 0; y < dist.p_final.size(); ++y) {
        if (dist.p_final[y] > 0) {
          local.emplace_back(std::log(dist.p_final[y]),
                             static_cast<TokenId>(y));
        }
      }
      auto better = [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
      };
      const std::size_t keep = std::min(beam, local.size());
      std::partial_sort(local.begin(),
                        local.begin() + static_cast<std::ptrdiff_t>(keep),
                        local.end(), better);
      for (std::size_t i = 0; i < keep; ++i) {
        cands.push_back(
            {hyps[h].log_prob + local[i].first, h, local[i].second});
      }
    }
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return compare_sequences(hyps[a.parent], a.token, hyps[b.parent],
                               b.token) < 0;
    };
    const std::size_t keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(),
                      cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), better);
    std::vector<Hypothesis> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = cands[i];
      Hypothesis h = hyps[c.parent];
      if (c.token != kNoToken) {
        h.tokens.push_back(c.token);
        h.log_prob = c.log_prob;
        h.finished = c.token == kEos;
      }
      next.push_back(std::move(h));
    }
    hyps = std::move(next);
  }

  std::stable_sort(hyps.begin(), hyps.end(),
                   [&](const Hypothesis& a, const Hypothesis& b) {
                     const double sa = a.score(opts.length_norm);
                     const double sb = b.score(opts.length_norm);
                     if (sa != sb) return sa > sb;
                     return compare_sequences(a, kNoToken, b, kNoToken) < 0;
                   });
  return hyps;
}

std::vector<Translation> translate_corpus(const TranslationModel& model,
                                          const Datastore* datastore,
                                          std::span<const TokenSeq> sources,
                                          const KnnParams& params,
                                          const DecodeOptions& opts,
                                          int workers,
                                          RetrievalCache* cache) {
  if (cache) {
    if (cache->size() != sources.size()) {
      throw usage_error("retrieval cache was made for a different corpus");
    }
    cache->bind(datastore, params);
  }
  std::vector<Translation> out(sources.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < sources.size(); i = next++) {
      try {
        auto ranked = beam_search(model, datastore, sources[i], params, opts,
                                  cache ? cache->memo(i) : nullptr);
        const auto& best = ranked.front();
        Translation tr;
        for (std::size_t j = 1; j < best.tokens.size(); ++j) {
          if (best.tokens[j] != kEos) tr.tokens.push_back(best.tokens[j]);
        }
        tr.score = best.score(opts.length_norm);
        out[i] = std::move(tr);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(sources.size())));
  if (n <= 1) {
    work();
    return out;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < n; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  return out;
}

RetrievalDump dump_retrievals(const TranslationModel& model,
                              const Datastore& datastore,
                              std::span<const TokenId> source,
                              const KnnParams& params, int max_len) {
  params.validate();
  RetrievalDump dump;
  dump.missing_provenance = !datastore.has_provenance();
  DecodeOptions opts;
  opts.max_len = max_len;
  const std::size_t src_len =
      !source.empty() && source.back() == kEos ? source.size() - 1 : source.size();
  const int limit = resolve_max_len(opts, src_len);

  // Retrieval runs even at lambda = 0 so the dump always has neighbors.
  auto enc = model.encode(source);
  TokenSeq prefix{kBos};
  for (int t = 0; t < limit; ++t) {
    StepOutput out = model.step(*enc, prefix);
    RetrievalRecord rec;
    rec.step = t + 1;
    rec.retrieved = datastore.retrieve(out.key, params);
    auto knn = knn_distribution(rec.retrieved, params.temperature,
                                model.target_vocab_size());
    rec.neighbor_probs = neighbor_probabilities(rec.retrieved, params.temperature);
    ProbVector p_final = knn.empty || params.lambda == 0
                             ? out.p_mt
                             : ProbVector(params.lambda * knn.probs +
                                          (1.0 - params.lambda) * out.p_mt);
    Eigen::Index best = 0;
    for (Eigen::Index y = 1; y < p_final.size(); ++y) {
      if (p_final[y] > p_final[best]) best = y;
    }
    rec.token = static_cast<TokenId>(best);
    rec.p_knn = std::move(knn.probs);
    dump.records.push_back(std::move(rec));
    prefix.push_back(static_cast<TokenId>(best));
    if (best == kEos) break;
  }
  return dump;
}

std::string retrieval_record_json(const RetrievalRecord& record,
                                  const Vocab& target_vocab) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["token"] = target_vocab.token(record.token);
  auto neighbors = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < record.retrieved.items.size(); ++i) {
    const auto& item = record.retrieved.items[i];
    nlohmann::ordered_json n;
    n["distance"] = item.distance;
    n["value"] = target_vocab.token(item.value);
    n["prob"] = record.neighbor_probs[i];
    if (item.provenance) {
      n["sentence-id"] = item.provenance->sentence;
      n["step-id"] = item.provenance->step;
    } else {
      n["sentence-id"] = nullptr;
      n["step-id"] = nullptr;
    }
    neighbors.push_back(std::move(n));
  }
  j["neighbors"] = std::move(neighbors);
  return j.dump();
}

}  // namespace knnmt
