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

#include "knnmt/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "knnmt/base_model.h"
#include "knnmt/decoder.h"

namespace knnmt {
namespace {

using Clock = std::chrono::steady_clock;

double micros(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

nlohmann::ordered_json stats_json(const LatencyStats& s) {
  return {{"samples", s.samples}, {"mean_us", s.mean_us}, {"p50_us", s.p50_us},
          {"p90_us", s.p90_us},   {"p99_us", s.p99_us}};
}

std::string stats_line(const char* label, const LatencyStats& s) {
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "%-16s n=%-6zu mean=%9.1fus p50=%9.1fus p90=%9.1fus "
                "p99=%9.1fus\n",
                label, s.samples, s.mean_us, s.p50_us, s.p90_us, s.p99_us);
  return buf;
}

}  // namespace

LatencyStats latency_stats(std::vector<double> samples_us) {
  LatencyStats s;
  s.samples = samples_us.size();
  if (samples_us.empty()) return s;
  std::sort(samples_us.begin(), samples_us.end());
  double sum = 0;
  for (double v : samples_us) sum += v;
  s.mean_us = sum / static_cast<double>(samples_us.size());
  auto pct = [&](double q) {
    const auto idx = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(samples_us.size())) - 1);
    return samples_us[std::min(idx, samples_us.size() - 1)];
  };
  s.p50_us = pct(0.50);
  s.p90_us = pct(0.90);
  s.p99_us = pct(0.99);
  return s;
}

BenchReport run_bench(const BenchConfig& config) {
  if (config.entries == 0) throw usage_error("bench: entries must be positive");
  if (config.knn.lambda <= 0) throw usage_error("bench: lambda must be > 0");
  config.knn.validate();

  // About nine target tokens per sentence; leave headroom for short ones.
  SyntheticConfig syn;
  syn.seed = config.seed;
  const std::size_t want = config.entries / 6 + config.sentences + 1;
  const std::size_t nouns =
      static_cast<std::size_t>(syn.shared_nouns + syn.domain_nouns);
  syn.frames = static_cast<int>(std::max<std::size_t>(200, want / nouns + 1));
  const auto splits = generate_domain(syn, 0, want - config.sentences, 0,
                                      config.sentences);
  auto tok = tokenize_pairs(splits.train, Tokenizer(), CorpusOptions(), nullptr);
  const auto [src_vocab, tgt_vocab] = build_vocabs(tok, false);
  ParallelCorpus corpus = encode_corpus(tok, src_vocab, tgt_vocab);

  // Keep whole sentences up to the requested entry count.
  std::size_t total = 0;
  std::size_t keep = 0;
  while (keep < corpus.pairs.size() && total < config.entries) {
    total += corpus.pairs[keep].target.size() - 1;
    ++keep;
  }
  corpus.pairs.resize(keep);
  ModelConfig mc;
  mc.seed = config.seed;
  const auto model = LexicalNgramModel::fit(mc, corpus);

  const auto start = Clock::now();
  auto entries = compute_entries(model, corpus);
  const auto n = std::min(config.entries, entries.values.size());
  entries.keys.conservativeResize(static_cast<Eigen::Index>(n), entries.keys.cols());
  entries.values.resize(n);
  entries.provenance.clear();
  DatastoreConfig dc;
  dc.ivfpq = config.index;
  dc.ivfpq.seed = config.seed;
  const Datastore store = build_from_entries(
      std::move(entries), model.target_vocab().fingerprint(), model.fingerprint(), dc);

  BenchReport report;
  report.entries = store.size();
  report.build_seconds =
      std::chrono::duration<double>(Clock::now() - start).count();
  if (const auto* ivf = dynamic_cast<const IvfPqIndex*>(&store.index())) {
    report.clusters = static_cast<int>(ivf->posting_sizes().size());
  }

  // Greedy decoding over p_final; every visited prefix is timed with and
  // without retrieval.
  std::vector<double> base_us, knn_us, search_us;
  KnnParams base_params = config.knn;
  base_params.lambda = 0;
  for (const auto& pair : splits.test) {
    auto toks = model.tokenizer().tokenize(pair.source);
    if (!toks) continue;
    const TokenSeq source = encode_source(*toks, model.source_vocab());
    auto enc = model.encode(source);
    TokenSeq prefix{kBos};
    const int max_len = 2 * static_cast<int>(source.size() - 1) + 8;
    for (int t = 0; t < max_len; ++t) {
      auto a = Clock::now();
      const auto base = step_distribution(model, &store, *enc, prefix, base_params);
      auto b = Clock::now();
      const auto full = step_distribution(model, &store, *enc, prefix, config.knn);
      auto c = Clock::now();
      const auto key = model.step(*enc, prefix).key;
      auto d = Clock::now();
      store.retrieve(key, config.knn);
      auto e = Clock::now();
      base_us.push_back(micros(a, b));
      knn_us.push_back(micros(b, c));
      search_us.push_back(micros(d, e));
      (void)base;
      Eigen::Index best = 0;
      for (Eigen::Index y = 1; y < full.p_final.size(); ++y) {
        if (full.p_final[y] > full.p_final[best]) best = y;
      }
      prefix.push_back(static_cast<TokenId>(best));
      if (best == kEos) break;
    }
  }
  report.base_step = latency_stats(base_us);
  report.retrieval_step = latency_stats(knn_us);
  report.search = latency_stats(search_us);
  report.searches_per_second =
      report.search.mean_us > 0 ? 1e6 / report.search.mean_us : 0;
  report.overhead_ratio = report.base_step.mean_us > 0
                              ? report.retrieval_step.mean_us / report.base_step.mean_us
                              : 0;
  return report;
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["entries"] = entries;
  j["clusters"] = clusters;
  j["build_seconds"] = build_seconds;
  j["base_step"] = stats_json(base_step);
  j["retrieval_step"] = stats_json(retrieval_step);
  j["search"] = stats_json(search);
  j["searches_per_second"] = searches_per_second;
  j["overhead_ratio"] = overhead_ratio;
  return j.dump(2) + "\n";
}

std::string BenchReport::to_text() const {
  char head[200];
  std::snprintf(head, sizeof(head),
                "store: %zu entries, %d clusters, built in %.1fs\n", entries,
                clusters, build_seconds);
  std::string out = head;
  out += stats_line("step (no kNN)", base_step);
  out += stats_line("step (kNN)", retrieval_step);
  out += stats_line("search", search);
  char tail[160];
  std::snprintf(tail, sizeof(tail),
                "searches/sec: %.0f  retrieval overhead: %.1fx per step\n",
                searches_per_second, overhead_ratio);
  out += tail;
  return out;
}

}  // namespace knnmt
