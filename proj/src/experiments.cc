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

#include "knnmt/experiments.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "knnmt/random.h"

namespace knnmt {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::vector<TokenizedPair> tokenize_raw(std::span<const RawPair> raw) {
  return tokenize_pairs(raw, Tokenizer(), CorpusOptions(), nullptr);
}

// Model and training corpus for one seed.
struct Fitted {
  LexicalNgramModel model;
  ParallelCorpus corpus;
};

ModelConfig seeded(ModelConfig m, std::uint64_t seed) {
  m.seed = seed;
  return m;
}

DatastoreConfig seeded(DatastoreConfig d, std::uint64_t seed) {
  d.ivfpq.seed = seed;
  return d;
}

SyntheticConfig seeded(SyntheticConfig s, std::uint64_t seed) {
  s.seed = seed;
  return s;
}

Fitted fit_on(const ExperimentConfig& config, std::uint64_t seed,
              std::span<const RawPair> train) {
  const auto tok = tokenize_raw(train);
  auto [src_vocab, tgt_vocab] = build_vocabs(tok, false);
  ParallelCorpus corpus = encode_corpus(tok, src_vocab, tgt_vocab);
  auto model = LexicalNgramModel::fit(seeded(config.model, seed), corpus);
  return {std::move(model), std::move(corpus)};
}

void add_row(ExperimentReport& r, std::string domain, std::string condition,
             std::uint64_t seed, double bleu, double base, double lambda,
             double temperature, std::size_t entries) {
  r.rows.push_back({std::move(domain), std::move(condition), seed, bleu,
                    bleu - base, lambda, temperature, entries});
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

double mean(std::span<const double> v) {
  if (v.empty()) return 0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_stdev(std::span<const double> v) {
  if (v.size() < 2) return 0;
  const double m = mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

EvalSet make_eval_set(const LexicalNgramModel& model,
                      std::span<const RawPair> pairs) {
  EvalSet set;
  for (const auto& p : pairs) {
    auto toks = model.tokenizer().tokenize(p.source);
    if (!toks) continue;
    set.sources.push_back(encode_source(*toks, model.source_vocab()));
    set.references.push_back(p.target);
  }
  if (set.sources.empty()) throw usage_error("evaluation set is empty");
  return set;
}

std::vector<std::string> translate_lines(const LexicalNgramModel& model,
                                         const Datastore* datastore,
                                         std::span<const TokenSeq> sources,
                                         const KnnParams& params,
                                         const DecodeOptions& decode,
                                         int workers,
                                         RetrievalCache* cache) {
  const auto translations =
      translate_corpus(model, datastore, sources, params, decode, workers, cache);
  std::vector<std::string> lines;
  lines.reserve(translations.size());
  for (std::size_t i = 0; i < translations.size(); ++i) {
    if (!translations[i].error.empty()) {
      throw Error(ErrorKind::kInternal, "sentence " + std::to_string(i + 1) +
                                            ": " + translations[i].error);
    }
    const auto toks = model.target_vocab().decode(translations[i].tokens);
    lines.push_back(model.tokenizer().detokenize(toks));
  }
  return lines;
}

BleuScore evaluate(const LexicalNgramModel& model, const Datastore* datastore,
                   const EvalSet& set, const KnnParams& params,
                   const DecodeOptions& decode, int workers,
                   RetrievalCache* cache) {
  const auto hyps =
      translate_lines(model, datastore, set.sources, params, decode, workers, cache);
  return corpus_bleu(hyps, set.references);
}

TuneResult tune(const LexicalNgramModel& model, const Datastore* datastore,
                const EvalSet& validation, const TuneGrid& grid,
                const EvalConfig& config, RetrievalCache* cache) {
  if (validation.sources.empty()) throw usage_error("tune: empty validation set");
  if (grid.lambdas.empty() || grid.temperatures.empty()) {
    throw usage_error("tune: empty grid");
  }
  RetrievalCache local(validation.sources.size());
  if (!cache) cache = &local;
  TuneResult result;
  result.fixed = config.knn;
  result.beam = config.decode.beam;
  for (double lambda : grid.lambdas) {
    for (double t : grid.temperatures) {
      KnnParams p = config.knn;
      p.lambda = lambda;
      p.temperature = t;
      const double bleu =
          evaluate(model, datastore, validation, p, config.decode, config.workers,
                   cache)
              .score;
      result.grid.push_back({lambda, t, bleu});
    }
  }
  result.best = *std::min_element(
      result.grid.begin(), result.grid.end(),
      [](const TuneCell& a, const TuneCell& b) {
        if (a.bleu != b.bleu) return a.bleu > b.bleu;
        if (a.lambda != b.lambda) return a.lambda < b.lambda;
        return a.temperature < b.temperature;
      });
  return result;
}

std::vector<SummaryRow> ExperimentReport::summary() const {
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : rows) {
    std::pair<std::string, std::string> key{r.domain, r.condition};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      keys.push_back(key);
    }
  }
  std::vector<SummaryRow> out;
  for (const auto& [domain, condition] : keys) {
    std::vector<double> bleu, delta;
    for (const auto& r : rows) {
      if (r.domain == domain && r.condition == condition) {
        bleu.push_back(r.bleu);
        delta.push_back(r.delta_vs_base);
      }
    }
    out.push_back({domain, condition, mean(bleu), sample_stdev(bleu),
                   mean(delta), sample_stdev(delta), bleu.size()});
  }
  return out;
}

SummaryRow ExperimentReport::summary(const std::string& domain,
                                     const std::string& condition) const {
  for (const auto& s : summary()) {
    if (s.domain == domain && s.condition == condition) return s;
  }
  throw Error(ErrorKind::kInternal,
              "report has no row for " + domain + "/" + condition);
}

std::string ExperimentReport::to_json() const {
  nlohmann::ordered_json j;
  j["experiment"] = name;
  j["bleu_signature"] = std::string(kBleuSignature);
  auto rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"domain", r.domain},
                         {"condition", r.condition},
                         {"seed", r.seed},
                         {"bleu", r.bleu},
                         {"delta_vs_base", r.delta_vs_base},
                         {"lambda", r.lambda},
                         {"temperature", r.temperature},
                         {"entries", r.entries}});
  }
  j["rows"] = std::move(rows_json);
  auto sum_json = nlohmann::ordered_json::array();
  for (const auto& s : summary()) {
    sum_json.push_back({{"domain", s.domain},
                        {"condition", s.condition},
                        {"seeds", s.seeds},
                        {"mean_bleu", s.mean_bleu},
                        {"stdev_bleu", s.stdev_bleu},
                        {"mean_delta", s.mean_delta},
                        {"stdev_delta", s.stdev_delta}});
  }
  j["summary"] = std::move(sum_json);
  j["fingerprints"] = fingerprints;
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

std::string ExperimentReport::to_text() const {
  std::vector<std::vector<std::string>> table{
      {"domain", "condition", "seeds", "bleu", "stdev", "delta", "stdev"}};
  for (const auto& s : summary()) {
    table.push_back({s.domain, s.condition, std::to_string(s.seeds),
                     fmt(s.mean_bleu), fmt(s.stdev_bleu), fmt(s.mean_delta),
                     fmt(s.stdev_delta)});
  }
  std::vector<std::size_t> width(table[0].size(), 0);
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::string out = name + "\n";
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      out += c < 2 ? row[c] + pad : pad + row[c];
      out += c + 1 < row.size() ? "  " : "\n";
    }
  }
  for (const auto& n : notes) out += "note: " + n + "\n";
  return out;
}

ExperimentReport run_in_domain_experiment(const ExperimentConfig& config) {
  ExperimentReport report;
  report.name = "in-domain";
  for (std::uint64_t seed : config.seeds) {
    auto start = Clock::now();
    const auto splits = generate_domain(seeded(config.synthetic, seed), 0,
                                        config.train, config.valid, config.test);
    auto fitted = fit_on(config, seed, splits.train);
    const auto& model = fitted.model;
    const Datastore store = build_datastore(
        model, fitted.corpus, seeded(config.datastore, seed));
    report.timings["build/" + std::to_string(seed)] = seconds_since(start);

    const EvalSet valid = make_eval_set(model, splits.valid);
    const EvalSet test = make_eval_set(model, splits.test);
    start = Clock::now();
    const double base = evaluate(model, nullptr, test, config.eval.knn,
                                 config.eval.decode, config.eval.workers)
                            .score;
    const auto tuned = tune(model, &store, valid, config.grid, config.eval);
    KnnParams p = config.eval.knn;
    p.lambda = tuned.best.lambda;
    p.temperature = tuned.best.temperature;
    const double knn = evaluate(model, &store, test, p, config.eval.decode,
                                config.eval.workers)
                           .score;
    report.timings["eval/" + std::to_string(seed)] = seconds_since(start);

    add_row(report, "d0", "base", seed, base, base, 0, 0, 0);
    add_row(report, "d0", "knn", seed, knn, base, p.lambda, p.temperature,
            store.size());
    report.fingerprints["model/" + std::to_string(seed)] =
        hex64(model.fingerprint());
  }
  return report;
}

ExperimentReport run_domain_adaptation_experiment(
    const ExperimentConfig& config, std::span<const int> domains,
    std::size_t domain_train) {
  if (domains.empty()) throw usage_error("domain adaptation: no domains");
  ExperimentReport report;
  report.name = "domain-adaptation";
  for (std::uint64_t seed : config.seeds) {
    const SyntheticConfig syn = seeded(config.synthetic, seed);
    const DatastoreConfig ds_config = seeded(config.datastore, seed);
    const auto base_train = generate_domain(syn, 0, config.train, 0, 0).train;
    std::vector<SyntheticSplits> splits;
    for (int d : domains) {
      splits.push_back(
          generate_domain(syn, d, domain_train, config.valid, config.test));
    }

    // One vocabulary over every training text so all stores share ids; the
    // model itself only sees the base corpus.
    const auto base_tok = tokenize_raw(base_train);
    std::vector<std::vector<TokenizedPair>> dom_tok;
    std::vector<TokenizedPair> all_tok = base_tok;
    for (const auto& s : splits) {
      dom_tok.push_back(tokenize_raw(s.train));
      all_tok.insert(all_tok.end(), dom_tok.back().begin(), dom_tok.back().end());
    }
    const auto [src_vocab, tgt_vocab] = build_vocabs(all_tok, false);
    const ParallelCorpus base_corpus =
        encode_corpus(base_tok, src_vocab, tgt_vocab);
    const auto model =
        LexicalNgramModel::fit(seeded(config.model, seed), base_corpus);
    report.fingerprints["model/" + std::to_string(seed)] =
        hex64(model.fingerprint());

    const Datastore base_store = build_datastore(model, base_corpus, ds_config);
    std::vector<Datastore> dom_stores;
    for (const auto& t : dom_tok) {
      dom_stores.push_back(build_datastore(
          model, encode_corpus(t, src_vocab, tgt_vocab), ds_config));
    }
    std::vector<const Datastore*> ptrs;
    for (const auto& s : dom_stores) ptrs.push_back(&s);
    const Datastore all_store = merge_datastores(ptrs);

    for (std::size_t i = 0; i < domains.size(); ++i) {
      const std::string name = "d" + std::to_string(domains[i]);
      const EvalSet valid = make_eval_set(model, splits[i].valid);
      const EvalSet test = make_eval_set(model, splits[i].test);
      const double base = evaluate(model, nullptr, test, config.eval.knn,
                                   config.eval.decode, config.eval.workers)
                              .score;
      add_row(report, name, "base", seed, base, base, 0, 0, 0);
      const std::pair<const char*, const Datastore*> conditions[] = {
          {"in-domain", &dom_stores[i]},
          {"base-corpus", &base_store},
          {"all-domains", &all_store}};
      for (const auto& [label, store] : conditions) {
        const auto tuned = tune(model, store, valid, config.grid, config.eval);
        KnnParams p = config.eval.knn;
        p.lambda = tuned.best.lambda;
        p.temperature = tuned.best.temperature;
        const double bleu = evaluate(model, store, test, p, config.eval.decode,
                                     config.eval.workers)
                                .score;
        add_row(report, name, label, seed, bleu, base, p.lambda, p.temperature,
                store->size());
      }
    }
  }
  return report;
}

ExperimentReport run_size_ablation(const ExperimentConfig& config,
                                   std::span<const double> fractions) {
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) {
      throw usage_error("size ablation: fractions must lie in (0, 1]");
    }
  }
  ExperimentReport report;
  report.name = "size-ablation";
  std::map<double, std::vector<double>> bleu_by_fraction;
  std::map<double, std::vector<double>> entries_by_fraction;
  for (std::uint64_t seed : config.seeds) {
    const auto splits = generate_domain(seeded(config.synthetic, seed), 0,
                                        config.train, config.valid, config.test);
    auto fitted = fit_on(config, seed, splits.train);
    const auto& model = fitted.model;
    const DatastoreConfig ds_config = seeded(config.datastore, seed);
    const auto entries = compute_entries(model, fitted.corpus);
    const EvalSet valid = make_eval_set(model, splits.valid);
    const EvalSet test = make_eval_set(model, splits.test);
    const double base = evaluate(model, nullptr, test, config.eval.knn,
                                 config.eval.decode, config.eval.workers)
                            .score;
    add_row(report, "d0", "base", seed, base, base, 0, 0, 0);

    const std::uint64_t vocab_fp = model.target_vocab().fingerprint();
    const Datastore full =
        build_from_entries(entries, vocab_fp, model.fingerprint(), ds_config);
    const auto tuned = tune(model, &full, valid, config.grid, config.eval);
    KnnParams p = config.eval.knn;
    p.lambda = tuned.best.lambda;
    p.temperature = tuned.best.temperature;

    // A fixed permutation makes every subset a prefix of the next one.
    std::vector<std::uint32_t> order(fitted.corpus.pairs.size());
    std::iota(order.begin(), order.end(), 0u);
    std::mt19937_64 rng(splitmix64(seed ^ 0x51a3ULL));
    shuffle(order, rng);

    for (double f : fractions) {
      const auto m = static_cast<std::size_t>(
          std::llround(f * static_cast<double>(order.size())));
      std::vector<std::uint32_t> subset(order.begin(),
                                        order.begin() + static_cast<std::ptrdiff_t>(m));
      std::sort(subset.begin(), subset.end());
      auto selected = select_sentences(entries, subset);
      const std::string label = "fraction=" + fmt(f, 2);
      if (selected.values.empty()) {
        report.notes.push_back(label + " seed " + std::to_string(seed) +
                               ": empty store, skipped");
        continue;
      }
      const std::size_t n = selected.values.size();
      DatastoreConfig sub_config = ds_config;
      if (static_cast<std::size_t>(sub_config.ivfpq.clusters) > n) {
        sub_config.ivfpq.clusters = 0;  // too few entries; use the automatic count
      }
      const Datastore store = build_from_entries(std::move(selected), vocab_fp,
                                                 model.fingerprint(), sub_config);
      const double bleu = evaluate(model, &store, test, p, config.eval.decode,
                                   config.eval.workers)
                              .score;
      add_row(report, "d0", label, seed, bleu, base, p.lambda, p.temperature, n);
      bleu_by_fraction[f].push_back(bleu);
      entries_by_fraction[f].push_back(static_cast<double>(n));
    }
  }
  std::string csv = "fraction,entries,bleu\n";
  for (double f : fractions) {
    if (!bleu_by_fraction.count(f)) continue;
    csv += fmt(f, 2) + "," +
           std::to_string(std::llround(mean(entries_by_fraction[f]))) + "," +
           csv_number(mean(bleu_by_fraction[f])) + "\n";
  }
  report.csv["size_ablation.csv"] = csv;
  return report;
}

ExperimentReport run_k_T_sweep(const ExperimentConfig& config,
                               std::span<const int> ks,
                               std::span<const double> temperatures) {
  if (ks.empty() || temperatures.empty()) {
    throw usage_error("k/T sweep: empty grid");
  }
  ExperimentReport report;
  report.name = "k-T-sweep";
  std::map<std::pair<int, double>, std::vector<double>> cells;
  for (std::uint64_t seed : config.seeds) {
    const auto splits = generate_domain(seeded(config.synthetic, seed), 0,
                                        config.train, config.valid, config.test);
    auto fitted = fit_on(config, seed, splits.train);
    const auto& model = fitted.model;
    const Datastore store = build_datastore(model, fitted.corpus,
                                            seeded(config.datastore, seed));
    const EvalSet valid = make_eval_set(model, splits.valid);
    const EvalSet test = make_eval_set(model, splits.test);
    const double base = evaluate(model, nullptr, test, config.eval.knn,
                                 config.eval.decode, config.eval.workers)
                            .score;
    add_row(report, "d0", "base", seed, base, base, 0, 0, 0);
    for (double t : temperatures) {
      TuneGrid grid;
      grid.lambdas = config.grid.lambdas;
      grid.temperatures = {t};
      const double lambda =
          tune(model, &store, valid, grid, config.eval).best.lambda;
      for (int k : ks) {
        KnnParams p = config.eval.knn;
        p.k = k;
        p.lambda = lambda;
        p.temperature = t;
        const double bleu = evaluate(model, &store, test, p,
                                     config.eval.decode, config.eval.workers)
                                .score;
        add_row(report, "d0", "k=" + std::to_string(k) + ",T=" + fmt(t, 0),
                seed, bleu, base, lambda, t, store.size());
        cells[{k, t}].push_back(bleu);
      }
    }
  }
  std::string csv = "k,T,bleu\n";
  for (double t : temperatures) {
    for (int k : ks) {
      csv += std::to_string(k) + "," + fmt(t, 0) + "," +
             csv_number(mean(cells[{k, t}])) + "\n";
    }
  }
  report.csv["k_T_sweep.csv"] = csv;
  return report;
}

}  // namespace knnmt
