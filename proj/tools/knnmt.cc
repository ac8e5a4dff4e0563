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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "knnmt/base_model.h"
#include "knnmt/bench.h"
#include "knnmt/bleu.h"
#include "knnmt/corpus.h"
#include "knnmt/datastore.h"
#include "knnmt/decoder.h"
#include "knnmt/experiments.h"
#include "knnmt/synthetic.h"

namespace {

using namespace knnmt;

constexpr const char* kEnvPrefix = "KNNMT_";

// ------------------------------------------------------------------ helpers

std::vector<double> parse_doubles(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw usage_error(std::string("--") + what + ": not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw usage_error(std::string("--") + what + ": empty list");
  return out;
}

std::vector<int> parse_ints(const std::string& text, const char* what) {
  std::vector<int> out;
  for (double v : parse_doubles(text, what)) {
    if (v != std::floor(v)) {
      throw usage_error(std::string("--") + what + ": not an integer");
    }
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::string text;
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
  } else {
    text = read_file(path);
  }
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = nl + 1;
  }
  return lines;
}

void write_output(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    write_file(path, text);
  }
}

std::vector<RawPair> read_pairs(const std::string& corpus,
                                const std::string& source,
                                const std::string& target) {
  if (!corpus.empty()) return read_tsv(corpus);
  if (source.empty() || target.empty()) {
    throw usage_error("give --corpus FILE or both --source and --target");
  }
  return read_two_files(source, target);
}

// Tokenizes with the model's tokenizer and encodes with its vocabularies.
ParallelCorpus corpus_for_model(const LexicalNgramModel& model,
                                const std::vector<RawPair>& raw,
                                std::size_t max_len) {
  CorpusOptions opts;
  opts.max_len = max_len;
  TokenizeStats stats;
  const auto tok = tokenize_pairs(raw, model.tokenizer(), opts, &stats);
  if (tok.empty()) throw usage_error("corpus has no usable sentence pairs");
  ParallelCorpus c =
      encode_corpus(tok, model.source_vocab(), model.target_vocab());
  c.skipped_empty = stats.skipped_empty;
  c.dropped_too_long = stats.dropped_too_long;
  return c;
}

Datastore load_checked_datastore(const std::string& path,
                                 const LexicalNgramModel& model,
                                 bool allow_mismatch) {
  Datastore ds = Datastore::load(path);
  try {
    ds.check_compatible(model, model.target_vocab().fingerprint());
  } catch (const Error& e) {
    if (!allow_mismatch) throw;
    std::cerr << "warning: " << e.what() << " (continuing)\n";
  }
  return ds;
}

std::string posting_summary(const Datastore& ds) {
  const auto* ivf = dynamic_cast<const IvfPqIndex*>(&ds.index());
  if (!ivf) return "index: flat\n";
  auto sizes = ivf->posting_sizes();
  std::sort(sizes.begin(), sizes.end());
  std::size_t empty = 0;
  for (auto s : sizes) empty += s == 0;
  std::ostringstream out;
  out << "index: ivfpq clusters=" << sizes.size()
      << " postings min=" << sizes.front()
      << " median=" << sizes[sizes.size() / 2] << " max=" << sizes.back()
      << " empty=" << empty << "\n";
  return out.str();
}

// ------------------------------------------------------------- shared state

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config_path;

  std::uint64_t resolve_seed() {
    if (!seed_given) {
      std::random_device rd;
      seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
      seed_given = true;
      std::cerr << "seed: " << seed << " (pass --seed " << seed
                << " to reproduce)\n";
    }
    return seed;
  }
};

struct KnnFlags {
  double lambda = 0.5;
  double temperature = 10;
  int k = 64;
  int nprobe = 32;
  int beam = 5;
  int max_len = 0;
  bool no_length_norm = false;
  int workers = 1;

  void add(CLI::App* app, bool with_lambda_and_t) {
    if (with_lambda_and_t) {
      app->add_option("--lambda", lambda, "interpolation weight of p_kNN")
          ->check(CLI::Range(0.0, 1.0));
      app->add_option("--temperature", temperature,
                      "softmax temperature over negative distances")
          ->check(CLI::PositiveNumber);
    }
    app->add_option("--k", k, "neighbors retrieved per step")
        ->check(CLI::PositiveNumber);
    app->add_option("--nprobe", nprobe, "clusters searched per query")
        ->check(CLI::PositiveNumber);
    app->add_option("--beam", beam, "beam size")->check(CLI::PositiveNumber);
    app->add_option("--max-len", max_len,
                    "output length cap; 0 = 2 * source length + 8")
        ->check(CLI::NonNegativeNumber);
    app->add_flag("--no-length-norm", no_length_norm,
                  "rank finished hypotheses by raw log-probability");
    app->add_option("--workers", workers, "sentences decoded in parallel")
        ->check(CLI::PositiveNumber);
  }

  KnnParams params() const {
    KnnParams p;
    p.k = k;
    p.nprobe = nprobe;
    p.lambda = lambda;
    p.temperature = temperature;
    return p;
  }
  DecodeOptions decode() const {
    DecodeOptions d;
    d.beam = beam;
    d.max_len = max_len;
    d.length_norm = !no_length_norm;
    return d;
  }
};

struct IndexFlags {
  bool flat = false;
  int clusters = 0;
  int pq_bytes = 16;
  int kmeans_iters = 20;
  std::size_t max_train_points = 0;
  bool identity_codes = false;

  void add(CLI::App* app) {
    app->add_flag("--flat", flat, "exact flat index instead of IVF-PQ");
    app->add_option("--clusters", clusters,
                    "IVF clusters; 0 = 256 below 1M keys, 4096 above")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--pq-bytes", pq_bytes, "PQ sub-quantizers (bytes per code)")
        ->check(CLI::PositiveNumber);
    app->add_option("--kmeans-iters", kmeans_iters, "k-means iteration cap")
        ->check(CLI::PositiveNumber);
    app->add_option("--max-train-points", max_train_points,
                    "index training sample; 0 = 256 * clusters");
    app->add_flag("--identity-codes", identity_codes,
                  "debug: store full vectors instead of PQ codes");
  }

  DatastoreConfig config(std::uint64_t seed, bool provenance) const {
    DatastoreConfig c;
    c.flat = flat;
    c.store_provenance = provenance;
    c.ivfpq.clusters = clusters;
    c.ivfpq.subspaces = pq_bytes;
    c.ivfpq.kmeans_iters = kmeans_iters;
    c.ivfpq.seed = seed;
    c.ivfpq.max_train_points = max_train_points;
    c.ivfpq.identity_codes = identity_codes;
    return c;
  }
};

// ---------------------------------------------------------------- commands

struct GenerateCmd {
  std::string out_prefix;
  int domain = 0;
  std::size_t train = 5000, valid = 200, test = 500;
  SyntheticConfig syn;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("generate", "write a synthetic parallel corpus");
    c->add_option("--out-prefix", out_prefix,
                  "writes PREFIX.train.tsv, PREFIX.valid.tsv, PREFIX.test.tsv")
        ->required();
    c->add_option("--domain", domain, "domain id; 0 is the general domain")
        ->check(CLI::NonNegativeNumber);
    c->add_option("--train", train, "training pairs");
    c->add_option("--valid", valid, "validation pairs");
    c->add_option("--test", test, "test pairs");
    c->add_option("--frames", syn.frames, "sentence templates per domain");
    c->add_option("--shared-nouns", syn.shared_nouns, "nouns shared by all domains");
    c->add_option("--domain-nouns", syn.domain_nouns, "nouns private to each domain");
    c->add_option("--polysemous-nouns", syn.polysemous_nouns,
                  "shared nouns translated differently per domain");
  }

  int run(Common& common) {
    syn.seed = common.resolve_seed();
    const auto s = generate_domain(syn, domain, train, valid, test);
    write_file(out_prefix + ".train.tsv", to_tsv(s.train));
    write_file(out_prefix + ".valid.tsv", to_tsv(s.valid));
    write_file(out_prefix + ".test.tsv", to_tsv(s.test));
    std::cout << "wrote " << s.train.size() << "/" << s.valid.size() << "/"
              << s.test.size() << " pairs to " << out_prefix << ".*.tsv\n";
    return 0;
  }
};

struct LearnBpeCmd {
  std::vector<std::string> inputs;
  std::size_t merges = 0;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("learn-bpe", "learn BPE merges from text");
    c->add_option("--input", inputs,
                  "text or TSV files; both TSV columns are used")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--merges", merges, "number of merges")->required();
    c->add_option("--out", out, "BPE model file")->required();
  }

  int run(Common&) {
    std::vector<std::string> lines;
    for (const auto& path : inputs) {
      for (auto& line : read_lines(path)) {
        std::size_t start = 0;
        for (;;) {
          const std::size_t tab = line.find('\t', start);
          lines.push_back(line.substr(start, tab - start));
          if (tab == std::string::npos) break;
          start = tab + 1;
        }
      }
    }
    const BpeModel bpe = learn_bpe(lines, merges);
    write_file(out, bpe.to_text());
    std::cout << "learned " << bpe.merge_count() << " merges\n";
    return 0;
  }
};

struct FitCmd {
  std::string corpus, source, target, bpe, out;
  std::vector<std::string> vocab_from;
  bool shared_vocab = false;
  std::size_t max_len = 256;
  ModelConfig model;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("fit", "fit the lexical n-gram base model");
    c->add_option("--corpus", corpus, "TSV parallel corpus");
    c->add_option("--source", source, "source side (one sentence per line)");
    c->add_option("--target", target, "target side (one sentence per line)");
    c->add_option("--bpe", bpe, "BPE model file; whitespace tokens if absent");
    c->add_option("--vocab-from", vocab_from,
                  "extra TSV corpora that only contribute vocabulary");
    c->add_flag("--shared-vocab", shared_vocab,
                "one vocabulary for source and target");
    c->add_option("--max-len", max_len, "drop pairs longer than this");
    c->add_option("--mu", model.mu, "weight of the lexical component")
        ->check(CLI::Range(0.0, 1.0));
    c->add_option("--alpha", model.alpha, "add-alpha smoothing")
        ->check(CLI::PositiveNumber);
    c->add_option("--window", model.window, "target tokens in the key")
        ->check(CLI::NonNegativeNumber);
    c->add_option("--dim", model.dim, "key dimension")->check(CLI::PositiveNumber);
    c->add_option("--source-weight", model.source_weight,
                  "key weight of source features");
    c->add_option("--target-weight", model.target_weight,
                  "key weight of target features");
    c->add_option("--out", out, "model file")->required();
  }

  int run(Common& common) {
    model.seed = common.resolve_seed();
    Tokenizer tok;
    if (!bpe.empty()) tok = Tokenizer(BpeModel::from_text(read_file(bpe)));
    CorpusOptions opts;
    opts.max_len = max_len;
    opts.shared_vocab = shared_vocab;
    TokenizeStats stats;
    const auto raw = read_pairs(corpus, source, target);
    const auto pairs = tokenize_pairs(raw, tok, opts, &stats);
    if (pairs.empty()) {
      throw usage_error((corpus.empty() ? source : corpus) +
                        ": no usable sentence pairs");
    }
    auto vocab_pairs = pairs;
    for (const auto& path : vocab_from) {
      const auto extra = tokenize_pairs(read_tsv(path), tok, opts, nullptr);
      vocab_pairs.insert(vocab_pairs.end(), extra.begin(), extra.end());
    }
    const auto [sv, tv] = build_vocabs(vocab_pairs, shared_vocab);
    ParallelCorpus pc = encode_corpus(pairs, sv, tv);
    pc.tokenizer_fingerprint = tok.fingerprint();
    const auto m = LexicalNgramModel::fit(model, pc, tok);
    m.save(out);
    std::cout << "pairs: " << pc.pairs.size()
              << " (skipped empty " << stats.skipped_empty
              << ", dropped too long " << stats.dropped_too_long << ")\n"
              << "source vocab: " << m.source_vocab().size()
              << " fingerprint " << hex64(m.source_vocab().fingerprint()) << "\n"
              << "target vocab: " << m.target_vocab().size()
              << " fingerprint " << hex64(m.target_vocab().fingerprint()) << "\n"
              << "model fingerprint: " << hex64(m.fingerprint()) << "\n";
    return 0;
  }
};

struct BuildCmd {
  std::string model, corpus, source, target, out;
  std::size_t max_len = 256;
  bool provenance = false;
  IndexFlags index;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("build-datastore",
                                 "build a (key, next token) datastore");
    c->add_option("--model", model, "model file")->required();
    c->add_option("--corpus", corpus, "TSV parallel corpus");
    c->add_option("--source", source, "source side (one sentence per line)");
    c->add_option("--target", target, "target side (one sentence per line)");
    c->add_option("--max-len", max_len, "drop pairs longer than this");
    c->add_flag("--provenance", provenance,
                "store (sentence, step) per entry for retrieval dumps");
    index.add(c);
    c->add_option("--out", out, "datastore file")->required();
  }

  int run(Common& common) {
    const auto m = LexicalNgramModel::load(model);
    const auto pc = corpus_for_model(m, read_pairs(corpus, source, target), max_len);
    const auto ds =
        build_datastore(m, pc, index.config(common.resolve_seed(), provenance));
    ds.save(out);
    std::cout << "entries: " << ds.size() << "\n" << posting_summary(ds);
    return 0;
  }
};

struct TranslateCmd {
  std::string model, datastore, input = "-", output = "-", dump;
  bool allow_mismatch = false;
  KnnFlags knn;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("translate", "translate one sentence per line");
    c->add_option("--model", model, "model file")->required();
    c->add_option("--datastore", datastore,
                  "datastore file; without it decoding uses the model alone");
    c->add_option("--input", input, "source lines, '-' for stdin");
    c->add_option("--output", output, "translations, '-' for stdout");
    knn.add(c, true);
    c->add_option("--dump-retrievals", dump,
                  "write per-step retrievals as JSON lines (greedy decoding)");
    c->add_flag("--allow-fingerprint-mismatch", allow_mismatch,
                "use a datastore built for a different model or vocabulary");
  }

  int run(Common&) {
    const auto m = LexicalNgramModel::load(model);
    std::optional<Datastore> ds;
    if (!datastore.empty()) ds = load_checked_datastore(datastore, m, allow_mismatch);
    if (!dump.empty() && !ds) {
      throw usage_error("--dump-retrievals needs --datastore");
    }
    const auto lines = read_lines(input);
    std::vector<TokenSeq> sources;
    std::vector<std::size_t> line_of;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      auto toks = m.tokenizer().tokenize(lines[i]);
      if (!toks) continue;
      sources.push_back(encode_source(*toks, m.source_vocab()));
      line_of.push_back(i);
    }
    const KnnParams params = knn.params();
    params.validate();
    const auto results = translate_corpus(m, ds ? &*ds : nullptr, sources,
                                          params, knn.decode(), knn.workers);
    std::vector<std::string> out(lines.size());
    int failures = 0;
    for (std::size_t j = 0; j < results.size(); ++j) {
      if (!results[j].error.empty()) {
        std::cerr << "line " << line_of[j] + 1 << ": " << results[j].error << "\n";
        ++failures;
        continue;
      }
      out[line_of[j]] =
          m.tokenizer().detokenize(m.target_vocab().decode(results[j].tokens));
    }
    std::string text;
    for (const auto& l : out) text += l + "\n";
    write_output(output, text);

    if (!dump.empty()) {
      std::string jsonl;
      bool warned = false;
      for (std::size_t j = 0; j < sources.size(); ++j) {
        const auto d = dump_retrievals(m, *ds, sources[j], params, knn.max_len);
        if (d.missing_provenance && !warned) {
          std::cerr << "warning: datastore has no provenance; sentence-id and "
                       "step-id are null (rebuild with --provenance)\n";
          warned = true;
        }
        for (const auto& rec : d.records) {
          jsonl += retrieval_record_json(rec, m.target_vocab()) + "\n";
        }
      }
      write_output(dump, jsonl);
    }
    return failures > 0 ? 1 : 0;
  }
};

struct TuneCmd {
  std::string model, datastore, valid, out;
  std::string lambdas = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  std::string temperatures = "1,10,100";
  bool allow_mismatch = false;
  KnnFlags knn;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("tune", "grid-search lambda and temperature");
    c->add_option("--model", model, "model file")->required();
    c->add_option("--datastore", datastore, "datastore file")->required();
    c->add_option("--valid", valid, "validation TSV")->required();
    c->add_option("--lambdas", lambdas, "comma-separated lambda grid");
    c->add_option("--temperatures", temperatures,
                  "comma-separated temperature grid");
    knn.add(c, false);
    c->add_flag("--allow-fingerprint-mismatch", allow_mismatch,
                "use a datastore built for a different model or vocabulary");
    c->add_option("--out", out, "JSON report");
  }

  int run(Common&) {
    const auto m = LexicalNgramModel::load(model);
    const auto ds = load_checked_datastore(datastore, m, allow_mismatch);
    const auto pairs = read_tsv(valid);
    const EvalSet set = make_eval_set(m, pairs);
    TuneGrid grid;
    grid.lambdas = parse_doubles(lambdas, "lambdas");
    grid.temperatures = parse_doubles(temperatures, "temperatures");
    for (double l : grid.lambdas) {
      if (l < 0 || l > 1) throw usage_error("--lambdas: values must lie in [0, 1]");
    }
    for (double t : grid.temperatures) {
      if (t <= 0) throw usage_error("--temperatures: values must be positive");
    }
    EvalConfig ec;
    ec.knn = knn.params();
    ec.decode = knn.decode();
    ec.workers = knn.workers;
    const auto result = tune(m, &ds, set, grid, ec);

    nlohmann::ordered_json j;
    j["bleu_signature"] = std::string(kBleuSignature);
    auto rows = nlohmann::ordered_json::array();
    for (const auto& cell : result.grid) {
      rows.push_back({{"lambda", cell.lambda},
                      {"temperature", cell.temperature},
                      {"bleu", cell.bleu}});
    }
    j["grid"] = std::move(rows);
    j["best"] = {{"lambda", result.best.lambda},
                 {"temperature", result.best.temperature},
                 {"bleu", result.best.bleu}};
    j["fixed"] = {{"k", result.fixed.k},
                  {"nprobe", result.fixed.nprobe},
                  {"beam", result.beam}};
    if (!out.empty()) write_file(out, j.dump(2) + "\n");

    std::printf("%8s %12s %8s\n", "lambda", "temperature", "bleu");
    for (const auto& cell : result.grid) {
      std::printf("%8.2f %12g %8.2f\n", cell.lambda, cell.temperature, cell.bleu);
    }
    std::printf("best: lambda=%.2f temperature=%g bleu=%.2f\n",
                result.best.lambda, result.best.temperature, result.best.bleu);
    return 0;
  }
};

struct ExperimentCmd {
  std::string kind, out_dir;
  int seeds = 1;
  std::size_t train = 5000, valid = 200, test = 500, domain_train = 2000;
  std::string domains = "1,2";
  std::string fractions = "0.1,0.5,1.0";
  std::string ks = "1,8,16,32,64,128";
  std::string lambdas = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  std::string temperatures = "1,10,100";
  KnnFlags knn;
  IndexFlags index;
  ModelConfig model;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("experiment", "run a synthetic experiment suite");
    c->add_option("kind", kind, "experiment to run")
        ->required()
        ->check(CLI::IsMember(
            {"in-domain", "domain-adaptation", "size-ablation", "k-T-sweep"}));
    c->add_option("--out-dir", out_dir, "report directory")->required();
    c->add_option("--seeds", seeds,
                  "number of seeds, counting up from --seed")
        ->check(CLI::PositiveNumber);
    c->add_option("--train", train, "training pairs (base corpus)");
    c->add_option("--valid", valid, "validation pairs per domain");
    c->add_option("--test", test, "test pairs per domain");
    c->add_option("--domain-train", domain_train,
                  "training pairs per adaptation domain");
    c->add_option("--domains", domains, "adaptation domains (comma-separated)");
    c->add_option("--fractions", fractions, "datastore fractions for size-ablation");
    c->add_option("--ks", ks, "neighbor counts for k-T-sweep");
    c->add_option("--lambdas", lambdas, "comma-separated lambda grid");
    c->add_option("--temperatures", temperatures,
                  "comma-separated temperature grid");
    c->add_option("--mu", model.mu, "weight of the lexical component")
        ->check(CLI::Range(0.0, 1.0));
    knn.add(c, false);
    index.add(c);
  }

  int run(Common& common) {
    const std::uint64_t seed = common.resolve_seed();
    ExperimentConfig cfg;
    cfg.seeds.clear();
    for (int i = 0; i < seeds; ++i) {
      cfg.seeds.push_back(seed + static_cast<std::uint64_t>(i));
    }
    cfg.train = train;
    cfg.valid = valid;
    cfg.test = test;
    cfg.model = model;
    cfg.datastore = index.config(seed, false);
    cfg.eval.knn = knn.params();
    cfg.eval.decode = knn.decode();
    cfg.eval.workers = knn.workers;
    cfg.grid.lambdas = parse_doubles(lambdas, "lambdas");
    cfg.grid.temperatures = parse_doubles(temperatures, "temperatures");

    ExperimentReport report;
    if (kind == "in-domain") {
      report = run_in_domain_experiment(cfg);
    } else if (kind == "domain-adaptation") {
      const auto d = parse_ints(domains, "domains");
      report = run_domain_adaptation_experiment(cfg, d, domain_train);
    } else if (kind == "size-ablation") {
      const auto f = parse_doubles(fractions, "fractions");
      report = run_size_ablation(cfg, f);
    } else {
      const auto k = parse_ints(ks, "ks");
      report = run_k_T_sweep(cfg, k, cfg.grid.temperatures);
    }
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    write_file((dir / "report.json").string(), report.to_json());
    write_file((dir / "report.txt").string(), report.to_text());
    for (const auto& [name, content] : report.csv) {
      write_file((dir / name).string(), content);
    }
    std::cout << report.to_text();
    return 0;
  }
};

struct BenchCmd {
  BenchConfig cfg;
  std::string out;
  int clusters = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("bench", "time decoding steps on a large store");
    c->add_option("--entries", cfg.entries, "datastore entries");
    c->add_option("--sentences", cfg.sentences, "sentences decoded");
    c->add_option("--lambda", cfg.knn.lambda, "interpolation weight")
        ->check(CLI::Range(0.0, 1.0));
    c->add_option("--temperature", cfg.knn.temperature, "softmax temperature")
        ->check(CLI::PositiveNumber);
    c->add_option("--k", cfg.knn.k, "neighbors retrieved per step")
        ->check(CLI::PositiveNumber);
    c->add_option("--nprobe", cfg.knn.nprobe, "clusters searched per query")
        ->check(CLI::PositiveNumber);
    c->add_option("--clusters", cfg.index.clusters,
                  "IVF clusters; 0 = 256 below 1M keys, 4096 above");
    c->add_option("--kmeans-iters", cfg.index.kmeans_iters, "k-means iteration cap");
    c->add_option("--max-train-points", cfg.index.max_train_points,
                  "index training sample");
    c->add_option("--out", out, "JSON report");
  }

  int run(Common& common) {
    cfg.seed = common.resolve_seed();
    const auto report = run_bench(cfg);
    if (!out.empty()) write_file(out, report.to_json());
    std::cout << report.to_text();
    return 0;
  }
};

struct BleuCmd {
  std::string hyp, ref;
  bool json = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("bleu", "corpus BLEU of detokenized lines");
    c->add_option("--hyp", hyp, "hypothesis lines")->required();
    c->add_option("--ref", ref, "reference lines")->required();
    c->add_flag("--json", json, "print JSON instead of text");
  }

  int run(Common&) {
    auto h = read_lines(hyp);
    auto r = read_lines(ref);
    const auto b = corpus_bleu(h, r);
    if (json) {
      nlohmann::ordered_json j;
      j["score"] = b.score;
      j["precisions"] = b.precisions;
      j["brevity_penalty"] = b.brevity_penalty;
      j["hyp_len"] = b.hyp_len;
      j["ref_len"] = b.ref_len;
      j["signature"] = std::string(kBleuSignature);
      std::cout << j.dump() << "\n";
    } else {
      std::cout << b.to_string() << "\n" << kBleuSignature << "\n";
    }
    return 0;
  }
};

struct MergeCmd {
  std::vector<std::string> inputs;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("merge-datastores",
                                 "union of datastores built with one model");
    c->add_option("--inputs", inputs, "datastore files")->required();
    c->add_option("--out", out, "merged datastore file")->required();
  }

  int run(Common&) {
    std::vector<Datastore> stores;
    for (const auto& p : inputs) stores.push_back(Datastore::load(p));
    std::vector<const Datastore*> ptrs;
    for (const auto& s : stores) ptrs.push_back(&s);
    const auto merged = merge_datastores(ptrs);
    merged.save(out);
    std::cout << "entries: " << merged.size() << "\n" << posting_summary(merged);
    return 0;
  }
};

// ------------------------------------------------------------ config/env

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void attach_env(CLI::App* app) {
  for (CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (opt->get_lnames().empty() || name == "help" || name == "config") continue;
    std::string env = kEnvPrefix;
    for (char ch : name) {
      env += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
    opt->envname(env);
  }
}

// Config entries become command-line arguments placed before the user's own,
// so explicit flags (parsed later, last value wins) take precedence. Entries
// whose environment variable is set are dropped so the variable applies.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;

  std::size_t sub_pos = args.size();
  CLI::App* sub = nullptr;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i].rfind("-", 0) == 0) continue;
    try {
      sub = app.get_subcommand(args[i]);
      sub_pos = i;
      break;
    } catch (const CLI::OptionNotFound&) {
    }
  }

  std::vector<std::string> inserted;
  int line_no = 0;
  for (const auto& raw : read_lines(path)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw usage_error(path + ":" + std::to_string(line_no) +
                        ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const CLI::Option* opt =
        sub ? sub->get_option_no_throw("--" + key) : nullptr;
    if (!opt) opt = app.get_option_no_throw("--" + key);
    if (!opt) {
      throw usage_error(path + ":" + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    }
    const std::string& env = opt->get_envname();
    if (!env.empty() && std::getenv(env.c_str()) != nullptr) continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1" || value == "yes") {
        inserted.push_back("--" + key);
      }
      continue;
    }
    inserted.push_back("--" + key);
    inserted.push_back(value);
  }
  const std::size_t at = sub ? sub_pos + 1 : 0;
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), inserted.begin(),
              inserted.end());
  return args;
}

int run(int argc, char** argv) {
  CLI::App app{"kNN-MT: nearest-neighbor retrieval on top of a base translation model"};
  app.name("knnmt");
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeLast);

  Common common;
  app.add_option("--seed", common.seed,
                 "seed for all randomness; picked and printed when omitted")
      ->each([&](const std::string&) { common.seed_given = true; });
  app.add_option("--config", common.config_path,
                 "file of key=value lines (flag names without dashes); "
                 "command-line flags win");

  GenerateCmd generate;
  LearnBpeCmd learn_bpe_cmd;
  FitCmd fit;
  BuildCmd build;
  TranslateCmd translate;
  TuneCmd tune_cmd;
  ExperimentCmd experiment;
  BenchCmd bench;
  BleuCmd bleu;
  MergeCmd merge;
  generate.add(app);
  learn_bpe_cmd.add(app);
  fit.add(app);
  build.add(app);
  translate.add(app);
  tune_cmd.add(app);
  experiment.add(app);
  bench.add(app);
  bleu.add(app);
  merge.add(app);
  // Vector options keep every value given on the command line.
  for (CLI::App* sub : app.get_subcommands({})) {
    for (CLI::Option* opt : sub->get_options()) {
      if (opt->get_items_expected_max() > 1) {
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
      }
    }
  }
  attach_env(&app);
  for (CLI::App* sub : app.get_subcommands({})) attach_env(sub);
  app.footer("Every flag can also be set through an environment variable named " +
             std::string(kEnvPrefix) +
             "<FLAG> (upper case, dashes as underscores), e.g. KNNMT_LAMBDA.\n"
             "Exit codes: 0 ok, 1 internal error, 2 usage or I/O error, "
             "3 fingerprint/config mismatch.");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config(app, args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  std::cerr << "# knnmt " << sub->get_name() << "\n";
  std::istringstream resolved(sub->config_to_str(true, false));
  for (std::string line; std::getline(resolved, line);) {
    if (!line.empty()) std::cerr << "#   " << line << "\n";
  }

  const std::string name = sub->get_name();
  if (name == "generate") return generate.run(common);
  if (name == "learn-bpe") return learn_bpe_cmd.run(common);
  if (name == "fit") return fit.run(common);
  if (name == "build-datastore") return build.run(common);
  if (name == "translate") return translate.run(common);
  if (name == "tune") return tune_cmd.run(common);
  if (name == "experiment") return experiment.run(common);
  if (name == "bench") return bench.run(common);
  if (name == "bleu") return bleu.run(common);
  if (name == "merge-datastores") return merge.run(common);
  throw Error(ErrorKind::kInternal, "unhandled subcommand " + name);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const knnmt::Error& e) {
    std::cerr << "knnmt: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "knnmt: internal error: " << e.what() << "\n";
    return 1;
  }
}
