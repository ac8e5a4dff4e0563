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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "knnmt/base_model.h"
#include "knnmt/bleu.h"
#include "knnmt/datastore.h"
#include "knnmt/decoder.h"
#include "knnmt/synthetic.h"

namespace knnmt {

// Sources encoded with a model's tokenizer and vocabulary, next to their
// untokenized references.
struct EvalSet {
  std::vector<TokenSeq> sources;
  std::vector<std::string> references;
};

EvalSet make_eval_set(const LexicalNgramModel& model,
                      std::span<const RawPair> pairs);

// Decoding settings shared by every grid cell.
struct EvalConfig {
  KnnParams knn;  // lambda and temperature are overridden per cell
  DecodeOptions decode;
  int workers = 1;
};

std::vector<std::string> translate_lines(const LexicalNgramModel& model,
                                         const Datastore* datastore,
                                         std::span<const TokenSeq> sources,
                                         const KnnParams& params,
                                         const DecodeOptions& decode,
                                         int workers,
                                         RetrievalCache* cache = nullptr);

BleuScore evaluate(const LexicalNgramModel& model, const Datastore* datastore,
                   const EvalSet& set, const KnnParams& params,
                   const DecodeOptions& decode, int workers,
                   RetrievalCache* cache = nullptr);

struct TuneGrid {
  std::vector<double> lambdas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> temperatures{1, 10, 100};
};

struct TuneCell {
  double lambda = 0;
  double temperature = 0;
  double bleu = 0;
};

struct TuneResult {
  std::vector<TuneCell> grid;  // lambda-major, in grid order
  TuneCell best;
  KnnParams fixed;  // k and nprobe used for every cell
  int beam = 0;
};

// Full sweep; the best cell breaks BLEU ties toward smaller lambda, then
// smaller temperature.
TuneResult tune(const LexicalNgramModel& model, const Datastore* datastore,
                const EvalSet& validation, const TuneGrid& grid,
                const EvalConfig& config, RetrievalCache* cache = nullptr);

// Seed-aggregated table of BLEU per (domain, condition).
struct ReportRow {
  std::string domain;
  std::string condition;
  std::uint64_t seed = 0;
  double bleu = 0;
  double delta_vs_base = 0;
  double lambda = 0;
  double temperature = 0;
  std::size_t entries = 0;  // datastore entries, 0 for the base model
};

struct SummaryRow {
  std::string domain;
  std::string condition;
  double mean_bleu = 0;
  double stdev_bleu = 0;  // sample standard deviation over seeds
  double mean_delta = 0;
  double stdev_delta = 0;
  std::size_t seeds = 0;
};

struct ExperimentReport {
  std::string name;
  std::vector<ReportRow> rows;
  std::map<std::string, std::string> fingerprints;  // label -> hex
  std::map<std::string, std::string> csv;          // file name -> content
  std::map<std::string, double> timings;           // seconds; not serialized
  std::vector<std::string> notes;

  std::vector<SummaryRow> summary() const;
  // Looks up a summary row; throws if absent.
  SummaryRow summary(const std::string& domain,
                     const std::string& condition) const;

  std::string to_json() const;
  std::string to_text() const;
};

struct ExperimentConfig {
  SyntheticConfig synthetic;
  std::vector<std::uint64_t> seeds{1};
  std::size_t train = 5000;
  std::size_t valid = 200;
  std::size_t test = 500;
  ModelConfig model;
  DatastoreConfig datastore;
  EvalConfig eval;
  TuneGrid grid;
};

// Base model vs tuned retrieval on one synthetic domain.
ExperimentReport run_in_domain_experiment(const ExperimentConfig& config);

// Base corpus = domain 0; `domains` lists the target domains. Conditions per
// target domain: base, in-domain, base-corpus, all-domains datastore.
ExperimentReport run_domain_adaptation_experiment(
    const ExperimentConfig& config, std::span<const int> domains,
    std::size_t domain_train);

// BLEU on nested sentence subsets of the training store. Fractions that
// leave no entries are skipped with a note.
ExperimentReport run_size_ablation(const ExperimentConfig& config,
                                   std::span<const double> fractions);

// BLEU for every (k, T); lambda tuned once per T at the default k.
ExperimentReport run_k_T_sweep(const ExperimentConfig& config,
                               std::span<const int> ks,
                               std::span<const double> temperatures);

double mean(std::span<const double> v);
double sample_stdev(std::span<const double> v);

}  // namespace knnmt
