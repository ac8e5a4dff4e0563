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

#include <cstddef>
#include <cstdint>
#include <string>

#include "knnmt/datastore.h"
#include "knnmt/synthetic.h"

namespace knnmt {

struct BenchConfig {
  std::size_t entries = 1000000;
  std::size_t sentences = 20;  // decoded test sentences
  std::uint64_t seed = 1;
  KnnParams knn;               // lambda > 0 for the retrieval run
  IvfPqConfig index{.clusters = 0,
                    .subspaces = 16,
                    .kmeans_iters = 10,
                    .seed = 1,
                    .max_train_points = 65536,
                    .identity_codes = false};
};

struct LatencyStats {
  std::size_t samples = 0;
  double mean_us = 0;
  double p50_us = 0;
  double p90_us = 0;
  double p99_us = 0;
};

struct BenchReport {
  std::size_t entries = 0;
  int clusters = 0;
  double build_seconds = 0;
  LatencyStats base_step;       // p_mt only
  LatencyStats retrieval_step;  // p_mt + search + interpolation
  LatencyStats search;          // index search alone
  double searches_per_second = 0;
  double overhead_ratio = 0;  // mean retrieval step / mean base step

  std::string to_json() const;
  std::string to_text() const;
};

// Builds a synthetic store of `entries` keys and times greedy decoding
// steps with and without retrieval over the same prefixes.
BenchReport run_bench(const BenchConfig& config);

LatencyStats latency_stats(std::vector<double> samples_us);

}  // namespace knnmt
