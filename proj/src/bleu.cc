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

#include "knnmt/bleu.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>

#include "knnmt/common.h"
#include "knnmt/corpus.h"

namespace knnmt {
namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

bool is_13a_punct(unsigned char c) {
  return (c >= '{' && c <= '~') || (c >= '[' && c <= '`') ||
         (c >= ' ' && c <= '&') || (c >= '(' && c <= '+') ||
         (c >= ':' && c <= '@') || c == '/';
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

std::vector<std::string> tokenize_13a(std::string_view input) {
  std::string line(input);
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
    line.pop_back();
  }
  replace_all(line, "<skipped>", "");
  replace_all(line, "-\n", "");
  replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    replace_all(line, "&quot;", "\"");
    replace_all(line, "&amp;", "&");
    replace_all(line, "&lt;", "<");
    replace_all(line, "&gt;", ">");
  }
  std::string padded;
  padded.reserve(line.size() * 2 + 2);
  padded += ' ';
  for (char c : line) {
    if (is_13a_punct(static_cast<unsigned char>(c))) {
      padded += ' ';
      padded += c;
      padded += ' ';
    } else {
      padded += c;
    }
  }
  padded += ' ';

  static const std::regex kPeriodCommaAfter("([^0-9])([\\.,])");
  static const std::regex kPeriodCommaBefore("([\\.,])([^0-9])");
  static const std::regex kDashAfterDigit("([0-9])(-)");
  padded = std::regex_replace(padded, kPeriodCommaAfter, "$1 $2 ");
  padded = std::regex_replace(padded, kPeriodCommaBefore, " $1 $2");
  padded = std::regex_replace(padded, kDashAfterDigit, "$1 $2 ");
  return split_whitespace(padded);
}

BleuScore corpus_bleu(std::span<const std::string> hypotheses,
                      std::span<const std::string> references) {
  if (hypotheses.size() != references.size()) {
    throw usage_error("bleu: " + std::to_string(hypotheses.size()) +
                      " hypotheses vs " + std::to_string(references.size()) +
                      " references");
  }
  BleuScore b;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto hyp = tokenize_13a(hypotheses[i]);
    const auto ref = tokenize_13a(references[i]);
    b.hyp_len += hyp.size();
    b.ref_len += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = count_ngrams(hyp, n);
      const auto r = count_ngrams(ref, n);
      for (const auto& [gram, count] : h) {
        b.total[n - 1] += count;
        auto it = r.find(gram);
        if (it != r.end()) b.correct[n - 1] += std::min(count, it->second);
      }
    }
  }

  b.brevity_penalty = 1.0;
  if (b.hyp_len < b.ref_len) {
    b.brevity_penalty =
        b.hyp_len > 0 ? std::exp(1.0 - static_cast<double>(b.ref_len) /
                                           static_cast<double>(b.hyp_len))
                      : 0.0;
  }
  if (std::all_of(b.correct.begin(), b.correct.end(),
                  [](std::size_t c) { return c == 0; })) {
    b.score = 0;
    return b;
  }
  double smooth = 1.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (b.total[n] == 0) break;
    if (b.correct[n] == 0) {
      smooth *= 2;
      b.precisions[n] = 100.0 / (smooth * static_cast<double>(b.total[n]));
    } else {
      b.precisions[n] = 100.0 * static_cast<double>(b.correct[n]) /
                        static_cast<double>(b.total[n]);
    }
  }
  double log_sum = 0;
  for (double p : b.precisions) {
    if (p <= 0) {
      b.score = 0;
      return b;
    }
    log_sum += std::log(p);
  }
  b.score = b.brevity_penalty * std::exp(log_sum / 4.0);
  return b;
}

std::string BleuScore::to_string() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "BLEU = %.2f %.1f/%.1f/%.1f/%.1f (BP = %.3f ratio = %.3f "
                "hyp_len = %zu ref_len = %zu)",
                score, precisions[0], precisions[1], precisions[2],
                precisions[3], brevity_penalty,
                ref_len ? static_cast<double>(hyp_len) /
                              static_cast<double>(ref_len)
                        : 0.0,
                hyp_len, ref_len);
  return buf;
}

}  // namespace knnmt
