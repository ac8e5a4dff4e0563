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

#include "knnmt/synthetic.h"

#include <optional>
#include <random>
#include <set>

#include "knnmt/common.h"
#include "knnmt/random.h"

namespace knnmt {
namespace {

struct Word {
  std::string src;
  std::string tgt;
};

struct NounPhrase {
  const Word* det = nullptr;
  const Word* adj = nullptr;
  const Word* noun = nullptr;  // nullptr marks the slot
};

struct Frame {
  NounPhrase subject;
  const Word* verb = nullptr;
  std::optional<NounPhrase> object;
  const Word* prep = nullptr;
  std::optional<NounPhrase> pp;
};

// Distinct pseudo-words over a fixed syllable inventory.
class WordMaker {
 public:
  WordMaker(std::string consonants, std::string vowels, std::uint64_t seed)
      : consonants_(std::move(consonants)), vowels_(std::move(vowels)),
        rng_(seed) {}

  std::string make(int min_syllables) {
    for (;;) {
      const int n = min_syllables + static_cast<int>(uniform_index(rng_, 2));
      std::string w;
      for (int i = 0; i < n; ++i) {
        w += consonants_[uniform_index(rng_, consonants_.size())];
        w += vowels_[uniform_index(rng_, vowels_.size())];
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  std::string consonants_;
  std::string vowels_;
  std::mt19937_64 rng_;
  std::set<std::string> used_;
};

struct Lexicon {
  std::vector<Word> dets, preps, verbs, adjs, shared_nouns;
  std::vector<std::vector<Word>> domain_nouns;  // per domain
  std::vector<std::vector<Word>> senses;        // per domain, polysemous
};

Lexicon make_lexicon(const SyntheticConfig& c, int max_domain) {
  WordMaker src("bdgkmnprstvz", "aeiou", splitmix64(c.seed ^ 0x5352ULL));
  WordMaker tgt("fhjklmnrsw", "aeiouy", splitmix64(c.seed ^ 0x5447ULL));
  auto words = [&](int n, int syl) {
    std::vector<Word> out;
    for (int i = 0; i < n; ++i) out.push_back({src.make(syl), tgt.make(syl)});
    return out;
  };
  Lexicon lex;
  lex.dets = words(c.determiners, 1);
  lex.preps = words(c.prepositions, 1);
  lex.verbs = words(c.verbs, 2);
  lex.adjs = words(c.adjectives, 2);
  lex.shared_nouns = words(c.shared_nouns, 2);
  for (int d = 0; d <= max_domain; ++d) {
    lex.domain_nouns.push_back(words(c.domain_nouns, 2));
    std::vector<Word> senses;
    for (int i = 0; i < c.polysemous_nouns && i < c.shared_nouns; ++i) {
      senses.push_back({lex.shared_nouns[static_cast<std::size_t>(i)].src,
                        tgt.make(2)});
    }
    lex.senses.push_back(std::move(senses));
  }
  return lex;
}

// Nouns available in a domain, with polysemous shared nouns in their
// domain sense.
std::vector<const Word*> domain_nouns(const Lexicon& lex, int domain) {
  std::vector<const Word*> out;
  const auto d = static_cast<std::size_t>(domain);
  for (const auto& w : lex.domain_nouns[d]) out.push_back(&w);
  for (std::size_t i = 0; i < lex.shared_nouns.size(); ++i) {
    out.push_back(i < lex.senses[d].size() ? &lex.senses[d][i]
                                           : &lex.shared_nouns[i]);
  }
  return out;
}

std::vector<Frame> make_frames(const SyntheticConfig& c, const Lexicon& lex,
                               int domain) {
  std::mt19937_64 rng(splitmix64(c.seed + 0x1000ULL * static_cast<std::uint64_t>(domain + 1)));
  const auto nouns = domain_nouns(lex, domain);
  const std::size_t own = lex.domain_nouns[static_cast<std::size_t>(domain)].size();
  auto pick = [&](const std::vector<Word>& v) {
    return &v[uniform_index(rng, v.size())];
  };
  auto pick_noun = [&]() {
    if (own > 0 && uniform_real(rng) < c.domain_noun_share) {
      return nouns[uniform_index(rng, own)];
    }
    return nouns[own + uniform_index(rng, nouns.size() - own)];
  };
  auto np = [&]() {
    NounPhrase p;
    p.det = pick(lex.dets);
    if (uniform_real(rng) < 0.5) p.adj = pick(lex.adjs);
    p.noun = pick_noun();
    return p;
  };

  std::vector<Frame> frames;
  for (int f = 0; f < c.frames; ++f) {
    Frame fr;
    fr.subject = np();
    fr.verb = pick(lex.verbs);
    if (uniform_real(rng) < 0.8) fr.object = np();
    if (uniform_real(rng) < 0.5) {
      fr.prep = pick(lex.preps);
      fr.pp = np();
    }
    std::vector<NounPhrase*> slots{&fr.subject};
    if (fr.object) slots.push_back(&*fr.object);
    if (fr.pp) slots.push_back(&*fr.pp);
    slots[uniform_index(rng, slots.size())]->noun = nullptr;
    frames.push_back(fr);
  }
  return frames;
}

void emit_np(const NounPhrase& p, const Word* filler, std::string& src,
             std::string& tgt) {
  const Word* noun = p.noun ? p.noun : filler;
  auto add = [](std::string& s, const std::string& w) {
    if (!s.empty()) s += ' ';
    s += w;
  };
  add(tgt, p.det->tgt);
  if (p.adj) add(tgt, p.adj->tgt);
  add(tgt, noun->tgt);
  add(src, p.det->src);
  add(src, noun->src);
  if (p.adj) add(src, p.adj->src);
}

RawPair realize(const Frame& f, const Word* filler) {
  std::string src, tgt;
  emit_np(f.subject, filler, src, tgt);
  tgt += ' ' + f.verb->tgt;
  if (f.object) emit_np(*f.object, filler, src, tgt);
  if (f.pp) {
    tgt += ' ' + f.prep->tgt;
    src += ' ' + f.prep->src;
    emit_np(*f.pp, filler, src, tgt);
  }
  src += ' ' + f.verb->src + " .";
  tgt += " .";
  return {std::move(src), std::move(tgt), 0};
}

}  // namespace

SyntheticSplits generate_domain(const SyntheticConfig& config, int domain,
                                std::size_t train, std::size_t valid,
                                std::size_t test) {
  if (domain < 0) throw usage_error("synthetic: domain must be >= 0");
  if (config.frames < 1 || config.determiners < 1 || config.prepositions < 1 ||
      config.verbs < 1 || config.adjectives < 1 ||
      config.shared_nouns + config.domain_nouns < 1) {
    throw usage_error("synthetic: every word class needs at least one entry");
  }
  const Lexicon lex = make_lexicon(config, domain);
  const auto frames = make_frames(config, lex, domain);
  const auto nouns = domain_nouns(lex, domain);

  const std::size_t combos = frames.size() * nouns.size();
  const std::size_t need = train + valid + test;
  if (need > combos) {
    throw usage_error("synthetic: " + std::to_string(need) +
                      " sentences requested but the domain has only " +
                      std::to_string(combos) + " distinct ones");
  }
  const std::uint64_t split_seed =
      splitmix64(config.seed ^ (0xabcdULL + static_cast<std::uint64_t>(domain)));
  auto picks = sample_indices(combos, need, split_seed);
  std::mt19937_64 rng(splitmix64(split_seed));
  shuffle(picks, rng);

  SyntheticSplits out;
  for (std::size_t i = 0; i < need; ++i) {
    const std::size_t frame = picks[i] / nouns.size();
    const std::size_t noun = picks[i] % nouns.size();
    RawPair p = realize(frames[frame], nouns[noun]);
    auto& dst = i < train ? out.train : i < train + valid ? out.valid : out.test;
    p.line = dst.size() + 1;
    dst.push_back(std::move(p));
  }
  return out;
}

std::string to_tsv(const std::vector<RawPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += p.source;
    out += '\t';
    out += p.target;
    out += '\n';
  }
  return out;
}

}  // namespace knnmt
