# Copyright 2026 The knnmt Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Regenerates bleu_cases.json with sacrebleu as the reference scorer."""
import json

import sacrebleu

CASES = [
    ("perfect_match", ["the cat sat on the mat ."], ["the cat sat on the mat ."]),
    ("smoothed_4gram", ["a b c d"], ["a b c e"]),
    ("empty_hypothesis", ["", "a b c d e"], ["x y z", "a b c d e"]),
    ("brevity_penalty", ["the cat"], ["the cat sat on the mat"]),
    ("longer_hypothesis", ["the the cat sat on on the mat mat"], ["the cat sat on the mat"]),
    ("punctuation_13a", ["Hello, world! (yes)"], ["Hello , world ! ( yes )"]),
    ("numbers_13a", ["It costs 3,000.50 dollars-ish 1-2."], ["It costs 3,000.50 dollars - ish 1 - 2 ."]),
    ("case_sensitive", ["The Cat Sat On The Mat"], ["the cat sat on the mat"]),
    ("html_entities", ["a &amp; b &lt;c&gt; &quot;d&quot;"], ["a & b < c > \" d \""]),
    ("multi_sentence", ["das ist ein kleiner test", "wir gehen nach hause heute", "ja"],
     ["das ist ein test", "wir gehen heute nach hause", "nein danke"]),
]

out = []
for name, hyps, refs in CASES:
    b = sacrebleu.corpus_bleu(hyps, [refs], smooth_method="exp", tokenize="13a")
    out.append({"name": name, "hypotheses": hyps, "references": refs,
                "score": round(b.score, 6), "bp": round(b.bp, 6),
                "sys_len": b.sys_len, "ref_len": b.ref_len})
    print(f"{name:20s} {b.score:.4f}")

with open("bleu_cases.json", "w") as f:
    json.dump(out, f, indent=1, ensure_ascii=False)
    f.write("\n")
