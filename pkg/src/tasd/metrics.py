"""Corpus BLEU-1..4, ROUGE-L and an exact-match METEOR variant.

All scores are on a 0-100 scale.  Inputs are parallel lists of token
sequences (ids or strings); one reference per candidate.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, List, Sequence

from .text import split_words

Tokens = Sequence[Hashable]


def _tokens(seq) -> list:
    return list(seq.ids) if hasattr(seq, "ids") else list(seq)


def _check(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ValueError("empty corpus")
    return [_tokens(c) for c in candidates], [_tokens(r) for r in references]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidates, references, max_n: int = 4) -> List[float]:
    """Corpus BLEU-1..``max_n`` without smoothing."""
    cands, refs = _check(candidates, references)
    clipped = [0] * max_n
    totals = [0] * max_n
    for c, r in zip(cands, refs):
        for n in range(1, max_n + 1):
            cn, rn = ngrams(c, n), ngrams(r, n)
            clipped[n - 1] += sum(min(cnt, rn[g]) for g, cnt in cn.items())
            totals[n - 1] += sum(cn.values())
    c_len = sum(len(c) for c in cands)
    r_len = sum(len(r) for r in refs)
    if c_len == 0:
        return [0.0] * max_n
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    scores, log_sum = [], 0.0
    for k in range(max_n):
        if clipped[k] == 0 or totals[k] == 0:
            # once an order has zero precision every higher BLEU-k is zero too
            scores.extend([0.0] * (max_n - k))
            break
        log_sum += math.log(clipped[k] / totals[k])
        scores.append(100.0 * bp * math.exp(log_sum / (k + 1)))
    return scores


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(cand: Tokens, ref: Tokens, beta: float = 1.2) -> float:
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge_l(candidates, references, beta: float = 1.2) -> float:
    cands, refs = _check(candidates, references)
    return 100.0 * sum(rouge_l_pair(c, r, beta) for c, r in zip(cands, refs)) / len(cands)


def align_exact(cand: Tokens, ref: Tokens) -> List[tuple]:
    """Greedy left-to-right exact alignment; each reference token used once."""
    used = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(cand):
        for j, rt in enumerate(ref):
            if not used[j] and rt == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def count_chunks(pairs: List[tuple]) -> int:
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite_pair(cand: Tokens, ref: Tokens, alpha: float = 0.9,
                     beta: float = 3.0, gamma: float = 0.5) -> float:
    pairs = align_exact(cand, ref)
    matches = len(pairs)
    if matches == 0:
        return 0.0
    p, r = matches / len(cand), matches / len(ref)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (count_chunks(pairs) / matches) ** beta
    return f_mean * (1.0 - penalty)


def meteor_lite(candidates, references) -> float:
    cands, refs = _check(candidates, references)
    return 100.0 * sum(meteor_lite_pair(c, r) for c, r in zip(cands, refs)) / len(cands)


@dataclass
class MetricReport:
    bleu: List[float]
    rouge_l: float
    meteor_lite: float
    n_pairs: int

    def to_json(self) -> str:
        return json.dumps({"bleu": self.bleu, "rouge_l": self.rouge_l,
                           "meteor_lite": self.meteor_lite, "n_pairs": self.n_pairs})


def evaluate_tokens(candidates, references) -> MetricReport:
    return MetricReport(bleu_n(candidates, references, 4), rouge_l(candidates, references),
                        meteor_lite(candidates, references), len(candidates))


def evaluate_texts(hypotheses: Sequence[str], references: Sequence[str]) -> MetricReport:
    """Score raw strings using the model's word tokenizer."""
    return evaluate_tokens([split_words(h) for h in hypotheses],
                           [split_words(r) for r in references])
