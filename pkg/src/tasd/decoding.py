"""Greedy and beam-search decoding.

A decodable model is any object with ``next_token_logprobs(ids, table)``
returning a 1-D array of log-probabilities over the vocabulary.  Models that
also provide ``encode(table)`` get the table encoded once per decode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autograd import no_grad
from .text import EOS, TokenSeq

STRATEGIES = ("greedy", "beam")


@dataclass
class DecodeConfig:
    strategy: str = "beam"
    beam_width: int = 5
    max_len: int = 128
    length_penalty_alpha: float = 0.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown decoding strategy {self.strategy!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


def _prepare(model, prefix, table, cfg: DecodeConfig):
    ids = tuple(int(i) for i in (prefix.ids if hasattr(prefix, "ids") else prefix))
    limit = cfg.max_len
    config = getattr(model, "config", None)
    if config is not None and hasattr(config, "max_seq_len"):
        limit = min(limit, config.max_seq_len)
    if table is not None and hasattr(model, "encode"):
        table = model.encode(table)
    return ids, limit, table


def greedy_decode(model, prefix, table=None, cfg: Optional[DecodeConfig] = None) -> TokenSeq:
    """Append the argmax token (lowest id on ties) until ``<eos>`` or the length cap.

    Returns only the generated suffix, without ``<eos>``.
    """
    cfg = cfg or DecodeConfig(strategy="greedy")
    with no_grad():
        ids, limit, table = _prepare(model, prefix, table, cfg)
        out: List[int] = []
        while len(ids) + len(out) < limit:
            tok = int(np.argmax(model.next_token_logprobs(ids + tuple(out), table)))
            if tok == EOS:
                break
            out.append(tok)
    return TokenSeq(tuple(out))


def _final_score(score: float, length: int, alpha: float) -> float:
    if alpha == 0.0:
        return score
    return score / (max(length, 1) ** alpha)


def beam_search_scored(model, prefix, table=None,
                       cfg: Optional[DecodeConfig] = None) -> Tuple[TokenSeq, float]:
    """Beam search over summed token log-probabilities.

    Candidates are ranked by score, ties broken by lexicographic token ids.
    A hypothesis that emits ``<eos>`` is frozen in the finished pool (it still
    occupied a beam slot at that step).  Hypotheses still alive when the length
    cap is hit join the pool as-is.  Returns the best pooled hypothesis
    (suffix without ``<eos>``) and its raw log-probability.
    """
    cfg = cfg or DecodeConfig()
    width = cfg.beam_width
    with no_grad():
        ids, limit, table = _prepare(model, prefix, table, cfg)
        live: List[Tuple[float, tuple]] = [(0.0, ())]
        finished: List[Tuple[float, tuple, int]] = []  # (score, tokens, generated length)
        for _ in range(max(limit - len(ids), 0)):
            cands = []
            for score, toks in live:
                lp = model.next_token_logprobs(ids + toks, table)
                cands.extend((score + float(lp[v]), toks + (v,)) for v in range(len(lp)))
            cands.sort(key=lambda c: (-c[0], c[1]))
            live = []
            for score, toks in cands[:width]:
                if toks[-1] == EOS:
                    finished.append((score, toks[:-1], len(toks)))
                else:
                    live.append((score, toks))
            if not live:
                break
            if cfg.length_penalty_alpha == 0.0 and finished:
                # log-probs are <= 0 so live scores can only fall further
                if max(f[0] for f in finished) >= live[0][0]:
                    live = []
                    break
        finished.extend((score, toks, len(toks)) for score, toks in live)
    if not finished:
        return TokenSeq(()), 0.0
    best = min(finished, key=lambda f: (-_final_score(f[0], f[2], cfg.length_penalty_alpha), f[1]))
    return TokenSeq(tuple(best[1])), best[0]


def beam_search(model, prefix, table=None, cfg: Optional[DecodeConfig] = None) -> TokenSeq:
    return beam_search_scored(model, prefix, table, cfg)[0]


def decode(model, prefix, table=None, cfg: Optional[DecodeConfig] = None) -> TokenSeq:
    cfg = cfg or DecodeConfig()
    if cfg.strategy == "greedy":
        return greedy_decode(model, prefix, table, cfg)
    return beam_search(model, prefix, table, cfg)


def sequence_logprob(model, prefix: Sequence[int], suffix: Sequence[int], table=None,
                     add_eos: bool = True) -> float:
    """Total log-probability of ``suffix`` (plus ``<eos>``) after ``prefix``."""
    with no_grad():
        if table is not None and hasattr(model, "encode"):
            table = model.encode(table)
        ids = tuple(prefix)
        total = 0.0
        for tok in tuple(suffix) + ((EOS,) if add_eos else ()):
            total += float(model.next_token_logprobs(ids, table)[tok])
            ids += (tok,)
    return total
