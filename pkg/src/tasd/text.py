"""Word-level tokenizer and vocabulary shared by the serializers, model and metrics."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN_RE = re.compile(r"[.,;:()]|[^\s.,;:()]+")


def split_words(text: str) -> List[str]:
    """Lowercase ``text`` and split it into words and standalone punctuation."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    tokens: tuple
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise ValueError(f"vocab must start with reserved tokens {RESERVED}")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("vocab contains duplicate tokens")
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def dumps(self) -> str:
        return "".join(tok + "\n" for tok in self.tokens)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple
    text_origin: Optional[str] = None

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __getitem__(self, i):
        return self.ids[i]


def build_vocab(corpus: Sequence[str], min_count: int = 1) -> Vocab:
    """Collect tokens seen at least ``min_count`` times.

    Order is count descending then token ascending, so the same corpus always
    yields the same ids.
    """
    if not corpus:
        raise ValueError("corpus must be nonempty")
    counts = Counter(tok for line in corpus for tok in split_words(line))
    for tok in RESERVED:
        counts.pop(tok, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocab(RESERVED + tuple(kept))


def tokenize(text: str, vocab: Vocab) -> TokenSeq:
    return TokenSeq(tuple(vocab.id(tok) for tok in split_words(text)), text_origin=text)


def detokenize(ids: Iterable[int], vocab: Vocab) -> str:
    words = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise IndexError(f"token id {i} outside vocabulary of size {len(vocab)}")
        if i in (PAD, BOS, EOS):
            continue
        words.append(vocab.tokens[i])
    return " ".join(words)
