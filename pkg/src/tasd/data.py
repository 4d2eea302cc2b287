"""JSON-lines datasets, split assignment and deterministic synthetic tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .table import META_KEYS, Schema, Table, TableError, serialize
from .text import RESERVED, Vocab, build_vocab

SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    table: Table
    target: str

    def to_json(self) -> dict:
        return {"id": self.id, **self.table.to_json(), "target": self.target}


@dataclass
class Dataset:
    records: List[DatasetRecord]
    splits: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise DatasetError(f"duplicate record id {r.id!r}")
            seen.add(r.id)
        self._by_id = {r.id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, record_id: str) -> DatasetRecord:
        return self._by_id[record_id]

    def split(self, name: str) -> List[DatasetRecord]:
        if name not in self.splits:
            raise DatasetError(f"no {name!r} split assigned")
        return [self._by_id[i] for i in self.splits[name]]

    def assign_splits(self, ratios: Sequence[float] = (8, 1, 1), seed: int = 0,
                      shuffle: bool = True) -> "Dataset":
        """Partition record ids by ``ratios`` (train, val, test)."""
        ids = [r.id for r in self.records]
        if shuffle:
            order = np.random.default_rng(seed).permutation(len(ids))
            ids = [ids[i] for i in order]
        weights = np.asarray(ratios, dtype=float)
        if weights.shape != (3,) or (weights < 0).any() or weights.sum() == 0:
            raise DatasetError(f"split ratios must be three non-negative numbers, got {ratios}")
        cuts = np.floor(np.cumsum(weights) / weights.sum() * len(ids) + 1e-9).astype(int)
        self.splits = {"train": ids[:cuts[0]], "val": ids[cuts[0]:cuts[1]],
                       "test": ids[cuts[1]:]}
        self._check_targets()
        return self

    def assign_explicit(self, lists: Mapping[str, Sequence[str]]) -> "Dataset":
        for name, ids in lists.items():
            if name not in SPLITS:
                raise DatasetError(f"unknown split {name!r}")
            missing = [i for i in ids if i not in self._by_id]
            if missing:
                raise DatasetError(f"split {name!r} names unknown ids {missing[:5]}")
        self.splits = {name: list(lists.get(name, [])) for name in SPLITS}
        self._check_targets()
        return self

    def _check_targets(self):
        for name in ("train", "val"):
            for rid in self.splits.get(name, []):
                if not self._by_id[rid].target.strip():
                    raise DatasetError(f"record {rid!r} in {name} split has an empty target")

    def vocab(self, min_count: int = 1) -> Vocab:
        """Vocabulary over serialized tables, cell views and targets."""
        corpus = []
        for r in self.records:
            corpus.append(serialize(r.table).text)
            corpus.extend(v for c in r.table.iter_cells() for _, v in c.views)
            corpus.append(r.target)
        return build_vocab(corpus or [""], min_count)

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def parse_record(obj: Mapping, where: str = "?") -> DatasetRecord:
    if not isinstance(obj, Mapping):
        raise DatasetError(f"{where}: expected a JSON object")
    for key in ("id", "schema", "meta", "rows"):
        if key not in obj:
            raise DatasetError(f"{where}: missing field {key!r}")
    rid = str(obj["id"])
    try:
        schema = Schema(obj["schema"])
    except ValueError:
        raise DatasetError(f"record {rid!r}: unknown schema {obj['schema']!r}") from None
    rows = obj["rows"]
    if not isinstance(rows, list) or not all(isinstance(row, list) for row in rows):
        raise DatasetError(f"record {rid!r}: rows must be a list of lists")
    try:
        views = [[c["views"] for c in row] for row in rows]
        table = Table.make(schema, views, obj["meta"], record_id=rid)
    except (TableError, KeyError, TypeError) as exc:
        raise DatasetError(f"record {rid!r}: {exc}") from exc
    return DatasetRecord(rid, table, str(obj.get("target", "")))


def load_dataset(path, splits: Optional[Mapping] = None, max_rows: Optional[int] = None,
                 max_cols: Optional[int] = None, seed: int = 0) -> Dataset:
    """Read a JSON-lines dataset.

    ``splits`` is either ``{"ratios": [train, val, test]}`` or explicit id
    lists ``{"train": [...], "val": [...], "test": [...]}``; default 8:1:1.
    ``max_rows``/``max_cols`` drop tables with at least that many rows/columns
    (``8`` reproduces the "fewer than 8 rows and columns" filter).
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            rec = parse_record(obj, where=f"{path}:{lineno}")
            if max_rows is not None and rec.table.m >= max_rows:
                continue
            if max_cols is not None and rec.table.n >= max_cols:
                continue
            records.append(rec)
    ds = Dataset(records)
    splits = dict(splits or {"ratios": [8, 1, 1]})
    if "ratios" in splits:
        ds.assign_splits(splits["ratios"], seed=splits.get("seed", seed))
    else:
        ds.assign_explicit(splits)
    return ds


def synth_words(vocab_size: int, schema: Schema) -> List[str]:
    """Pool of filler words leaving room for reserved and template tokens."""
    template = {"numeric": ["shows", "of", "is", ".", ",", "table"],
                "open": ["as", "is", ".", ","]}[Schema(schema).value]
    size = vocab_size - len(RESERVED) - len(template)
    if size < 1:
        raise ValueError(f"vocab_size={vocab_size} leaves no room for cell words")
    return [f"w{i}" for i in range(size)]


def synth_dataset(n_records: int, m: int, n: int, vocab_size: int, seed: int,
                  schema="open") -> Dataset:
    """Random tables whose target is their own template serialization.

    Open tables draw one header per column; numeric tables draw one metric per
    table, a header per row and per column.  Every string is a single pool word.
    """
    if min(n_records, m, n, vocab_size) <= 0:
        raise ValueError("n_records, m, n and vocab_size must be positive")
    schema = Schema(schema)
    rng = np.random.default_rng(seed)
    words = synth_words(vocab_size, schema)

    def pick(k=None):
        idx = rng.integers(0, len(words), size=k)
        return words[idx] if k is None else [words[i] for i in idx]

    records = []
    for r in range(n_records):
        if schema is Schema.OPEN:
            meta = dict(zip(META_KEYS[schema], pick(3)))
            headers = pick(n)
            rows = [[{"header": headers[j], "value": pick()} for j in range(n)] for _ in range(m)]
        else:
            meta = {"table_id": f"table {pick()}", "caption": pick()}
            metric, row_h, col_h = pick(), pick(m), pick(n)
            rows = [[{"metric": metric, "row_header": row_h[i], "col_header": col_h[j],
                      "value": pick()} for j in range(n)] for i in range(m)]
        table = Table.make(schema, rows, meta, record_id=f"synth-{r}")
        records.append(DatasetRecord(f"synth-{r}", table, serialize(table).text))
    return Dataset(records)
