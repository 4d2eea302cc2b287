"""Table data model, template serialization and multi-view cell sequences."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence

from .text import PAD, TokenSeq, Vocab, tokenize


class Schema(str, enum.Enum):
    NUMERIC = "numeric"
    OPEN = "open"


VIEW_KEYS = {
    Schema.NUMERIC: ("metric", "row_header", "col_header", "value"),
    Schema.OPEN: ("header", "value"),
}
META_KEYS = {
    Schema.NUMERIC: ("table_id", "caption"),
    Schema.OPEN: ("page_title", "section_title", "section_text"),
}


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    views: tuple  # ((key, text), ...) in schema order

    @classmethod
    def make(cls, schema: Schema, views: Mapping[str, str]) -> "Cell":
        keys = VIEW_KEYS[Schema(schema)]
        if set(views) != set(keys):
            raise TableError(f"cell views {sorted(views)} do not match schema keys {list(keys)}")
        return cls(tuple((k, str(views[k])) for k in keys))

    def __getitem__(self, key: str) -> str:
        for k, v in self.views:
            if k == key:
                return v
        raise KeyError(key)

    def as_dict(self) -> dict:
        return dict(self.views)


@dataclass(frozen=True)
class Table:
    schema: Schema
    cells: tuple  # tuple of row tuples
    meta: tuple  # ((key, text), ...) in schema order

    @classmethod
    def make(cls, schema, rows: Sequence[Sequence[Mapping[str, str]]],
             meta: Mapping[str, str], record_id: str = "?") -> "Table":
        schema = Schema(schema)
        if not rows or not rows[0]:
            raise TableError(f"record {record_id}: table must have at least one row and column")
        width = len(rows[0])
        for i, row in enumerate(rows):
            if len(row) != width:
                raise TableError(f"record {record_id}: ragged rows (row {i} has "
                                 f"{len(row)} cells, expected {width})")
        missing = [k for k in META_KEYS[schema] if k not in meta]
        if missing:
            raise TableError(f"record {record_id}: missing meta keys {missing}")
        cells = tuple(tuple(c if isinstance(c, Cell) else Cell.make(schema, c) for c in row)
                      for row in rows)
        return cls(schema, cells, tuple((k, str(meta[k])) for k in META_KEYS[schema]))

    @property
    def m(self) -> int:
        return len(self.cells)

    @property
    def n(self) -> int:
        return len(self.cells[0])

    def meta_value(self, key: str) -> str:
        return dict(self.meta)[key]

    def iter_cells(self):
        """Cells in row-major order."""
        for row in self.cells:
            yield from row

    def to_json(self) -> dict:
        return {
            "schema": self.schema.value,
            "meta": dict(self.meta),
            "rows": [[{"views": c.as_dict()} for c in row] for row in self.cells],
        }


@dataclass(frozen=True)
class SerializedTable:
    text: str
    token_seq: Optional[TokenSeq] = None


_SPACES = re.compile(r"\s+")


def _finish(head: str, clauses: List[str], vocab: Optional[Vocab]) -> SerializedTable:
    text = _SPACES.sub(" ", head + ", ".join(clauses) + ".").strip()
    return SerializedTable(text, tokenize(text, vocab) if vocab is not None else None)


def serialize_numeric(t: Table, vocab: Optional[Vocab] = None) -> SerializedTable:
    """``<table_id> shows <caption>. <metric> of <header> is <value>, ... .``

    Runs of whitespace (e.g. from empty fields) collapse to one space.
    """
    if t.schema is not Schema.NUMERIC:
        raise TableError(f"serialize_numeric needs a numeric table, got {t.schema.value}")
    head = f"{t.meta_value('table_id')} shows {t.meta_value('caption')}. "
    clauses = [f"{c['metric']} of {c['row_header']} {c['col_header']} is {c['value']}"
               for c in t.iter_cells()]
    return _finish(head, clauses, vocab)


def serialize_open(t: Table, vocab: Optional[Vocab] = None) -> SerializedTable:
    """``As <page_title> <section_title>, <section_text>. <header> is <value>, ... .``"""
    if t.schema is not Schema.OPEN:
        raise TableError(f"serialize_open needs an open table, got {t.schema.value}")
    head = (f"As {t.meta_value('page_title')} {t.meta_value('section_title')}, "
            f"{t.meta_value('section_text')}. ")
    clauses = [f"{c['header']} is {c['value']}" for c in t.iter_cells()]
    return _finish(head, clauses, vocab)


def serialize(t: Table, vocab: Optional[Vocab] = None) -> SerializedTable:
    if t.schema is Schema.NUMERIC:
        return serialize_numeric(t, vocab)
    return serialize_open(t, vocab)


def cell_views(c: Cell, merge_numeric_headers: bool = False) -> List[str]:
    views = [v for _, v in c.views]
    if merge_numeric_headers and len(views) == 4:
        metric, row_h, col_h, value = views
        return [metric, f"{row_h} {col_h}", value]
    return views


def cell_multiview_sequence(c: Cell, vocab: Vocab, view_len: int,
                            merge_numeric_headers: bool = False) -> TokenSeq:
    """Concatenate each view's ids, truncated or right-padded to ``view_len``."""
    if view_len < 1:
        raise ValueError("view_len must be >= 1")
    ids: List[int] = []
    for view in cell_views(c, merge_numeric_headers):
        toks = list(tokenize(view, vocab).ids[:view_len])
        ids.extend(toks + [PAD] * (view_len - len(toks)))
    return TokenSeq(tuple(ids))


def view_count(schema: Schema, merge_numeric_headers: bool = False) -> int:
    k = len(VIEW_KEYS[Schema(schema)])
    return 3 if (merge_numeric_headers and k == 4) else k
