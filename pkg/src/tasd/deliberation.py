"""Two-pass generation: a first model drafts from the serialized table, an
independent second model rewrites the draft while attending to the table.

Ablations are pure configuration:

* ``tasd``        table fusion in both passes
* ``wo_d``        first pass only
* ``wo_tas``      both passes, no table fusion anywhere
* ``wo_1st_tas``  both passes, fusion in the second pass only
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

from .data import Dataset, DatasetRecord
from .decoding import DecodeConfig, decode
from .model import TasatgConfig, TasatgModel
from .reconstruction import TrConfig
from .table import serialize
from .text import Vocab, detokenize, tokenize
from .training import (Example, TrainConfig, TrainResult, decode_prefix, make_example,
                       train_model)

log = logging.getLogger(__name__)

MODES = ("tasd", "wo_d", "wo_tas", "wo_1st_tas")
MODE_ALIASES = {"TASD": "tasd", "wo-d": "wo_d", "wo-tas": "wo_tas", "wo-1st-tas": "wo_1st_tas",
                "w/o_D": "wo_d", "w/o_TAS": "wo_tas", "w/o_1st_TAS": "wo_1st_tas"}


def normalize_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown pipeline mode {mode!r}; expected one of {MODES}")
    return mode


class UntrainedModel(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    mode: str = "tasd"
    train: TrainConfig = field(default_factory=TrainConfig)
    tr: TrConfig = field(default_factory=TrConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    draft_decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(strategy="greedy"))

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if self.train.lr <= 0:
            raise ValueError("pipeline learning rate must be positive")

    @property
    def fuse_first(self) -> bool:
        return self.mode in ("tasd", "wo_d")

    @property
    def fuse_second(self) -> bool:
        return self.mode in ("tasd", "wo_1st_tas")

    @property
    def two_pass(self) -> bool:
        return self.mode != "wo_d"


def _serialized_ids(rec: DatasetRecord, vocab: Vocab) -> tuple:
    return tokenize(serialize(rec.table).text, vocab).ids


def _examples(records, prefixes: Dict[str, tuple], model_cfg, vocab) -> List[Example]:
    return [make_example(r.id, prefixes[r.id], tokenize(r.target, vocab).ids, r.table,
                         model_cfg, vocab) for r in records]


def train_first_pass(data: Dataset, cfg: PipelineConfig, model_cfg: TasatgConfig,
                     vocab: Vocab) -> TrainResult:
    """First model: condition on the serialized table, predict the reference."""
    train, val = data.split("train"), data.split("val")
    if not train:
        raise ValueError("empty training split")
    prefixes = {r.id: _serialized_ids(r, vocab) for r in train + val}
    tr = cfg.tr if cfg.tr.active_for(1) else None
    return train_model(_examples(train, prefixes, model_cfg, vocab),
                       _examples(val, prefixes, model_cfg, vocab),
                       model_cfg, vocab, cfg.train, fuse=cfg.fuse_first, tr=tr)


def _check_trained(model: Optional[TasatgModel], name: str):
    if model is None or not getattr(model, "trained", False):
        raise UntrainedModel(f"{name} has not been trained")


def draft_for(m1: TasatgModel, table, decode_cfg: DecodeConfig, fuse: bool) -> tuple:
    prefix = decode_prefix(tokenize(serialize(table).text, m1.vocab).ids, m1.config.max_seq_len)
    return decode(m1, prefix, table if fuse else None, decode_cfg).ids


def generate_drafts(m1: TasatgModel, records, decode_cfg: DecodeConfig,
                    fuse: bool = True) -> Dict[str, tuple]:
    """Draft token ids for every record, keyed by record id."""
    _check_trained(m1, "first-pass model")
    return {r.id: draft_for(m1, r.table, decode_cfg, fuse) for r in records}


def train_second_pass(drafts: Dict[str, tuple], data: Dataset, cfg: PipelineConfig,
                      model_cfg: TasatgConfig, vocab: Vocab) -> TrainResult:
    """Second model, initialised independently: rewrite the draft into the reference."""
    train, val = data.split("train"), data.split("val")
    missing = [r.id for r in train + val if r.id not in drafts]
    if missing:
        raise KeyError(f"no draft for records {missing[:5]}")
    second_cfg = replace(model_cfg, seed=model_cfg.seed + 1)
    tr = cfg.tr if cfg.tr.active_for(2) else None
    train_cfg = replace(cfg.train, seed=cfg.train.seed + 1)
    return train_model(_examples(train, drafts, second_cfg, vocab),
                       _examples(val, drafts, second_cfg, vocab),
                       second_cfg, vocab, train_cfg, fuse=cfg.fuse_second, tr=tr)


def infer_two_pass(m1: TasatgModel, m2: Optional[TasatgModel], table,
                   cfg: PipelineConfig) -> str:
    _check_trained(m1, "first-pass model")
    draft = draft_for(m1, table, cfg.decode, cfg.fuse_first)
    if not cfg.two_pass:
        return detokenize(draft, m1.vocab)
    _check_trained(m2, "second-pass model")
    prefix = decode_prefix(draft, m2.config.max_seq_len)
    final = decode(m2, prefix, table if cfg.fuse_second else None, cfg.decode)
    return detokenize(final.ids, m2.vocab)


@dataclass
class PipelineResult:
    first: TrainResult
    second: Optional[TrainResult]
    drafts: Dict[str, tuple]

    @property
    def m1(self) -> TasatgModel:
        return self.first.model

    @property
    def m2(self) -> Optional[TasatgModel]:
        return self.second.model if self.second else None

    @property
    def final_val_loss(self) -> Optional[float]:
        return (self.second or self.first).best_val_loss


def run_pipeline(data: Dataset, cfg: PipelineConfig, model_cfg: TasatgConfig,
                 vocab: Vocab, first: Optional[TrainResult] = None) -> PipelineResult:
    """Train the configured passes.  A compatible trained first pass may be reused."""
    first = first or train_first_pass(data, cfg, model_cfg, vocab)
    if not cfg.two_pass:
        return PipelineResult(first, None, {})
    drafts = generate_drafts(first.model, data.split("train") + data.split("val"),
                             cfg.draft_decode, cfg.fuse_first)
    second = train_second_pass(drafts, data, cfg, model_cfg, vocab)
    return PipelineResult(first, second, drafts)


def save_drafts(drafts: Dict[str, tuple], vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, ids in drafts.items():
            fh.write(json.dumps({"id": rid, "draft": detokenize(ids, vocab)}) + "\n")


def load_drafts(path, vocab: Vocab) -> Dict[str, tuple]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            out[obj["id"]] = tokenize(obj["draft"], vocab).ids
    return out
