"""Seeded training loop shared by both decoding passes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import autograd as ag
from .model import (TasatgConfig, TasatgModel, cell_self_attention, embed_table, forward_lm,
                    lm_loss, table_self_attention, table_token_ids)
from .optim import Adam
from .reconstruction import ReconstructionHead, TrConfig, combined_loss, corrupt, tr_loss
from .text import BOS, EOS, Vocab

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-5
    epochs: int = 20
    patience: Optional[int] = 5
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class Example:
    id: str
    ids: np.ndarray
    mask: np.ndarray
    table_ids: Optional[np.ndarray] = None


@dataclass
class TrainResult:
    model: TasatgModel
    history: List[dict] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> Optional[float]:
        losses = [h["val_loss"] for h in self.history if h.get("val_loss") is not None]
        return min(losses) if losses else None


def prefix_cap(max_seq_len: int) -> int:
    """Number of conditioning tokens kept; the rest of the window is for output."""
    return max(max_seq_len // 2 - 2, 0)


def decode_prefix(prefix_ids: Sequence[int], max_seq_len: int) -> tuple:
    return (BOS,) + tuple(prefix_ids)[:prefix_cap(max_seq_len)] + (BOS,)


def build_sequence(prefix_ids: Sequence[int], target_ids: Sequence[int], max_seq_len: int):
    """``<bos> prefix <bos> target <eos>`` with the loss mask on the target part."""
    head = decode_prefix(prefix_ids, max_seq_len)
    tail = (tuple(target_ids) + (EOS,))[:max(max_seq_len - len(head), 0)]
    ids = np.array(head + tail, dtype=np.int64)
    mask = np.array([False] * len(head) + [True] * len(tail))
    return ids, mask


def make_example(record_id: str, prefix_ids, target_ids, table, config: TasatgConfig,
                 vocab: Vocab) -> Example:
    ids, mask = build_sequence(prefix_ids, target_ids, config.max_seq_len)
    tids = None
    if table is not None:
        tids = table_token_ids(table, vocab, config.view_len, config.merge_numeric_headers)
    return Example(record_id, ids, mask, tids)


def example_loss(model: TasatgModel, ex: Example, fuse: bool) -> ag.Tensor:
    table = ex.table_ids if fuse else None
    return lm_loss(forward_lm(ex.ids, table, model), ex.ids, ex.mask)


def reconstruction_loss(model: TasatgModel, head: ReconstructionHead, table_ids, tr: TrConfig,
                        rng: np.random.Generator):
    """TRLoss for one table.  Returns ``(loss, clean e2)`` so the caller can reuse e2."""
    e1 = cell_self_attention(embed_table(table_ids, model), model)
    m, n = e1.shape[:2]
    e2 = table_self_attention(e1, model, m, n)
    if tr.mask_stage == "e1":
        masked, mask = corrupt(e1, tr.rho, rng, lambda x: table_self_attention(x, model, m, n))
    else:
        masked, mask = corrupt(e2, tr.rho, rng)
    return tr_loss(head(masked), e2.detach(), mask, tr.masked_only), e2


def evaluate_loss(model: TasatgModel, examples: Sequence[Example], fuse: bool) -> float:
    with ag.no_grad():
        return float(np.mean([example_loss(model, ex, fuse).item() for ex in examples]))


def train_model(train: Sequence[Example], val: Sequence[Example], model_cfg: TasatgConfig,
                vocab: Optional[Vocab], cfg: TrainConfig, fuse: bool = True,
                tr: Optional[TrConfig] = None) -> TrainResult:
    """Adam on the target-token loss, one example per step.

    With a validation set the parameters of the best validation epoch are
    kept and training stops after ``patience`` epochs without improvement;
    without one the final parameters are kept.
    """
    if not train:
        raise ValueError("training split is empty")
    model = TasatgModel(model_cfg, vocab)
    use_tr = fuse and tr is not None and tr.enabled
    rng = np.random.default_rng(cfg.seed)
    head = None
    params = model.parameters()
    if use_tr:
        head = ReconstructionHead(model_cfg.d, tr.hidden or model_cfg.d, rng, model_cfg.init_std)
        params = params + head.parameters()
    opt = Adam(params, lr=cfg.lr)
    result = TrainResult(model)
    best_state, best_val, stale = model.state_dict(), float("inf"), 0

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for i in rng.permutation(len(train)):
            ex = train[i]
            opt.zero_grad()
            if use_tr:
                rec, e2 = reconstruction_loss(model, head, ex.table_ids, tr, rng)
                lm = lm_loss(forward_lm(ex.ids, None, model, e2=e2), ex.ids, ex.mask)
                loss = combined_loss(lm, rec, tr.lam)
                losses.append(lm.item())
            else:
                loss = example_loss(model, ex, fuse)
                losses.append(loss.item())
            loss.backward()
            opt.step()
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": None}
        if val:
            entry["val_loss"] = evaluate_loss(model, val, fuse)
        result.history.append(entry)
        log.info("epoch %d train %.4f val %s", epoch, entry["train_loss"], entry["val_loss"])
        if val:
            if entry["val_loss"] < best_val:
                best_val, best_state, stale = entry["val_loss"], model.state_dict(), 0
                result.best_epoch = epoch
            else:
                stale += 1
                if cfg.patience and stale >= cfg.patience:
                    break
        else:
            result.best_epoch = epoch
    if val:
        model.load_state_dict(best_state)
    model.trained = True
    return result
