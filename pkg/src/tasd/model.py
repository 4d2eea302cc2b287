"""Table-structure-aware text generation model.

A small pre-norm decoder-only transformer whose final hidden states are fused
with a hierarchical table encoding before the output head:

1. cell tokens (all views concatenated) are embedded with the shared token
   table and attended within each cell, then mean pooled;
2. pooled cells receive row/column position embeddings and attend across the
   whole table;
3. decoder hidden states query the table cells and the result is added back
   onto the hidden states.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .table import Table, cell_multiview_sequence, view_count
from .text import Vocab

TRACE_KEYS = ("backbone", "mha1", "mha2", "mha3")


@dataclass
class TasatgConfig:
    vocab_size: int
    d: int = 64
    h: int = 4
    n_layers: int = 2
    view_len: int = 4
    n_views: int = 2
    max_seq_len: int = 128
    m_max: int = 8
    n_max: int = 8
    ffn_mult: int = 4
    init_std: float = 0.02
    seed: int = 0
    merge_numeric_headers: bool = False

    def __post_init__(self):
        for name in ("vocab_size", "d", "h", "n_layers", "view_len", "n_views",
                     "max_seq_len", "m_max", "n_max", "ffn_mult"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        if self.d % self.h:
            raise ValueError(f"model width d={self.d} is not divisible by h={self.h}")

    @property
    def s(self) -> int:
        """Length of one cell's concatenated multi-view sequence."""
        return self.n_views * self.view_len

    def to_dict(self) -> dict:
        return asdict(self)


class TableTooLarge(ValueError):
    pass


class TasatgModel:
    """Parameter bundle plus the vocabulary used to read table cells."""

    def __init__(self, config: TasatgConfig, vocab: Optional[Vocab] = None):
        self.config = config
        self.vocab = vocab
        if vocab is not None and len(vocab) != config.vocab_size:
            raise ValueError(f"vocab has {len(vocab)} tokens but config expects {config.vocab_size}")
        self.params: Dict[str, Tensor] = {}
        self.trained = False
        self._init_params(np.random.default_rng(config.seed))

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        d, std = c.d, c.init_std

        def normal(name, *shape):
            self.params[name] = ag.parameter(rng.normal(0.0, std, size=shape))

        def const(name, value, *shape):
            self.params[name] = ag.parameter(np.full(shape, value, dtype=np.float64))

        normal("tok_emb", c.vocab_size, d)
        normal("pos_emb", c.max_seq_len, d)
        for i in range(c.n_layers):
            p = f"blocks.{i}."
            const(p + "ln1.g", 1.0, d)
            const(p + "ln1.b", 0.0, d)
            for w in ("wq", "wk", "wv", "wo"):
                normal(p + "attn." + w, d, d)
            const(p + "ln2.g", 1.0, d)
            const(p + "ln2.b", 0.0, d)
            normal(p + "ffn.w1", d, c.ffn_mult * d)
            const(p + "ffn.b1", 0.0, c.ffn_mult * d)
            normal(p + "ffn.w2", c.ffn_mult * d, d)
            const(p + "ffn.b2", 0.0, d)
        const("ln_f.g", 1.0, d)
        const("ln_f.b", 0.0, d)
        normal("ctpe", c.s, d)
        normal("tpe_row", c.m_max, d)
        normal("tpe_col", c.n_max, d)
        for layer in ("mha1", "mha2", "mha3"):
            for w in ("wq", "wk", "wv", "wo"):
                normal(f"{layer}.{w}", d, d)
        # table fusion starts as an exact no-op
        self.params["mha3.wo"].values[:] = 0.0
        normal("lm_head", d, c.vocab_size)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in state:
                raise KeyError(f"state is missing parameter {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} does not match {p.shape}")
            p.values = arr.copy()

    def zero_grad(self) -> None:
        ag.zero_grads(self.parameters())

    # convenience wrappers
    def logits(self, ids, table=None, trace=None) -> Tensor:
        return forward_lm(ids, table, self, trace=trace)

    def encode(self, table) -> Tensor:
        """Table encoding reusable across decoding steps."""
        if isinstance(table, Tensor):
            return table
        with ag.no_grad():
            return encode_table(table, self)

    def next_token_logprobs(self, ids, table=None) -> np.ndarray:
        """Log-probabilities of the token following ``ids``.

        ``table`` may be a :class:`Table`, table ids, or an encoding from
        :meth:`encode`.
        """
        with ag.no_grad():
            if isinstance(table, Tensor):
                logits = forward_lm(ids, None, self, e2=table).values[-1]
            else:
                logits = forward_lm(ids, table, self).values[-1]
        z = logits - logits.max()
        return z - np.log(np.exp(z).sum())


# -- attention ---------------------------------------------------------------
def multi_head_attention(q_in: Tensor, kv_in: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                         wo: Tensor, h: int, scale: float, mask: Optional[np.ndarray] = None,
                         trace: Optional[list] = None) -> Tensor:
    """Multi-head attention over the last two axes; leading axes are batch axes.

    Per-head projections are column blocks of the ``d x d`` matrices.
    ``scale`` divides the query-key scores.
    """
    d = q_in.shape[-1]
    if kv_in.shape[-1] != d:
        raise ag.ShapeError(f"query width {d} does not match key/value width {kv_in.shape[-1]}")
    dk = d // h
    lead_q, lq = q_in.shape[:-2], q_in.shape[-2]
    lead_k, lk = kv_in.shape[:-2], kv_in.shape[-2]
    def heads_axes(nb):
        return tuple(range(nb)) + (nb + 1, nb, nb + 2)

    def split(x, w, lead, length):
        return ag.transpose(ag.reshape(x @ w, lead + (length, h, dk)), heads_axes(len(lead)))

    q = split(q_in, wq, lead_q, lq)
    k = split(kv_in, wk, lead_k, lk)
    v = split(kv_in, wv, lead_k, lk)
    nk = len(lead_k)
    kt = ag.transpose(k, tuple(range(nk)) + (nk, nk + 2, nk + 1))
    weights = ag.softmax(ag.scale(q @ kt, 1.0 / scale), mask)
    if trace is not None:
        trace.append(weights.values)
    heads = ag.transpose(weights @ v, heads_axes(len(lead_q)))
    return ag.reshape(heads, lead_q + (lq, d)) @ wo


def _table_mha(model: TasatgModel, layer: str, q_in, kv_in, trace=None) -> Tensor:
    p, c = model.params, model.config
    return multi_head_attention(q_in, kv_in, p[layer + ".wq"], p[layer + ".wk"], p[layer + ".wv"],
                                p[layer + ".wo"], c.h, math.sqrt(c.d), trace=trace)


# -- table encoder -----------------------------------------------------------
def table_token_ids(t: Table, vocab: Vocab, view_len: int,
                    merge_numeric_headers: bool = False) -> np.ndarray:
    """Integer array ``[m, n, s]`` of multi-view cell sequences."""
    return np.array([[cell_multiview_sequence(c, vocab, view_len, merge_numeric_headers).ids
                      for c in row] for row in t.cells], dtype=np.int64)


def _as_table_ids(t, model: TasatgModel) -> np.ndarray:
    c = model.config
    if isinstance(t, Table):
        if model.vocab is None:
            raise ValueError("model has no vocab attached; pass precomputed table ids")
        if view_count(t.schema, c.merge_numeric_headers) != c.n_views:
            raise ValueError(f"{t.schema.value} table has a different view count than "
                             f"the model's n_views={c.n_views}")
        ids = table_token_ids(t, model.vocab, c.view_len, c.merge_numeric_headers)
    else:
        ids = np.asarray(t, dtype=np.int64)
    if ids.ndim != 3:
        raise ValueError(f"table ids must be [m, n, s], got shape {ids.shape}")
    m, n, _ = ids.shape
    if m > c.m_max or n > c.n_max:
        raise TableTooLarge(f"table of size {m}x{n} exceeds the {c.m_max}x{c.n_max} limit")
    return ids


def embed_table(t, model: TasatgModel) -> Tensor:
    """Token-level table tensor ``[m, n, s, d]``."""
    ids = _as_table_ids(t, model)
    return ag.embedding(model["tok_emb"], ids)


def cell_self_attention(e0: Tensor, model: TasatgModel, trace=None) -> Tensor:
    """Within-cell self-attention then mean over the cell's tokens: ``[m, n, d]``."""
    ctpe = model["ctpe"]
    if e0.ndim != 4 or e0.shape[2:] != ctpe.shape:
        raise ag.ShapeError(f"cell tensor {e0.shape} does not match position table {ctpe.shape}")
    x = e0 + ctpe
    return ag.mean(_table_mha(model, "mha1", x, x, trace), axis=2)


def table_self_attention(e1: Tensor, model: TasatgModel, m: int, n: int, trace=None) -> Tensor:
    """Self-attention across all cells with row/column position embeddings."""
    c = model.config
    if m > c.m_max or n > c.n_max:
        raise TableTooLarge(f"table of size {m}x{n} exceeds the {c.m_max}x{c.n_max} limit")
    if e1.shape != (m, n, c.d):
        raise ag.ShapeError(f"expected cell tensor {(m, n, c.d)}, got {e1.shape}")
    rows = ag.reshape(ag.embedding(model["tpe_row"], np.arange(m)), (m, 1, c.d))
    cols = ag.reshape(ag.embedding(model["tpe_col"], np.arange(n)), (1, n, c.d))
    flat = ag.reshape(e1 + rows + cols, (m * n, c.d))
    return ag.reshape(_table_mha(model, "mha2", flat, flat, trace), (m, n, c.d))


def encode_table(t, model: TasatgModel, trace: Optional[dict] = None) -> Tensor:
    e0 = embed_table(t, model)
    m, n = e0.shape[:2]
    e1 = cell_self_attention(e0, model, None if trace is None else trace["mha1"])
    return table_self_attention(e1, model, m, n, None if trace is None else trace["mha2"])


def fuse_hidden(hid: Tensor, e2: Tensor, model: TasatgModel, trace=None) -> Tensor:
    """Cross-attend from hidden states into table cells, residual add."""
    d = model.config.d
    if hid.shape[-1] != d or e2.shape[-1] != d:
        raise ag.ShapeError(f"hidden {hid.shape} / table {e2.shape} width differs from d={d}")
    cells = ag.reshape(e2, (-1, d))
    return _table_mha(model, "mha3", hid, cells, trace) + hid


# -- decoder -----------------------------------------------------------------
class SequenceTooLong(ValueError):
    pass


def _causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), -np.inf), k=1)


def backbone_hidden(ids, model: TasatgModel, trace=None) -> Tensor:
    """Final-block hidden states ``[l, d]`` after the closing layer norm."""
    p, c = model.params, model.config
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    l = ids.shape[0]
    if l > c.max_seq_len:
        raise SequenceTooLong(f"sequence length {l} exceeds max_seq_len={c.max_seq_len}")
    if l == 0:
        raise ValueError("empty token sequence")
    x = ag.embedding(p["tok_emb"], ids) + ag.embedding(p["pos_emb"], np.arange(l))
    mask = _causal_mask(l)
    dk_scale = math.sqrt(c.d // c.h)
    for i in range(c.n_layers):
        b = f"blocks.{i}."
        a = ag.layer_norm(x, p[b + "ln1.g"], p[b + "ln1.b"])
        x = x + multi_head_attention(a, a, p[b + "attn.wq"], p[b + "attn.wk"], p[b + "attn.wv"],
                                     p[b + "attn.wo"], c.h, dk_scale, mask, trace)
        f = ag.layer_norm(x, p[b + "ln2.g"], p[b + "ln2.b"])
        f = ag.gelu(f @ p[b + "ffn.w1"] + p[b + "ffn.b1"]) @ p[b + "ffn.w2"] + p[b + "ffn.b2"]
        x = x + f
    return ag.layer_norm(x, p["ln_f.g"], p["ln_f.b"])


def new_trace() -> dict:
    return {k: [] for k in TRACE_KEYS}


def forward_lm(tokens, t, model: TasatgModel, trace: Optional[dict] = None,
               e2: Optional[Tensor] = None) -> Tensor:
    """Next-token logits ``[l, vocab_size]``; ``t=None`` runs the plain backbone.

    ``trace`` (see :func:`new_trace`) collects every attention weight array.
    A precomputed table encoding may be passed as ``e2``.
    """
    ids = tokens.ids if hasattr(tokens, "ids") else tokens
    hid = backbone_hidden(ids, model, None if trace is None else trace["backbone"])
    if t is not None or e2 is not None:
        if e2 is None:
            e2 = encode_table(t, model, trace)
        hid = fuse_hidden(hid, e2, model, None if trace is None else trace["mha3"])
    return hid @ model["lm_head"]


def lm_loss(logits: Tensor, targets, loss_mask) -> Tensor:
    """Mean next-token cross-entropy over positions flagged in ``loss_mask``.

    ``loss_mask[t]`` marks token ``targets[t]`` as a prediction target; it is
    scored with ``logits[t - 1]``.  Position 0 has no predictor and is ignored.
    """
    ids = np.asarray(targets.ids if hasattr(targets, "ids") else targets, dtype=np.int64)
    mask = np.asarray(loss_mask, dtype=bool)
    l = logits.shape[0]
    if ids.shape != (l,) or mask.shape != (l,):
        raise ValueError(f"targets {ids.shape} and mask {mask.shape} must both have length {l}")
    shifted = np.concatenate([ids[1:], [0]])
    shifted_mask = np.concatenate([mask[1:], [False]])
    if not shifted_mask.any():
        raise ValueError("loss mask selects no predictable positions")
    return ag.cross_entropy(logits, shifted, shifted_mask)
