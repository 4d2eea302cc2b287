import numpy as np
import pytest

from tasd.checkpoint import (MAGIC, CheckpointError, dumps_checkpoint, load_checkpoint,
                             loads_checkpoint, save_checkpoint)
from tasd.model import TasatgConfig, TasatgModel
from tasd.text import build_vocab


def model(d=16, seed=0):
    vocab = build_vocab(["a b c d e f"], 1)
    return TasatgModel(TasatgConfig(vocab_size=len(vocab), d=d, h=2, max_seq_len=16, seed=seed), vocab)


def test_round_trip_is_bit_exact(tmp_path):
    m = model()
    m["mha3.wo"].values = np.random.default_rng(0).normal(size=m["mha3.wo"].shape)
    m.trained = True
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt", vocab=m.vocab)
    assert back.trained and back.config == m.config
    for name, p in m.named_parameters():
        assert p.values.tobytes() == back[name].values.tobytes()
    assert dumps_checkpoint(back) == dumps_checkpoint(m)


def test_layout_starts_with_magic():
    blob = dumps_checkpoint(model())
    assert blob.startswith(MAGIC)


def test_bad_magic():
    blob = bytearray(dumps_checkpoint(model()))
    blob[0:1] = b"X"
    with pytest.raises(CheckpointError, match="magic"):
        loads_checkpoint(bytes(blob))


def test_truncated():
    blob = dumps_checkpoint(model())
    with pytest.raises(CheckpointError, match="truncated"):
        loads_checkpoint(blob[:-8])
    with pytest.raises(CheckpointError):
        loads_checkpoint(blob[:7])
    with pytest.raises(CheckpointError, match="trailing"):
        loads_checkpoint(blob + b"\0" * 8)


def test_shape_mismatch_names_parameter():
    small = TasatgConfig(vocab_size=10, d=8, h=2, max_seq_len=16)
    with pytest.raises(CheckpointError, match="tok_emb"):
        loads_checkpoint(dumps_checkpoint(model(d=16)), config=small)


def test_vocab_mismatch():
    other = build_vocab(["a b c d e g"], 1)
    with pytest.raises(CheckpointError, match="vocabulary"):
        loads_checkpoint(dumps_checkpoint(model()), vocab=other)


def test_same_seed_same_bytes():
    assert dumps_checkpoint(model(seed=3)) == dumps_checkpoint(model(seed=3))
    assert dumps_checkpoint(model(seed=3)) != dumps_checkpoint(model(seed=4))
