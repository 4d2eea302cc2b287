"""Command line entry point: ``tasd synth|train|generate|evaluate|serialize``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, HarnessConfig
from .data import Dataset, DatasetError, load_dataset, parse_record, synth_dataset
from .decoding import DecodeConfig
from .deliberation import (MODE_ALIASES, MODES, UntrainedModel, infer_two_pass, run_pipeline,
                           save_drafts)
from .metrics import evaluate_texts
from .table import Schema, TableError, serialize, view_count
from .text import Vocab

log = logging.getLogger("tasd")

TR_FLAGS = {"on": (True, "both"), "off": (False, None), "first": (True, "first"),
            "second": (True, "second")}


class CliError(Exception):
    pass


def _schema_of(ds: Dataset) -> Schema:
    schemas = {r.table.schema for r in ds}
    if len(schemas) != 1:
        raise CliError(f"dataset must use a single schema, found {sorted(s.value for s in schemas)}")
    return schemas.pop()


def _load_config(path: Optional[str]) -> HarnessConfig:
    return HarnessConfig.from_file(path) if path else HarnessConfig.from_dict({})


def _dataset(args, cfg: HarnessConfig) -> Dataset:
    d = cfg.raw["data"]
    return load_dataset(args.data, splits=d["splits"], max_rows=d["max_rows"],
                        max_cols=d["max_cols"], seed=cfg.raw["train"]["seed"])


def cmd_synth(args) -> None:
    ds = synth_dataset(args.n_records, args.rows, args.cols, args.vocab_size, args.seed,
                       schema=args.schema)
    ds.save(args.out)
    print(f"wrote {len(ds)} records to {args.out}")


def cmd_train(args) -> None:
    cfg = _load_config(args.config)
    if args.mode:
        cfg.raw["mode"] = args.mode
    if args.tr:
        enabled, which = TR_FLAGS[args.tr]
        cfg.set("tr", "enabled", enabled)
        if which:
            cfg.set("tr", "pass", which)
    if args.epochs is not None:
        cfg.set("train", "epochs", args.epochs)
    if args.seed is not None:
        cfg.set("train", "seed", args.seed)
    pipe = cfg.pipeline()
    ds = _dataset(args, cfg)
    schema = _schema_of(ds)
    vocab = ds.vocab(cfg.raw["data"]["min_count"])
    model_cfg = cfg.model_config(len(vocab), view_count(schema, cfg.raw["model"]["merge_numeric_headers"]))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_pipeline(ds, pipe, model_cfg, vocab)
    vocab.save(out / "vocab.txt")
    (out / "config.json").write_text(cfg.dumps() + "\n", encoding="utf-8")
    save_checkpoint(result.m1, out / "first.ckpt")
    history = {"first": result.first.history}
    if result.m2 is not None:
        save_checkpoint(result.m2, out / "second.ckpt")
        save_drafts(result.drafts, vocab, out / "drafts.jsonl")
        history["second"] = result.second.history
    (out / "history.json").write_text(json.dumps(history, indent=1) + "\n", encoding="utf-8")
    print(f"trained mode={pipe.mode}; artifacts in {out}")


def cmd_generate(args) -> None:
    run = Path(args.run)
    cfg = HarnessConfig.from_file(run / "config.json")
    pipe = cfg.pipeline()
    dec = pipe.decode
    strategy = "greedy" if args.greedy else "beam"
    pipe.decode = DecodeConfig(strategy=strategy, beam_width=args.beam, max_len=dec.max_len,
                               length_penalty_alpha=dec.length_penalty_alpha)
    vocab = Vocab.load(run / "vocab.txt")
    m1 = load_checkpoint(run / "first.ckpt", vocab=vocab)
    m2 = load_checkpoint(run / "second.ckpt", vocab=vocab) if pipe.two_pass else None
    ds = _dataset(args, cfg)
    records = ds.split(args.split) if args.split != "all" else list(ds)
    lines = []
    for rec in records:
        text = infer_two_pass(m1, m2, rec.table, pipe)
        lines.append(json.dumps({"id": rec.id, "text": text}))
    payload = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    if args.refs_out:
        Path(args.refs_out).write_text(
            "".join(json.dumps({"id": r.id, "text": r.target}) + "\n" for r in records),
            encoding="utf-8")


def _read_texts(path: str) -> List[tuple]:
    """``(id, text)`` pairs from JSON lines (``text`` or ``target`` field) or plain lines."""
    rows = []
    p = Path(path)
    for i, line in enumerate(p.read_text(encoding="utf-8").splitlines()):
        if p.suffix in (".jsonl", ".json"):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise CliError(f"{path}:{i + 1}: malformed JSON") from None
            text = obj.get("text", obj.get("target"))
            if text is None:
                raise CliError(f"{path}:{i + 1}: no 'text' or 'target' field")
            rows.append((str(obj.get("id", i)), text))
        else:
            rows.append((str(i), line))
    return rows


def cmd_evaluate(args) -> None:
    refs, hyps = _read_texts(args.refs), _read_texts(args.hyps)
    ref_map = dict(refs)
    if len(ref_map) == len(refs) and all(h[0] in ref_map for h in hyps) and len(hyps) == len(refs):
        pairs = [(h[1], ref_map[h[0]]) for h in hyps]
    elif len(hyps) == len(refs):
        pairs = [(h[1], r[1]) for h, r in zip(hyps, refs)]
    else:
        raise CliError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not pairs:
        raise CliError("nothing to evaluate")
    report = evaluate_texts([h for h, _ in pairs], [r for _, r in pairs])
    print(report.to_json())


def cmd_serialize(args) -> None:
    text = Path(args.table).read_text(encoding="utf-8")
    try:
        objs = [json.loads(text)]
    except json.JSONDecodeError:
        objs = [json.loads(line) for line in text.splitlines() if line.strip()]
    for i, obj in enumerate(objs):
        obj = dict(obj)
        obj.setdefault("id", str(i))
        print(serialize(parse_record(obj).table).text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tasd", description="Table-to-text generation harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic JSON-lines dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-records", type=int, default=32)
    s.add_argument("--rows", type=int, default=3)
    s.add_argument("--cols", type=int, default=3)
    s.add_argument("--vocab-size", type=int, default=100)
    s.add_argument("--schema", choices=[x.value for x in Schema], default="open")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the configured pipeline")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--mode", choices=sorted(set(MODES) | {k for k in MODE_ALIASES if "/" not in k}))
    t.add_argument("--tr", choices=sorted(TR_FLAGS))
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="decode descriptions with a trained run")
    g.add_argument("--run", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    g.add_argument("--beam", type=int, default=5)
    g.add_argument("--greedy", action="store_true")
    g.add_argument("--out")
    g.add_argument("--refs-out")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score hypotheses against references")
    e.add_argument("--refs", required=True)
    e.add_argument("--hyps", required=True)
    e.set_defaults(func=cmd_evaluate)

    z = sub.add_parser("serialize", help="print the template serialization of tables")
    z.add_argument("--table", required=True)
    z.set_defaults(func=cmd_serialize)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, ConfigError, DatasetError, TableError, CheckpointError, UntrainedModel,
            ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"tasd: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
