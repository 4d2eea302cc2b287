import json

import pytest

from tasd.data import Dataset, DatasetError, DatasetRecord, load_dataset, parse_record, synth_dataset
from tasd.table import Schema, serialize


def open_line(rid, rows=None, target="y"):
    rows = rows or [[{"views": {"header": "h", "value": "v"}}]]
    return json.dumps({"id": rid, "schema": "open",
                       "meta": {"page_title": "p", "section_title": "s", "section_text": "t"},
                       "rows": rows, "target": target})


def write(tmp_path, lines):
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_one_record(tmp_path):
    ds = load_dataset(write(tmp_path, [open_line("a")]), splits={"ratios": [1, 0, 0]})
    assert len(ds) == 1 and ds.split("train")[0].id == "a"


def test_malformed_json_reports_line(tmp_path):
    with pytest.raises(DatasetError, match=":2:"):
        load_dataset(write(tmp_path, [open_line("a"), "{not json"]))


def test_ragged_rows_name_record(tmp_path):
    rows = [[{"views": {"header": "h", "value": "v"}}] * 2, [{"views": {"header": "h", "value": "v"}}]]
    with pytest.raises(DatasetError, match="'bad'"):
        load_dataset(write(tmp_path, [open_line("bad", rows)]))


def test_unknown_schema(tmp_path):
    obj = json.loads(open_line("z"))
    obj["schema"] = "chart"
    with pytest.raises(DatasetError, match="unknown schema"):
        load_dataset(write(tmp_path, [json.dumps(obj)]))


def test_size_filter_drops_large_tables(tmp_path):
    cell = {"views": {"header": "h", "value": "v"}}
    lines = [open_line("small", [[cell] * 7] * 7), open_line("tall", [[cell]] * 8),
             open_line("wide", [[cell] * 8])]
    ds = load_dataset(write(tmp_path, lines), splits={"ratios": [1, 0, 0]}, max_rows=8, max_cols=8)
    assert [r.id for r in ds] == ["small"]


def test_explicit_splits(tmp_path):
    lines = [open_line(str(i)) for i in range(4)]
    ds = load_dataset(write(tmp_path, lines), splits={"train": ["0", "1"], "val": ["2"], "test": ["3"]})
    assert [r.id for r in ds.split("val")] == ["2"]
    with pytest.raises(DatasetError):
        load_dataset(write(tmp_path, lines), splits={"train": ["9"]})


def test_ratio_splits_partition_ids():
    ds = synth_dataset(20, 2, 2, 40, 0).assign_splits((8, 1, 1), seed=3)
    parts = [ds.splits[k] for k in ("train", "val", "test")]
    assert [len(p) for p in parts] == [16, 2, 2]
    assert sorted(sum(parts, [])) == sorted(r.id for r in ds)


def test_duplicate_ids_and_empty_targets():
    rec = parse_record(json.loads(open_line("a")))
    with pytest.raises(DatasetError, match="duplicate"):
        Dataset([rec, rec])
    empty = parse_record(json.loads(open_line("e", target=" ")))
    with pytest.raises(DatasetError, match="empty target"):
        Dataset([empty]).assign_splits((1, 0, 0))
    Dataset([empty]).assign_splits((0, 0, 1))


def test_synth_is_deterministic_and_self_describing():
    a, b = synth_dataset(32, 3, 3, 100, 7), synth_dataset(32, 3, 3, 100, 7)
    assert a.dumps() == b.dumps()
    assert len(a.dumps().splitlines()) == 32
    assert all(r.target == serialize(r.table).text for r in a)
    assert synth_dataset(4, 3, 3, 100, 8).dumps() != a.dumps()
    assert len(a.vocab()) <= 100


def test_synth_numeric_schema():
    ds = synth_dataset(3, 2, 3, 60, 0, schema="numeric")
    t = ds.records[0].table
    assert t.schema is Schema.NUMERIC and (t.m, t.n) == (2, 3)
    assert ds.records[0].target.startswith("table w")
    assert len(ds.vocab()) <= 60


def test_synth_rejects_bad_sizes():
    with pytest.raises(ValueError):
        synth_dataset(0, 3, 3, 100, 0)
    with pytest.raises(ValueError):
        synth_dataset(2, 3, 3, 8, 0)


def test_save_and_reload(tmp_path):
    ds = synth_dataset(5, 2, 2, 40, 1)
    ds.save(tmp_path / "s.jsonl")
    back = load_dataset(tmp_path / "s.jsonl")
    assert [r.to_json() for r in back] == [r.to_json() for r in ds]
    assert isinstance(back.records[0], DatasetRecord)
