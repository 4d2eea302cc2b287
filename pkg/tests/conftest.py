import numpy as np
import pytest

from tasd.table import Schema, Table
from tasd.text import build_vocab


def central_difference(f, x: np.ndarray, h: float = 1e-6, coords=None) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in (range(flat.size) if coords is None else coords):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Infinity-norm relative error, ``max|a - n| / max(max|a|, max|n|)``."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture
def open_table():
    return Table.make(Schema.OPEN, [[{"header": "year", "value": "1999"},
                                     {"header": "club", "value": "ajax"}],
                                    [{"header": "year", "value": "2001"},
                                     {"header": "club", "value": "porto"}]],
                      {"page_title": "p", "section_title": "s", "section_text": "t"})


@pytest.fixture
def open_vocab(open_table):
    from tasd.table import serialize
    return build_vocab([serialize(open_table).text, "extra words here"])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
