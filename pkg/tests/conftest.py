import io

import numpy as np
import pytest

from ntuplex.eventfmt import BytesSource, NTFWriter, Schema, VarColumn
from ntuplex.remotefs import serve


def write_bytes(schema: Schema, columns: dict, **kw) -> bytes:
    buf = io.BytesIO()
    with NTFWriter(buf, schema, **kw) as w:
        w.append_columns(columns)
    return buf.getvalue()


def source_of(schema: Schema, columns: dict, **kw) -> BytesSource:
    return BytesSource(write_bytes(schema, columns, **kw))


def bits(col):
    """Bit patterns of a column, so NaN payloads and signed zeros compare exactly."""
    if isinstance(col, VarColumn):
        return (col.lengths().tolist(), col.flat_values().view("<u4").tolist())
    arr = np.asarray(col)
    return arr.view(f"<u{arr.dtype.itemsize}").tolist()


@pytest.fixture
def server(tmp_path):
    root = tmp_path / "export"
    root.mkdir()
    srv = serve(root)
    try:
        yield srv
    finally:
        srv.shutdown()


def sequential_fill(paths, spec, predicate=None):
    """Row-at-a-time oracle: one aggregator, one event after another, every file in order."""
    from ntuplex.aggregate import fill, zero
    from ntuplex.eventfmt import FileSource, read_table
    from ntuplex.expr import evaluate, parse_expr

    pred = parse_expr(predicate) if isinstance(predicate, str) else predicate
    agg = zero(spec)
    for path in paths:
        with FileSource(path) as src:
            table = read_table(src)
        for i in range(table.row_count):
            row = {n: table.columns[n][i] for n in table.names}
            if pred is None or evaluate(pred, row):
                fill(agg, row)
    return agg


def assert_close(a, b, rel=1e-9, path="$"):
    """Structural comparison of two aggregator JSON documents with a relative tolerance on floats."""
    if isinstance(a, dict):
        assert isinstance(b, dict) and a.keys() == b.keys(), path
        for k in a:
            assert_close(a[k], b[k], rel, f"{path}.{k}")
    elif isinstance(a, list):
        assert isinstance(b, list) and len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            assert_close(x, y, rel, f"{path}[{i}]")
    elif isinstance(a, float) or isinstance(b, float):
        if a != a:
            assert b != b, path
        else:
            assert a == b or abs(a - b) <= rel * max(abs(a), abs(b)), (path, a, b)
    else:
        assert a == b, path


# -- acceptance reporting -----------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "notes": [], "seconds": 0.0})
    entry["passed"] = entry["passed"] and report.passed
    entry["seconds"] += report.duration
    entry["notes"].extend(v for k, v in item.user_properties if k == "criterion_note")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        verdict = "PASS" if e["passed"] else "FAIL"
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(
            f"[{verdict}] criterion {number}: {e['title']} ({e['seconds']:.1f} s){' | ' + notes if notes else ''}")


@pytest.fixture
def criterion_note(record_property):
    """Attach a measured figure to the criterion's summary line."""
    def note(text):
        record_property("criterion_note", text)
        print(text)
    return note
