import csv
import io
import json
import re

import pytest

from hesm.decode import DecodeParams
from hesm.report import fixture_shape, improvements, render_csv, render_jsonl, run_zoo, write_artifacts
from hesm.zoo import get_fixture

PARAMS = DecodeParams(max_length=30)
NAMES = ("individual-A", "tokens-A", "mbr-A", "hesm-3-3-mbr3", "tokens-3-3")


@pytest.fixture(scope="module")
def run(small_corpus):
    fixtures = [get_fixture(n) for n in NAMES]
    return run_zoo(small_corpus[:48], small_corpus[48:], fixtures, PARAMS)


def test_rows_follow_fixture_order(run):
    names = [r.name for r in run.report.rows]
    assert names == list(NAMES) + ["oracle-all-overlap", "oracle-greedy-best"]
    assert run.report.row("individual-A").aggregate == "systems"
    assert len(run.report.row("individual-A").members) == 9
    assert run.report.row("mbr-A").cells[("RL", "f1")].n == 12


def test_outputs_cover_every_system_and_record(run):
    assert len(run.record_ids) == 12
    for name, texts in run.outputs.items():
        assert len(texts) == 12, name


def test_improvements_against_group_baseline(run):
    deltas = {d["system"]: d for d in improvements(run)}
    base = run.report.row("individual-A").cells[("RL", "f1")].mean
    assert deltas["mbr-A"]["baseline"] == "individual-A"
    assert deltas["mbr-A"]["delta_f1"] == pytest.approx(run.report.row("mbr-A").cells[("RL", "f1")].mean - base,
                                                         abs=1e-6)
    assert "individual-A" not in deltas
    assert deltas["hesm-3-3-mbr3"]["baseline"] == "tokens-3-3"


def test_text_report_layout(run, tmp_path):
    write_artifacts(run, tmp_path)
    text = (tmp_path / "report.txt").read_text(encoding="utf-8")
    assert "# decode: " in text and '"num_beams": 4' in text
    assert "Method" in text and "F1" in text and "Prec" in text and "Rec" in text
    cells = re.findall(r"\d+\.\d\d±\d+\.\d\d", text)
    assert len(cells) >= 3 * len(run.report.rows)
    assert "(3, 3) / MBR=3" in text


def test_structured_outputs(run, tmp_path):
    rows = [json.loads(line) for line in render_jsonl(run).splitlines()]
    assert len(rows) == 9 * len(run.report.rows)
    assert all(0 <= r["mean"] <= 100 and r["std"] >= 0 for r in rows)
    table = list(csv.DictReader(io.StringIO(render_csv(run))))
    assert len(table) == len(rows)


def test_artifacts_are_byte_reproducible(run, small_corpus, tmp_path):
    a = write_artifacts(run, tmp_path / "a")
    again = run_zoo(small_corpus[:48], small_corpus[48:], [get_fixture(n) for n in NAMES], PARAMS, workers=2)
    b = write_artifacts(again, tmp_path / "b")
    assert [p.relative_to(tmp_path / "a") for p in a] == [p.relative_to(tmp_path / "b") for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name
    pngs = [p for p in a if p.suffix == ".png"]
    assert len(pngs) == 2 and all(p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in pngs)


def test_fixture_shapes():
    assert fixture_shape(get_fixture("hesm-1-1-mbr9")) == "(1, 1) / MBR=9"
    # nine different leaves render differently
    assert fixture_shape(get_fixture("individual-AS")) == "9 systems"
    assert fixture_shape(get_fixture("tokens-1-1")) == "(1, 1) ×9"


def test_no_oracles(small_corpus):
    out = run_zoo(small_corpus[:48], small_corpus[48:52], [get_fixture("tokens-A")], PARAMS, oracles=False)
    assert [r.name for r in out.report.rows] == ["tokens-A"]
