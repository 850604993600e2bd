import json
import subprocess
import sys
from pathlib import Path

import pytest

from hesm.cli import EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_SPEC, EXIT_USAGE, main

SHORT = ["--max_length", "30"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--size", "40", "--eval-size", "10", "--seed", "3", "--out-dir", str(root)]) == EXIT_OK
    return root


def _outputs(directory: Path) -> dict[str, bytes]:
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def _snapshot(corpus):
    return {p.name: p.read_bytes() for p in corpus.iterdir()}


def test_synth_writes_split(corpus):
    assert len((corpus / "train.jsonl").read_text().splitlines()) == 30
    assert len((corpus / "eval.jsonl").read_text().splitlines()) == 10
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert manifest["argv"][0] == "synth" and "--seed" in manifest["argv"]
    assert set(manifest["outputs"]) == {"notes.jsonl", "train.jsonl", "eval.jsonl"}


def test_rouge(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("the cat\na b c\n")
    (tmp_path / "r.txt").write_text("the cat sat\na x c\n")
    code = main(["rouge", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "r.txt"), "--variant", "L",
                 "--out-dir", str(tmp_path / "o")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("RL  precision=0.833333  recall=0.666667")
    rows = [json.loads(line) for line in (tmp_path / "o" / "scores.jsonl").read_text().splitlines()]
    assert rows[0]["f1"] == pytest.approx(0.8)
    (tmp_path / "r.txt").write_text("only one line\n")
    assert main(["rouge", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "r.txt"),
                 "--out-dir", str(tmp_path / "o")]) == EXIT_DATA


def test_oracle(corpus, tmp_path, capsys):
    before = _snapshot(corpus)
    assert main(["oracle", "--data", str(corpus / "eval.jsonl"), "--mode", "all-overlap",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    assert "R1" in capsys.readouterr().out
    assert len((tmp_path / "outputs.jsonl").read_text().splitlines()) == 10
    assert _snapshot(corpus) == before


def test_train_decode_and_run_with_model_dir(corpus, tmp_path, capsys):
    assert main(["train", "--data", str(corpus / "train.jsonl"), "--fields", "A", "--seed", "2",
                 "--out-dir", str(tmp_path / "t")]) == EXIT_OK
    model = tmp_path / "t" / "model.json"
    for method in ("beam", "greedy", "sample"):
        assert main(["decode", "--model", str(model), "--data", str(corpus / "eval.jsonl"), "--method", method,
                     *SHORT, "--out-dir", str(tmp_path / method)]) == EXIT_OK
        assert len((tmp_path / method / "outputs.jsonl").read_text().splitlines()) == 10
    models = tmp_path / "models"
    models.mkdir()
    (models / "m1.json").write_bytes(model.read_bytes())
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "mbr", "children": [{"kind": "leaf", "model": "m1"},
                                                            {"kind": "token_ensemble",
                                                             "children": [{"kind": "leaf", "model": "m1"}]}]}))
    assert main(["hesm", "run", "--spec", str(spec), "--models", str(models), "--data", str(corpus / "eval.jsonl"),
                 *SHORT, "--out-dir", str(tmp_path / "run")]) == EXIT_OK
    beam = [json.loads(l)["summary"] for l in (tmp_path / "beam" / "outputs.jsonl").read_text().splitlines()]
    run = [json.loads(l)["summary"] for l in (tmp_path / "run" / "outputs.jsonl").read_text().splitlines()]
    # A+S+O input with an A-field model decodes the same as the single model
    assert run == beam


def test_mbr(tmp_path, capsys):
    (tmp_path / "c.txt").write_text('a b\n{"text": "a b", "system": "x"}\n\nc\n')
    assert main(["mbr", "--candidates", str(tmp_path / "c.txt"), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    assert capsys.readouterr().out.startswith("selected 0: a b\nscores: 2.000000 2.000000 1.000000")
    result = json.loads((tmp_path / "o" / "result.json").read_text())
    assert result["labels"] == ["cand-0", "x", "cand-2"]


def test_hesm_describe_and_validate(corpus, tmp_path, capsys):
    assert main(["hesm", "describe", "--spec", "hesm-3-3-mbr3", "--out-dir", str(tmp_path / "d")]) == EXIT_OK
    assert capsys.readouterr().out == "(3, 3) / MBR=3\n"
    assert main(["hesm", "validate", "--spec", "hesm-1-1-mbr9", "--train", str(corpus / "train.jsonl"),
                 "--out-dir", str(tmp_path / "v")]) == EXIT_OK
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kind": "token_ensemble", "children": [{"kind": "mbr", "children": [
        {"kind": "leaf", "model": "θ_A-1"}]}]}))
    assert main(["hesm", "validate", "--spec", str(bad), "--train", str(corpus / "train.jsonl"),
                 "--out-dir", str(tmp_path / "v2")]) == EXIT_SPEC
    report = json.loads((tmp_path / "v2" / "validation.json").read_text())
    assert not report["ok"] and "MBR node under token ensemble" in report["violations"][0]


def test_run_is_deterministic_and_replayable(corpus, tmp_path):
    argv = ["run", "--spec", "hesm-1-1-mbr9", "--train", str(corpus / "train.jsonl"),
            "--data", str(corpus / "eval.jsonl"), "--seed", "7", *SHORT]
    assert main(argv + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(argv + ["--out-dir", str(tmp_path / "b")]) == EXIT_OK
    assert _outputs(tmp_path / "a") == _outputs(tmp_path / "b")
    assert main(["rerun", "--manifest", str(tmp_path / "a" / "manifest.json"), "--workers", "2",
                 "--out-dir", str(tmp_path / "c")]) == EXIT_OK
    assert _outputs(tmp_path / "a") == _outputs(tmp_path / "c")


def test_cv(corpus, tmp_path, capsys):
    assert main(["cv", "--data", str(corpus / "notes.jsonl"), "--spec", "tokens-A", "--k", "2", "--seed", "1",
                 *SHORT, "--out-dir", str(tmp_path)]) == EXIT_OK
    folds = json.loads((tmp_path / "folds.json").read_text())
    assert folds["sizes"] == [20, 20] and len(folds["assignment"]) == 40
    text = capsys.readouterr().out
    assert "fold-0" in text and "fold-1" in text and "across folds" in text and "pooled records" in text


def test_report_and_fixtures(tmp_path, capsys):
    argv = ["report", "--synth", "--train-size", "40", "--eval-size", "6", "--fixtures", "mbr-A,tokens-A",
            *SHORT]
    assert main(argv + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    assert "== nine θ_A (ROUGE-L) ==" in capsys.readouterr().out
    assert main(["rerun", "--manifest", str(tmp_path / "a" / "manifest.json"), "--workers", "2",
                 "--out-dir", str(tmp_path / "b")]) == EXIT_OK
    assert _outputs(tmp_path / "a") == _outputs(tmp_path / "b")
    assert (tmp_path / "a" / "figures" / "rouge_l_f1.png").is_file()
    assert main(["fixtures", "--export", "--out-dir", str(tmp_path / "f")]) == EXIT_OK
    assert (tmp_path / "f" / "specs" / "unpack-2.json").is_file()
    assert (tmp_path / "f" / "specs" / "individual-A-9.json").is_file()


@pytest.mark.parametrize("argv,code", [
    (["nosuch"], EXIT_USAGE),
    (["rouge", "--hyp", "x"], EXIT_USAGE),
    (["mbr", "--candidates", "/nonexistent/c.txt"], EXIT_IO),
    (["hesm", "describe", "--spec", "/nonexistent/s.json"], EXIT_IO),
    (["hesm", "describe", "--spec", "no-such-fixture"], EXIT_SPEC),
    (["hesm", "describe", "--spec", "individual-A"], EXIT_SPEC),
    (["report", "--fixtures", "nope", "--synth", "--train-size", "5", "--eval-size", "2"], EXIT_SPEC),
    (["report"], EXIT_USAGE),
    (["synth", "--size", "3", "--eval-size", "3"], EXIT_USAGE),
])
def test_exit_codes(argv, code, tmp_path):
    assert main(argv + ["--out-dir", str(tmp_path)] if argv[0] != "nosuch" else argv) == code


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x"}\n')
    assert main(["oracle", "--data", str(bad), "--out-dir", str(tmp_path / "o")]) == EXIT_DATA
    spec = tmp_path / "s.json"
    spec.write_text("{")
    assert main(["hesm", "describe", "--spec", str(spec), "--out-dir", str(tmp_path / "s")]) == EXIT_SPEC
    assert main(["hesm", "run", "--spec", "tokens-A", "--out-dir", str(tmp_path / "r")]) == EXIT_USAGE


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "hesm", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("hesm ")
