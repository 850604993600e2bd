"""Command-line entry point: ``hesm <command> [options]``.

Every command writes its artifacts and a ``manifest.json`` into
``--out-dir`` (default ``hesm_runs/<command>``). The manifest records the
canonical argument list, the resolved configuration and sha256 digests of
inputs and outputs. ``hesm rerun --manifest m.json`` replays a run, and the
replay produces byte-identical artifacts at any ``--workers`` setting.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 unreadable
or unwritable file, 4 invalid specification, 5 invalid data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Sequence

from hesm import __version__
from hesm.decode import DecodeParams, beam_search, greedy_search, sample_sequence
from hesm.harness import (SECTIONS, EvalReport, SchemaError, assemble_input, decode_specs, format_fields,
                          kfold_split, load_jsonl, oracle_system, parse_fields, save_jsonl, score_outputs,
                          synth_corpus)
from hesm.hierarchy import ModelRegistry, SpecError, describe_spec, dump_spec, leaves, load_spec, validate_spec
from hesm.mbr import Reward, mbr_select, read_candidates
from hesm.model import VocabMismatchError, load_model, train_copymix
from hesm.rouge import STANDARD_VARIANTS, RougeVariant, score
from hesm.zoo import build_registry_for, get_fixture, list_fixtures

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SPEC = 4
EXIT_DATA = 5

DEFAULTS = DecodeParams()
# arguments that never change artifacts
UNRECORDED = {"out_dir", "workers", "command", "handler"}
# arguments naming input files or directories, digested into the manifest
INPUT_ARGS = ("hyp", "ref", "data", "train", "model", "candidates", "models", "spec")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


def _digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _digest_path(path: Path) -> str:
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(f.relative_to(path).as_posix().encode())
            h.update(_digest_bytes(f.read_bytes()).encode())
        return h.hexdigest()
    return _digest_bytes(path.read_bytes())


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None


def _load_records(path: str):
    if not Path(path).is_file():
        raise CliError(f"cannot read {path}: no such file", EXIT_IO)
    return load_jsonl(path)


def _params(args) -> DecodeParams:
    return DecodeParams(args.num_beams, args.length_penalty, args.min_length, args.max_length,
                        args.no_repeat_ngram_size)


def _resolve_spec(ref: str):
    """A spec file path, or the name of a checked-in fixture (single-system fixtures only)."""
    path = Path(ref)
    if path.is_file():
        return load_spec(path), _read_text(ref)
    try:
        fixture = get_fixture(ref)
    except KeyError:
        if path.suffix or "/" in ref:
            raise CliError(f"cannot read {ref}: no such file", EXIT_IO) from None
        raise CliError(f"{ref!r} is neither a spec file nor a fixture name", EXIT_SPEC) from None
    try:
        spec = fixture.spec
    except ValueError as exc:
        raise CliError(str(exc), EXIT_SPEC) from None
    return spec, dump_spec(spec)


def _registry(args, specs, params) -> ModelRegistry:
    if args.models:
        directory = Path(args.models)
        if not directory.is_dir():
            raise CliError(f"cannot read {directory}: not a directory", EXIT_IO)
        registry = ModelRegistry()
        for path in sorted(directory.glob("*.json")):
            registry.register(path.stem, load_model(path))
        return registry
    if args.train:
        return build_registry_for(specs, _load_records(args.train), args.seed, params)
    raise CliError("need --models DIR or --train JSONL to resolve model ids", EXIT_USAGE)


def _write(out_dir: Path, name: str, text: str, written: dict) -> Path:
    path = out_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    written[name] = path
    return path


def _jsonl(objs) -> str:
    return "".join(json.dumps(o, ensure_ascii=False, sort_keys=True) + "\n" for o in objs)


def _report_table(report: EvalReport) -> str:
    lines = []
    for row in report.rows:
        cells = "  ".join(f"{v} {row.cells[(v, 'f1')].format()}" for v in ("R1", "R2", "RL"))
        lines.append(f"{row.display}: {cells}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands; each returns the text printed to stdout


def cmd_rouge(args, out_dir: Path, written: dict) -> str:
    hyps = _read_text(args.hyp).splitlines()
    refs = _read_text(args.ref).splitlines()
    if len(hyps) != len(refs):
        raise CliError(f"--hyp has {len(hyps)} lines but --ref has {len(refs)}", EXIT_DATA)
    variants = STANDARD_VARIANTS if args.variant == "all" else (RougeVariant.parse(args.variant),)
    rows, lines = [], []
    for i, (h, r) in enumerate(zip(hyps, refs)):
        for v in variants:
            s = score(h, r, v)
            rows.append({"line": i + 1, "variant": v.name, "precision": s.precision, "recall": s.recall, "f1": s.f1})
    for v in variants:
        sel = [row for row in rows if row["variant"] == v.name]
        n = max(len(sel), 1)
        p, r, f = (sum(row[k] for row in sel) / n for k in ("precision", "recall", "f1"))
        lines.append(f"{v.name}  precision={p:.6f}  recall={r:.6f}  f1={f:.6f}  (n={len(sel)})")
    _write(out_dir, "scores.jsonl", _jsonl(rows), written)
    return "\n".join(lines) + "\n"


def cmd_oracle(args, out_dir: Path, written: dict) -> str:
    records = _load_records(args.data)
    system = oracle_system(args.mode)
    outputs = [system(r) for r in records]
    _write(out_dir, "outputs.jsonl", _jsonl({"id": r.id, "summary": o} for r, o in zip(records, outputs)), written)
    labelled = [r for r in records if r.summary is not None]
    if len(labelled) != len(records):
        return f"{len(records)} summaries written (records without references are not scored)\n"
    result = score_outputs(f"oracle-{args.mode}", records, outputs)
    report = EvalReport()
    report.add_system(result)
    _write(out_dir, "report.jsonl", _jsonl(report.records()), written)
    return _report_table(report)


def cmd_train(args, out_dir: Path, written: dict) -> str:
    records = [r for r in _load_records(args.data) if r.summary is not None]
    if not records:
        raise CliError("training needs records with reference summaries", EXIT_DATA)
    fields = parse_fields(args.fields)
    grid = tuple(float(v) for v in args.lam_grid.split(","))
    pairs = [(assemble_input(r, fields), r.summary) for r in records]
    model = train_copymix(pairs, args.order, args.alpha, grid, args.seed, fields=fields or None)
    _write(out_dir, "model.json", model.dumps(), written)
    return (f"trained copy-mixture model on {len(records)} records: fields={format_fields(fields)} "
            f"order={model.order} alpha={model.alpha} lam={model.lam} vocab={len(model.vocab)}\n")


def cmd_decode(args, out_dir: Path, written: dict) -> str:
    try:
        model = load_model(args.model)
    except OSError as exc:
        raise CliError(f"cannot read {args.model}: {exc}", EXIT_IO) from None
    records = _load_records(args.data)
    params = _params(args)
    fields = parse_fields(args.fields)
    out = []
    for i, r in enumerate(records):
        x = model.vocab.encode(assemble_input(r, fields))
        if args.method == "beam":
            hyp = beam_search(model, x, params)[0]
        elif args.method == "greedy":
            hyp = greedy_search(model, x, params)
        else:
            hyp = sample_sequence(model, x, params, args.seed + i)
        out.append({"id": r.id, "summary": model.vocab.decode(hyp.ids), "logprob": hyp.logprob,
                    "length": len(hyp.ids)})
    _write(out_dir, "outputs.jsonl", _jsonl(out), written)
    return f"decoded {len(out)} records with {args.method} search\n"


def cmd_mbr(args, out_dir: Path, written: dict) -> str:
    pool = read_candidates(_read_text(args.candidates).splitlines())
    result = mbr_select(pool, Reward.parse(args.variant, args.field))
    payload = result.to_dict()
    payload["labels"] = pool.labels
    _write(out_dir, "result.json", json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True) + "\n", written)
    scores = " ".join(f"{s:.6f}" for s in result.consensus_scores)
    return f"selected {result.selected_index}: {result.selected_text}\nscores: {scores}\n"


def cmd_hesm(args, out_dir: Path, written: dict) -> str:
    spec, _ = _resolve_spec(args.spec)
    if args.action == "describe":
        text = describe_spec(spec) + "\n"
        _write(out_dir, "describe.txt", text, written)
        return text
    params = _params(args)
    registry = _registry(args, [spec], params)
    problems = validate_spec(spec, registry)
    if args.action == "validate":
        _write(out_dir, "validation.json", json.dumps({"ok": not problems, "violations": problems}, indent=1) + "\n",
               written)
        if problems:
            raise CliError("invalid specification:\n  " + "\n  ".join(problems), EXIT_SPEC)
        return f"ok: {describe_spec(spec)} ({sum(1 for _ in leaves(spec))} leaves)\n"
    if problems:
        raise CliError("invalid specification:\n  " + "\n  ".join(problems), EXIT_SPEC)
    if not args.data:
        raise CliError("hesm run needs --data", EXIT_USAGE)
    records = _load_records(args.data)
    outputs = decode_specs({"spec": spec}, registry, records, SECTIONS, params, args.seed, args.workers)["spec"]
    _write(out_dir, "outputs.jsonl", _jsonl({"id": r.id, "summary": o} for r, o in zip(records, outputs)), written)
    if records and all(r.summary is not None for r in records):
        report = EvalReport()
        report.add_system(score_outputs(describe_spec(spec), records, outputs))
        _write(out_dir, "report.jsonl", _jsonl(report.records()), written)
        return _report_table(report)
    return f"decoded {len(records)} records\n"


def cmd_cv(args, out_dir: Path, written: dict) -> str:
    spec, _ = _resolve_spec(args.spec)
    records = _load_records(args.data)
    if any(r.summary is None for r in records):
        raise CliError("cross-validation needs reference summaries on every record", EXIT_DATA)
    params = _params(args)
    plan = kfold_split(records, args.k, args.seed)
    report = EvalReport()
    fold_results = []
    all_outputs = {}
    for fold in range(args.k):
        train, test = plan.split(records, fold)
        registry = build_registry_for([spec], train, args.seed, params)
        problems = validate_spec(spec, registry)
        if problems:
            raise CliError("invalid specification:\n  " + "\n  ".join(problems), EXIT_SPEC)
        outs = decode_specs({"spec": spec}, registry, test, SECTIONS, params, args.seed, args.workers)["spec"]
        result = score_outputs(f"fold-{fold}", test, outs)
        report.add_system(result, group="folds")
        fold_results.append(result)
        all_outputs.update({r.id: o for r, o in zip(test, outs)})
    report.add_individual("across folds", fold_results, group="aggregate")
    pooled = score_outputs("pooled", records, [all_outputs[r.id] for r in records])
    report.add_system(pooled, group="aggregate", name="pooled records")
    _write(out_dir, "folds.json", json.dumps({"k": plan.k, "seed": plan.seed, "sizes": plan.sizes(),
                                              "assignment": plan.assignment}, indent=1, sort_keys=True) + "\n",
           written)
    _write(out_dir, "outputs.jsonl", _jsonl({"id": r.id, "fold": plan.assignment[r.id], "summary": all_outputs[r.id]}
                                            for r in records), written)
    _write(out_dir, "report.jsonl", _jsonl(report.records()), written)
    table = _report_table(report)
    _write(out_dir, "report.txt", table, written)
    return table


def cmd_synth(args, out_dir: Path, written: dict) -> str:
    size = args.size if args.size is not None else args.train_size + args.eval_size
    records = synth_corpus(args.seed, size)
    save_jsonl(records, out_dir / "notes.jsonl")
    written["notes.jsonl"] = out_dir / "notes.jsonl"
    if args.eval_size:
        cut = size - args.eval_size
        if cut < 1:
            raise CliError(f"--eval-size {args.eval_size} leaves no training records", EXIT_USAGE)
        save_jsonl(records[:cut], out_dir / "train.jsonl")
        save_jsonl(records[cut:], out_dir / "eval.jsonl")
        written["train.jsonl"] = out_dir / "train.jsonl"
        written["eval.jsonl"] = out_dir / "eval.jsonl"
        return f"wrote {size} records ({cut} train / {args.eval_size} eval)\n"
    return f"wrote {size} records\n"


def cmd_report(args, out_dir: Path, written: dict) -> str:
    from hesm.report import run_zoo, write_artifacts

    if args.synth:
        corpus = synth_corpus(args.seed, args.train_size + args.eval_size)
        train, records = corpus[:args.train_size], corpus[args.train_size:]
    else:
        if not (args.train and args.data):
            raise CliError("report needs --train and --data, or --synth", EXIT_USAGE)
        train, records = _load_records(args.train), _load_records(args.data)
    if any(r.summary is None for r in records):
        raise CliError("evaluation records need reference summaries", EXIT_DATA)
    if args.fixtures:
        wanted = {name.strip() for name in args.fixtures.split(",") if name.strip()}
        fixtures = [fx for fx in list_fixtures() if fx.name in wanted]
        unknown = wanted - {fx.name for fx in fixtures}
        if unknown:
            raise CliError(f"unknown fixtures: {', '.join(sorted(unknown))}", EXIT_SPEC)
    else:
        fixtures = list_fixtures()
    run = run_zoo(train, records, fixtures, _params(args), args.seed, args.workers, not args.no_oracles)
    for path in write_artifacts(run, out_dir, figures=not args.no_figures):
        written[path.relative_to(out_dir).as_posix()] = path
    return (out_dir / "report.txt").read_text(encoding="utf-8")


def cmd_fixtures(args, out_dir: Path, written: dict) -> str:
    lines = []
    for fx in list_fixtures():
        lines.append(f"{fx.name:16s} {fx.group:18s} {fx.row:24s} {len(fx.systems)} system(s)")
        if args.export:
            for i, spec in enumerate(fx.systems):
                suffix = "" if len(fx.systems) == 1 else f"-{i + 1}"
                _write(out_dir, f"specs/{fx.name}{suffix}.json", dump_spec(spec), written)
    text = "\n".join(lines) + "\n"
    _write(out_dir, "fixtures.txt", text, written)
    return text


# ---------------------------------------------------------------------------
# parser


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("decoding")
    g.add_argument("--num_beams", type=int, default=DEFAULTS.num_beams)
    g.add_argument("--length_penalty", type=float, default=DEFAULTS.length_penalty)
    g.add_argument("--min_length", type=int, default=DEFAULTS.min_length)
    g.add_argument("--max_length", type=int, default=DEFAULTS.max_length)
    g.add_argument("--no_repeat_ngram_size", type=int, default=DEFAULTS.no_repeat_ngram_size)


def _add_common(p: argparse.ArgumentParser, workers: bool = False) -> None:
    p.add_argument("--seed", type=int, default=0, help="the single source of randomness")
    p.add_argument("--out-dir", default=None, help="artifact directory (default hesm_runs/<command>)")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="worker processes; never changes results")


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", required=True, help="spec file or fixture name")
    p.add_argument("--data", help="records to decode (run)")
    p.add_argument("--train", help="training records for the model roster")
    p.add_argument("--models", help="directory of <model_id>.json model files")
    _add_decode_flags(p)
    _add_common(p, workers=True)
    p.set_defaults(handler=cmd_hesm)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hesm", description="Hierarchical ensembles of summarization models.")
    parser.add_argument("--version", action="version", version=f"hesm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("rouge", help="score hypothesis lines against reference lines")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--variant", default="all", help="1, 2, L or all")
    _add_common(p)
    p.set_defaults(handler=cmd_rouge)

    p = sub.add_parser("oracle", help="extractive oracle summaries")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("all-overlap", "greedy-best"), default="greedy-best")
    _add_common(p)
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("train", help="train one copy-mixture model")
    p.add_argument("--data", required=True)
    p.add_argument("--fields", default="A", help="input sections, e.g. A or A+S")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--lam-grid", default="0.2,0.4,0.6,0.8")
    _add_common(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("decode", help="decode records with one model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fields", default="A+S+O", help="sections assembled into the input")
    p.add_argument("--method", choices=("beam", "greedy", "sample"), default="beam")
    _add_decode_flags(p)
    _add_common(p)
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("mbr", help="MBR consensus selection over candidate lines or JSONL")
    p.add_argument("--candidates", required=True)
    p.add_argument("--variant", default="L")
    p.add_argument("--field", default="f1")
    _add_common(p)
    p.set_defaults(handler=cmd_mbr)

    p = sub.add_parser("hesm", help="run, validate or describe an ensemble specification")
    p.add_argument("action", choices=("run", "validate", "describe"))
    _add_spec_flags(p)
    p = sub.add_parser("run", help="shorthand for 'hesm run'")
    _add_spec_flags(p)
    p.set_defaults(action="run")

    p = sub.add_parser("cv", help="k-fold cross-validation of a specification")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--k", type=int, default=5)
    _add_decode_flags(p)
    _add_common(p, workers=True)
    p.set_defaults(handler=cmd_cv)

    p = sub.add_parser("synth", help="write a synthetic note corpus")
    p.add_argument("--size", type=int, default=None, help="total records (default train + eval sizes)")
    p.add_argument("--train-size", type=int, default=765)
    p.add_argument("--eval-size", type=int, default=237)
    _add_common(p)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("report", help="evaluate fixture systems and write the report")
    p.add_argument("--train")
    p.add_argument("--data")
    p.add_argument("--synth", action="store_true", help="use a seeded synthetic corpus")
    p.add_argument("--train-size", type=int, default=765)
    p.add_argument("--eval-size", type=int, default=237)
    p.add_argument("--fixtures", default=None, help="comma-separated fixture names (default all)")
    p.add_argument("--no-oracles", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    _add_decode_flags(p)
    _add_common(p, workers=True)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("fixtures", help="list the checked-in fixtures")
    p.add_argument("--export", action="store_true", help="also write each system's spec file")
    _add_common(p)
    p.set_defaults(handler=cmd_fixtures)

    p = sub.add_parser("rerun", help="replay the run recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=None)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in sub.choices:
        raise CliError(f"manifest names unknown command {command!r}", EXIT_DATA)
    return sub.choices[command]


def canonical_argv(parser: argparse.ArgumentParser, args: argparse.Namespace) -> list[str]:
    """The argument list that reproduces ``args``, every default made explicit."""
    p = _subparser(parser, args.command)
    argv = [args.command]
    for action in p._actions:
        if action.dest in UNRECORDED or action.dest == "help":
            continue
        value = getattr(args, action.dest, None)
        if not action.option_strings:
            argv.append(str(value))
        elif isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(action.option_strings[0])
        elif value is not None:
            argv += [action.option_strings[0], str(value)]
    return argv


def _absolutize(args: argparse.Namespace) -> None:
    for name in INPUT_ARGS:
        value = getattr(args, name, None)
        if value is None:
            continue
        if name == "spec" and not Path(value).exists():
            continue  # fixture name
        setattr(args, name, str(Path(value).resolve()))


def _input_digests(args: argparse.Namespace) -> dict[str, str]:
    out = {}
    for name in INPUT_ARGS:
        value = getattr(args, name, None)
        if value is None:
            continue
        path = Path(value)
        if path.exists():
            out[name] = _digest_path(path)
        elif name == "spec":
            out[name] = _digest_bytes(_resolve_spec(value)[1].encode())
    return out


def _manifest(argv: list[str], args: argparse.Namespace, written: dict) -> str:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in UNRECORDED}
    manifest = {
        "tool": "hesm",
        "version": __version__,
        "command": args.command,
        "argv": argv,
        "config": config,
        "inputs": _input_digests(args),
        "outputs": {name: _digest_path(path) for name, path in sorted(written.items())},
    }
    return json.dumps(manifest, ensure_ascii=False, indent=1, sort_keys=True) + "\n"


def execute(argv: Sequence[str], parser: argparse.ArgumentParser | None = None) -> int:
    parser = parser or build_parser()
    args = parser.parse_args(list(argv))
    if args.command == "rerun":
        manifest = json.loads(_read_text(args.manifest))
        replay = list(manifest["argv"])
        if args.out_dir:
            replay += ["--out-dir", args.out_dir]
        if "--workers" in _subparser(parser, replay[0])._option_string_actions:
            replay += ["--workers", str(args.workers)]
        return execute(replay, parser)

    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    _absolutize(args)
    out_dir = Path(args.out_dir or Path("hesm_runs") / args.command)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    text = args.handler(args, out_dir, written)
    argv_canon = canonical_argv(parser, args)
    (out_dir / "manifest.json").write_text(_manifest(argv_canon, args, written), encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return execute(argv)
    except SystemExit as exc:  # argparse
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except CliError as exc:
        print(f"hesm: error: {exc}", file=sys.stderr)
        return exc.code
    except SpecError as exc:
        print(f"hesm: invalid specification: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (SchemaError, VocabMismatchError, json.JSONDecodeError) as exc:
        print(f"hesm: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"hesm: file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"hesm: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"hesm: unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
