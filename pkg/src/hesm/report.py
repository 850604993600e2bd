"""Running the fixture zoo and rendering its report.

A run decodes every fixture system on every evaluation record, scores the
outputs with ROUGE-1/2/L and arranges rows by fixture group, each group
laid out as ``Method | ROUGE-L F1 | Prec | Rec`` with ``mean±std`` cells.
Artifacts:

``report.txt``     aligned tables, headed by the resolved configuration
``report.jsonl``   one object per row and metric
``report.csv``     the same objects as CSV
``deltas.json``    each row minus its group baseline (reported, not judged)
``outputs.jsonl``  every system output per record
``figures/*.png``  ROUGE-L F1 bars with std error bars, and the deltas
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from hesm.decode import DecodeParams
from hesm.harness import (SECTIONS, EvalReport, NoteRecord, ReportRow, decode_specs, evaluate_system,
                          oracle_system, score_outputs)
from hesm.hierarchy import Leaf, Spec, SpecError, TokenEnsemble, describe_spec, validate_spec
from hesm.zoo import GROUP_BASELINES, Fixture, build_registry_for, list_fixtures

ORACLE_GROUP = "extractive oracles"
ORACLE_MODES = (("all-overlap", "All-overlap"), ("greedy-best", "Greedy-best"))
TABLE_METRIC = "RL"
TABLE_FIELDS = (("f1", "F1"), ("precision", "Prec"), ("recall", "Rec"))


@dataclass
class ZooRun:
    report: EvalReport
    outputs: dict[str, list[str]]
    record_ids: list[str]
    config: dict
    shapes: dict[str, str] = field(default_factory=dict)
    baselines: dict[str, str] = field(default_factory=dict)


def _compact(spec: Spec) -> str:
    if isinstance(spec, (Leaf, TokenEnsemble)):
        return describe_spec(spec)
    text = describe_spec(spec)
    return text if len(text) <= 24 else f"MBR={len(spec.children)}"


def fixture_shape(fixture: Fixture) -> str:
    parts = [_compact(s) for s in fixture.systems]
    if len(parts) == 1:
        return parts[0]
    if len(set(parts)) == 1:
        return f"{parts[0]} ×{len(parts)}"
    return f"{len(parts)} systems"


def run_zoo(
    train: Sequence[NoteRecord],
    records: Sequence[NoteRecord],
    fixtures: Sequence[Fixture] | None = None,
    params: DecodeParams = DecodeParams(),
    seed: int = 0,
    workers: int = 1,
    oracles: bool = True,
) -> ZooRun:
    """Train the roster on ``train`` and evaluate every fixture on ``records``."""
    fixtures = list(list_fixtures() if fixtures is None else fixtures)
    specs: dict[str, Spec] = {}
    for fx in fixtures:
        for name, spec in zip(fx.system_names(), fx.systems):
            specs[name] = spec
    registry = build_registry_for(list(specs.values()), train, seed, params)
    for name, spec in specs.items():
        problems = validate_spec(spec, registry)
        if problems:
            raise SpecError("; ".join(problems), name)

    outputs = decode_specs(specs, registry, records, SECTIONS, params, seed, workers)
    report = EvalReport()
    shapes = {}
    for fx in fixtures:
        results = [score_outputs(name, records, outputs[name]) for name in fx.system_names()]
        if fx.aggregate == "systems":
            report.add_individual(fx.name, results, fx.group, fx.row)
        else:
            report.add_system(results[0], fx.group, fx.name, fx.row)
        shapes[fx.name] = fixture_shape(fx)
    if oracles:
        for mode, label in ORACLE_MODES:
            name = f"oracle-{mode}"
            sub = evaluate_system(oracle_system(mode), records, name=name)
            report.add_system(sub.results[name], ORACLE_GROUP, name, label)
            outputs[name] = sub.results[name].outputs
            shapes[name] = "extractive"

    groups = {fx.group for fx in fixtures}
    row_names = {row.name for row in report.rows}
    baselines = {g: b for g, b in GROUP_BASELINES.items() if g in groups and b in row_names}
    config = {
        "train_records": len(train),
        "eval_records": len(records),
        "seed": seed,
        "decode": params.to_dict(),
        "fixtures": [fx.name for fx in fixtures],
        "oracles": oracles,
    }
    return ZooRun(report, outputs, [r.id for r in records], config, shapes, baselines)


def improvements(run: ZooRun) -> list[dict]:
    """Each row minus its group baseline, for every ROUGE-L field (×100 points)."""
    rows = {row.name: row for row in run.report.rows}
    out = []
    for row in run.report.rows:
        base_name = run.baselines.get(row.group)
        if base_name is None or base_name == row.name:
            continue
        base = rows[base_name]
        entry = {"group": row.group, "system": row.name, "label": row.display, "baseline": base_name}
        for fld, _ in TABLE_FIELDS:
            key = (TABLE_METRIC, fld)
            entry[f"delta_{fld}"] = round(row.cells[key].mean - base.cells[key].mean, 6)
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# text rendering


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]], align: str) -> list[str]:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]

    def fmt(cells):
        parts = [c.ljust(w) if a == "l" else c.rjust(w) for c, w, a in zip(cells, widths, align)]
        return "  ".join(parts).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return [fmt(headers), rule] + [fmt(r) for r in rows]


def _groups(report: EvalReport) -> list[str]:
    seen = []
    for row in report.rows:
        if row.group not in seen:
            seen.append(row.group)
    return seen


def render_text(run: ZooRun) -> str:
    lines = ["# hesm report"]
    for key, value in run.config.items():
        lines.append(f"# {key}: {json.dumps(value, ensure_ascii=False, sort_keys=True)}")
    lines.append("# cells: ×100, mean±std (population std over records, or over systems for rows marked 'systems')")
    report = run.report
    for group in _groups(report):
        rows = [r for r in report.rows if r.group == group]
        lines += ["", f"== {group} (ROUGE-L) =="]
        body = [[r.display, run.shapes.get(r.name, ""), r.aggregate]
                + [r.cells[(TABLE_METRIC, f)].format() for f, _ in TABLE_FIELDS] for r in rows]
        lines += _table(["Method", "Shape", "Over"] + [h for _, h in TABLE_FIELDS], body, "lllrrr")

    lines += ["", "== all metrics (F1) =="]
    body = [[r.name, r.group] + [r.cells[(v, "f1")].format() for v in ("R1", "R2", "RL")] for r in report.rows]
    lines += _table(["System", "Group", "R1", "R2", "RL"], body, "llrrr")

    deltas = improvements(run)
    if deltas:
        lines += ["", "== ROUGE-L change against group baseline (points) =="]
        body = [[d["system"], d["baseline"]] + [f"{d[f'delta_{f}']:+.2f}" for f, _ in TABLE_FIELDS]
                for d in deltas]
        lines += _table(["System", "Baseline", "ΔF1", "ΔPrec", "ΔRec"], body, "llrrr")
    return "\n".join(lines) + "\n"


def render_jsonl(run: ZooRun) -> str:
    out = io.StringIO()
    for obj in run.report.records():
        obj["shape"] = run.shapes.get(obj["system"], "")
        out.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    return out.getvalue()


def render_csv(run: ZooRun) -> str:
    records = run.report.records()
    out = io.StringIO()
    if records:
        writer = csv.DictWriter(out, fieldnames=list(records[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)
    return out.getvalue()


def render_outputs(run: ZooRun) -> str:
    out = io.StringIO()
    for name, texts in run.outputs.items():
        for rid, text in zip(run.record_ids, texts):
            out.write(json.dumps({"system": name, "id": rid, "summary": text}, ensure_ascii=False) + "\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# figures


def _new_figure(width: float, height: float):
    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path: Path) -> None:
    # no Software stamp, so files depend only on the data and matplotlib's renderer
    fig.savefig(path, format="png", metadata={"Software": None})


def plot_scores(report: EvalReport, path: str | Path, metric: tuple[str, str] = (TABLE_METRIC, "f1")) -> Path:
    """Horizontal bars of one metric per group, with std error bars."""
    groups = _groups(report)
    heights = [max(1, sum(r.group == g for r in report.rows)) for g in groups]
    fig = _new_figure(8.0, 0.9 + 0.32 * sum(heights) + 0.5 * len(groups))
    axes = fig.subplots(len(groups), 1, sharex=True, gridspec_kw={"height_ratios": heights}, squeeze=False)[:, 0]
    for ax, group in zip(axes, groups):
        rows: list[ReportRow] = [r for r in report.rows if r.group == group]
        means = [r.cells[metric].mean for r in rows]
        stds = [r.cells[metric].std for r in rows]
        colors = ["#7f7f7f" if r.aggregate == "systems" else "#1f77b4" for r in rows]
        y = list(range(len(rows)))
        ax.barh(y, means, xerr=stds, color=colors, error_kw={"elinewidth": 0.8, "capsize": 2})
        ax.set_yticks(y)
        ax.set_yticklabels([r.display for r in rows], fontsize=7)
        ax.invert_yaxis()
        ax.set_title(group, fontsize=8, loc="left")
        ax.tick_params(axis="x", labelsize=7)
    axes[-1].set_xlabel(f"{metric[0]} {metric[1]} (×100, mean ± std)", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    _save(fig, path)
    return path


def plot_deltas(deltas: Sequence[Mapping], path: str | Path) -> Path:
    fig = _new_figure(8.0, 1.0 + 0.25 * max(1, len(deltas)))
    ax = fig.subplots()
    values = [d["delta_f1"] for d in deltas]
    y = list(range(len(deltas)))
    ax.barh(y, values, color=["#2ca02c" if v >= 0 else "#d62728" for v in values])
    ax.axvline(0.0, color="k", linewidth=0.6)
    ax.set_yticks(y)
    ax.set_yticklabels([f"{d['group']}: {d['label']}" for d in deltas], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("ROUGE-L F1 change against group baseline (points)", fontsize=8)
    ax.tick_params(axis="x", labelsize=7)
    fig.tight_layout()
    path = Path(path)
    _save(fig, path)
    return path


def write_artifacts(run: ZooRun, out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write every report artifact into ``out_dir``; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    deltas = improvements(run)
    files = {
        "report.txt": render_text(run),
        "report.jsonl": render_jsonl(run),
        "report.csv": render_csv(run),
        "deltas.json": json.dumps(deltas, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
        "outputs.jsonl": render_outputs(run),
    }
    paths = []
    for name, text in files.items():
        path = out_dir / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    if figures:
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        paths.append(plot_scores(run.report, fig_dir / "rouge_l_f1.png"))
        if deltas:
            paths.append(plot_deltas(deltas, fig_dir / "deltas.png"))
    return paths
