"""Data handling and evaluation: JSONL notes, input assembly, k-fold plans,
a synthetic note generator and ROUGE evaluation of systems."""

from __future__ import annotations

import json
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from hesm.decode import DecodeParams
from hesm.hierarchy import Evaluator, Spec
from hesm.model import SECTION_SEPARATORS
from hesm.oracle import all_overlap, greedy_best, sentence_pool
from hesm.rouge import STANDARD_VARIANTS, score_tokens
from hesm.text import tokenize

SECTIONS = ("A", "S", "O")
SECTION_FIELDS = {"A": "assessment", "S": "subjective", "O": "objective"}
REQUIRED_KEYS = ("id", "assessment", "subjective", "objective")
SCORE_FIELDS = ("f1", "precision", "recall")
METRICS = tuple((v.name, f) for v in STANDARD_VARIANTS for f in SCORE_FIELDS)


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class NoteRecord:
    id: str
    assessment: str
    subjective: str
    objective: str
    summary: str | None = None

    def section(self, name: str) -> str:
        return getattr(self, SECTION_FIELDS[name])

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.summary is None:
            del out["summary"]
        return out


def _record_from_obj(obj, line_no: int) -> NoteRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"line {line_no}: expected a JSON object")
    for key in REQUIRED_KEYS:
        if key not in obj:
            raise SchemaError(f"line {line_no}: missing required key {key!r}")
        if not isinstance(obj[key], str):
            raise SchemaError(f"line {line_no}: key {key!r} must be a string")
    summary = obj.get("summary")
    if summary is not None and not isinstance(summary, str):
        raise SchemaError(f"line {line_no}: key 'summary' must be a string")
    return NoteRecord(obj["id"], obj["assessment"], obj["subjective"], obj["objective"], summary)


def load_jsonl(path: str | Path) -> list[NoteRecord]:
    """Records in file order. Blank lines are skipped; anything else that is
    not a valid record raises :class:`SchemaError` naming the line."""
    records = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            record = _record_from_obj(obj, line_no)
            if record.id in seen:
                raise SchemaError(f"line {line_no}: duplicate id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    return records


def save_jsonl(records: Iterable[NoteRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# input fields


def parse_fields(text: str | Sequence[str]) -> tuple[str, ...]:
    """``"A+S"`` -> ``("A", "S")``; ``""``, ``"∅"`` or ``"none"`` -> ``()``."""
    if isinstance(text, str):
        cleaned = text.strip()
        if cleaned in ("", "∅", "none", "empty"):
            return ()
        parts = [p.strip().strip("{}").upper() for p in cleaned.replace(",", "+").split("+")]
    else:
        parts = [p.upper() for p in text]
    for p in parts:
        if p not in SECTIONS:
            raise ValueError(f"unknown input field {p!r}; expected A, S or O")
    if len(set(parts)) != len(parts):
        raise ValueError(f"repeated input field in {text!r}")
    return tuple(parts)


def format_fields(fields: Sequence[str]) -> str:
    return "+".join(fields) if fields else "∅"


def assemble_input(record: NoteRecord, fields: Sequence[str]) -> str:
    """Each requested section prefixed by its separator literal, e.g.
    ``"<asm> ... <subj> ..."``; no sections gives the empty string."""
    parts = []
    for name in fields:
        parts.append(SECTION_SEPARATORS[name])
        text = record.section(name).strip()
        if text:
            parts.append(text)
    return " ".join(parts)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignment: dict[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return [rid for rid, f in self.assignment.items() if f == fold]

    def split(self, records: Sequence[NoteRecord], fold: int) -> tuple[list[NoteRecord], list[NoteRecord]]:
        """``(train, held_out)`` for ``fold``, each in input order."""
        train = [r for r in records if self.assignment[r.id] != fold]
        test = [r for r in records if self.assignment[r.id] == fold]
        return train, test

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignment.values():
            counts[f] += 1
        return counts


def kfold_split(records: Sequence[NoteRecord], k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle (Python's Mersenne Twister), then round-robin fold assignment."""
    if k < 2 or k > len(records):
        raise ValueError(f"need 2 <= k <= {len(records)} records, got k={k}")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")
    order = list(ids)
    random.Random(seed).shuffle(order)
    return FoldPlan(k, seed, {rid: i % k for i, rid in enumerate(order)})


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class LengthProfile:
    """Mean and standard deviation of word counts per field."""

    objective: tuple[float, float] = (304.7, 83.4)
    subjective: tuple[float, float] = (85.5, 54.8)
    assessment: tuple[float, float] = (33.7, 17.1)
    summary: tuple[float, float] = (10.5, 7.5)


DIAGNOSES = (
    "acute kidney injury", "congestive heart failure", "sepsis", "pneumonia",
    "atrial fibrillation", "hypertension", "type 2 diabetes mellitus",
    "chronic obstructive pulmonary disease", "urinary tract infection", "hyponatremia",
    "anemia", "upper gastrointestinal bleed", "altered mental status",
    "acute hypoxemic respiratory failure", "alcoholic cirrhosis", "alcohol withdrawal",
    "hypotension", "pulmonary embolism", "deep vein thrombosis", "hyperkalemia",
    "acute coronary syndrome", "pancreatitis", "cellulitis", "delirium",
    "severe malnutrition", "thrombocytopenia", "end stage renal disease", "ischemic stroke",
    "seizure disorder", "hypothyroidism", "pleural effusion", "aspiration pneumonia",
    "lactic acidosis", "c diff colitis", "mrsa bacteremia", "hepatic encephalopathy",
    "nstemi", "septic shock", "coronary artery disease", "obstructive sleep apnea",
)
MODIFIERS = ("acute", "chronic", "resolved", "likely", "history of", "worsening")
ASSESSMENT_FILLER = (
    "patient remains hemodynamically stable", "continue current management",
    "plan to monitor closely overnight", "will follow up morning labs",
    "improving on current regimen", "consult team following", "goals of care discussed with family",
    "likely multifactorial etiology", "trend electrolytes and replete as needed",
    "continue home medications", "pain well controlled", "wean oxygen as tolerated",
    "physical therapy evaluation pending", "dispo planning in progress",
)
SUBJECTIVE_FILLER = (
    "reports shortness of breath with exertion", "denies chest pain or palpitations",
    "complains of mild nausea", "feels more fatigued today", "no acute events overnight",
    "tolerating diet without issue", "reports poor sleep", "denies fevers or chills",
    "states pain is improved", "family at bedside", "ambulating with assistance",
    "endorses decreased appetite", "no new complaints this morning", "reports productive cough",
)
OBJECTIVE_FILLER = (
    "lungs clear to auscultation bilaterally", "heart regular rate and rhythm",
    "abdomen soft non tender non distended", "extremities without edema",
    "alert and oriented times three", "skin warm and dry", "no focal neurological deficits",
    "crackles at bilateral bases", "jugular venous pressure not elevated",
    "bowel sounds present", "mucous membranes moist", "trace pedal edema",
)
LAB_NAMES = ("wbc", "hgb", "plt", "na", "k", "cr", "bun", "glucose", "lactate", "inr", "hr", "bp", "rr", "spo2", "temp")


def _clipped_length(rng: np.random.Generator, mean_std: tuple[float, float], low: int) -> int:
    mean, std = mean_std
    return max(low, int(round(rng.normal(mean, std))))


def _fill(rng, target: int, filler: Sequence[str], sentences: list[str]) -> None:
    """Append filler sentences until ``target`` words, trimming the last one to fit."""
    count = sum(len(s.split()) for s in sentences)
    while count < target:
        sent = filler[int(rng.integers(len(filler)))].split()
        sent = sent[: target - count]
        sentences.append(" ".join(sent))
        count += len(sent)


def _objective_sentence(rng) -> str:
    if rng.random() < 0.5:
        return OBJECTIVE_FILLER[int(rng.integers(len(OBJECTIVE_FILLER)))]
    labs = rng.choice(len(LAB_NAMES), size=3, replace=False)
    return " ".join(f"{LAB_NAMES[i]} {int(rng.integers(1, 200))}" for i in labs)


def synth_corpus(seed: int, size: int, profile: LengthProfile = LengthProfile()) -> list[NoteRecord]:
    """Seeded synthetic progress notes.

    Each summary is a noisy subset of the diagnosis phrases written into the
    assessment (its first phrase always copied verbatim), so the assessment
    carries most of the signal, as with real problem lists. Field lengths
    follow normal distributions clipped from below with the profile's
    parameters.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for n in range(size):
        summary_target = _clipped_length(rng, profile.summary, 1)
        order = rng.permutation(len(DIAGNOSES))
        problems: list[str] = []
        words = 0
        for idx in order:
            if words >= summary_target:
                break
            problems.append(DIAGNOSES[idx])
            words += len(DIAGNOSES[idx].split())
        distractors = [DIAGNOSES[i] for i in order[len(problems):len(problems) + int(rng.integers(0, 3))]]

        summary_parts = [problems[0]]
        for phrase in problems[1:]:
            toks = phrase.split()
            if len(toks) > 1 and rng.random() < 0.2:
                del toks[int(rng.integers(len(toks)))]
            if rng.random() < 0.3:
                toks = MODIFIERS[int(rng.integers(len(MODIFIERS)))].split() + toks
            summary_parts.append(" ".join(toks))

        listed = problems + distractors
        mix = rng.permutation(len(listed))
        age = int(rng.integers(25, 95))
        sex = "male" if rng.random() < 0.5 else "female"
        a_sentences = [f"{age} year old {sex} with " + ", ".join(listed[i] for i in mix)]
        _fill(rng, _clipped_length(rng, profile.assessment, 4), ASSESSMENT_FILLER, a_sentences)

        s_sentences: list[str] = []
        _fill(rng, _clipped_length(rng, profile.subjective, 1), SUBJECTIVE_FILLER, s_sentences)

        o_sentences: list[str] = []
        o_target = _clipped_length(rng, profile.objective, 10)
        count = 0
        while count < o_target:
            sent = _objective_sentence(rng).split()[: o_target - count]
            o_sentences.append(" ".join(sent))
            count += len(sent)

        records.append(NoteRecord(
            id=f"note-{n:05d}",
            assessment=". ".join(a_sentences) + ".",
            subjective=". ".join(s_sentences) + ("." if s_sentences else ""),
            objective="\n".join(o_sentences),
            summary="; ".join(summary_parts),
        ))
    return records


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Cell:
    mean: float
    std: float
    n: int

    def format(self, with_std: bool = True) -> str:
        return f"{self.mean:.2f}±{self.std:.2f}" if with_std else f"{self.mean:.2f}"


def _cell(values: Sequence[float]) -> Cell:
    arr = np.asarray(values, dtype=np.float64) * 100.0
    if arr.size == 0:
        return Cell(0.0, 0.0, 0)
    return Cell(float(arr.mean()), float(arr.std()), int(arr.size))


@dataclass
class SystemResult:
    """Per-record ROUGE scores of one system (fractions in [0, 1])."""

    name: str
    record_ids: list[str]
    outputs: list[str]
    scores: list[dict[tuple[str, str], float]]

    def mean(self, metric: tuple[str, str]) -> float:
        return float(np.mean([s[metric] for s in self.scores])) if self.scores else 0.0

    def cell(self, metric: tuple[str, str]) -> Cell:
        return _cell([s[metric] for s in self.scores])


@dataclass
class ReportRow:
    """One table row. ``aggregate`` is ``"records"`` (mean ± std over records)
    or ``"systems"`` (mean ± std over the per-system means of ``members``)."""

    name: str
    cells: dict[tuple[str, str], Cell]
    aggregate: str = "records"
    members: list[str] = field(default_factory=list)
    group: str = ""
    label: str = ""

    @property
    def display(self) -> str:
        return self.label or self.name


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    results: dict[str, SystemResult] = field(default_factory=dict)

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def add_system(self, result: SystemResult, group: str = "", name: str | None = None,
                   label: str = "") -> ReportRow:
        row = ReportRow(name or result.name, {m: result.cell(m) for m in METRICS}, "records",
                        [result.name], group, label)
        self.rows.append(row)
        self.results[result.name] = result
        return row

    def add_individual(self, name: str, results: Sequence[SystemResult], group: str = "",
                       label: str = "") -> ReportRow:
        row = ReportRow(name, {m: _cell([r.mean(m) for r in results]) for m in METRICS}, "systems",
                        [r.name for r in results], group, label)
        self.rows.append(row)
        for r in results:
            self.results[r.name] = r
        return row

    def records(self) -> list[dict]:
        """One flat object per row and metric."""
        out = []
        for row in self.rows:
            for (variant, fld), cell in row.cells.items():
                out.append({"group": row.group, "system": row.name, "label": row.display,
                            "metric": variant, "field": fld,
                            "mean": round(cell.mean, 6), "std": round(cell.std, 6), "n": cell.n,
                            "aggregate": row.aggregate, "members": len(row.members)})
        return out


def score_outputs(name: str, records: Sequence[NoteRecord], outputs: Sequence[str]) -> SystemResult:
    scores = []
    for record, out in zip(records, outputs):
        if record.summary is None:
            raise ValueError(f"record {record.id} has no reference summary")
        hyp, ref = tokenize(out), tokenize(record.summary)
        row = {}
        for variant in STANDARD_VARIANTS:
            s = score_tokens(hyp, ref, variant)
            row[(variant.name, "f1")] = s.f1
            row[(variant.name, "precision")] = s.precision
            row[(variant.name, "recall")] = s.recall
        scores.append(row)
    return SystemResult(name, [r.id for r in records], list(outputs), scores)


def oracle_system(mode: str) -> Callable[[NoteRecord], str]:
    """Extractive oracle as a system: ``all-overlap`` or ``greedy-best``."""
    pick = {"all-overlap": all_overlap, "greedy-best": greedy_best}.get(mode)
    if pick is None:
        raise ValueError(f"unknown oracle mode {mode!r}")

    def run(record: NoteRecord) -> str:
        pool = sentence_pool(record.assessment, record.subjective, record.objective)
        return pick(pool, record.summary or "")

    run.__name__ = f"oracle-{mode}"
    return run


def evaluate_system(
    system: Callable[[NoteRecord], str] | Spec,
    records: Sequence[NoteRecord],
    field_spec: Sequence[str] = SECTIONS,
    params: DecodeParams = DecodeParams(),
    seed: int = 0,
    *,
    registry: Mapping | None = None,
    name: str | None = None,
    workers: int = 1,
) -> EvalReport:
    """Decode (or extract) a summary per record and score it with R1/R2/RL.

    ``system`` is either a callable ``record -> summary`` or a specification
    tree evaluated against ``registry``. Cells are ×100, with population
    standard deviations over records.
    """
    missing = [r.id for r in records if r.summary is None]
    if missing:
        raise ValueError(f"records without reference summaries: {missing[:5]}")
    if callable(system):
        outputs = []
        for r in records:
            try:
                outputs.append(system(r))
            except Exception as exc:
                raise RuntimeError(f"record {r.id}: {exc}") from exc
        label = name or getattr(system, "__name__", "system")
    else:
        if registry is None:
            raise ValueError("a registry is required to evaluate a specification")
        label = name or "spec"
        outputs = decode_specs({label: system}, registry, records, field_spec, params, seed, workers)[label]
    report = EvalReport()
    report.add_system(score_outputs(label, records, outputs))
    return report


# -- batch decoding of many specifications ------------------------------------

_WORKER_STATE: dict = {}


def _init_worker(specs, registry, field_spec, params, seed):
    _WORKER_STATE.update(specs=specs, registry=registry, field_spec=field_spec, params=params, seed=seed)


def _decode_record(record: NoteRecord, specs, registry, field_spec, params, seed) -> dict[str, str]:
    ev = Evaluator(registry, assemble_input(record, field_spec), params, seed)
    out = {}
    for name, spec in specs.items():
        try:
            out[name] = ev.evaluate(spec)
        except Exception as exc:
            raise RuntimeError(f"record {record.id}, system {name}: {exc}") from exc
    return out


def _decode_in_worker(record: NoteRecord) -> dict[str, str]:
    s = _WORKER_STATE
    return _decode_record(record, s["specs"], s["registry"], s["field_spec"], s["params"], s["seed"])


def decode_specs(
    specs: Mapping[str, Spec],
    registry: Mapping,
    records: Sequence[NoteRecord],
    field_spec: Sequence[str] = SECTIONS,
    params: DecodeParams = DecodeParams(),
    seed: int = 0,
    workers: int = 1,
) -> dict[str, list[str]]:
    """Outputs of every named spec on every record, in record order.

    All specs share one memo per record, so members common to several specs
    are decoded once. With ``workers > 1`` records are spread over processes;
    results are identical at any worker count.
    """
    specs = dict(specs)
    if workers > 1 and len(records) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(specs, registry, tuple(field_spec), params, seed)) as pool:
            per_record = list(pool.map(_decode_in_worker, records, chunksize=max(1, len(records) // (4 * workers))))
    else:
        per_record = [_decode_record(r, specs, registry, tuple(field_spec), params, seed) for r in records]
    return {name: [out[name] for out in per_record] for name in specs}


def summary_lengths(records: Iterable[NoteRecord]) -> dict[str, tuple[float, float]]:
    """Mean and population std of word counts per field (cf. the data statistics table)."""
    records = list(records)
    out = {}
    for label, getter in (("O", lambda r: r.objective), ("S", lambda r: r.subjective),
                          ("A", lambda r: r.assessment), ("summary", lambda r: r.summary or "")):
        lens = np.array([len(tokenize(getter(r))) for r in records], dtype=np.float64)
        out[label] = (float(lens.mean()), float(lens.std())) if lens.size else (math.nan, math.nan)
    return out
