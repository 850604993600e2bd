"""Model rosters and checked-in fixtures for the reported ensemble shapes.

The roster mirrors the experimental setup at toy scale: nine copy-mixture
models reading the assessment (``θ_A-1..9``) and nine reading assessment
plus subjective (``θ_AS-1..9``), each trained on its own bootstrap shard.
:func:`build_competition_roster` adds the extra members needed by the
submission-style fixtures:

================ ========================================================
``θ_A-wavg``      weight average of ``θ_A-1..9`` (``θ_AS-wavg`` likewise)
``θ_A-best``      a standalone θ_A member
``θ_A-w-1..3``    sources of ``θ_A-wavg3``, their weight average
``θ_A-rl-1..3``   θ_A members whose copy weight is re-picked to maximize
                  greedy-decode ROUGE-L (a stand-in for RL fine-tuning)
``θ_A-b-1..9``    a second batch of nine θ_A members
``θ_A-v1-1..3``   aliases of the three ``θ_A-i`` with the lowest training
                  cross-entropy (``θ_AS-v1`` likewise)
``θ_A-v2-1..3``   the v1 members retrained on the same shards as trigram
                  models with lighter smoothing (``θ_AS-v2`` likewise)
================ ========================================================

Fixture files live in ``hesm/fixtures/*.json`` and are regenerated with
``python -m hesm.zoo``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from hesm.combine import weight_average
from hesm.decode import DecodeParams, greedy_search
from hesm.harness import NoteRecord, assemble_input
from hesm.hierarchy import (Leaf, MbrSelect, ModelRegistry, Spec, TokenEnsemble, leaves, spec_from_dict,
                            spec_to_dict)
from hesm.model import CopyMixModel, Vocab, sequence_logprob, train_copymix
from hesm.rouge import rouge_l
from hesm.text import tokenize

FIELDS_A = ("A",)
FIELDS_AS = ("A", "S")
ORDER = 2
ALPHA = 0.1
LAM_GRID = (0.2, 0.4, 0.6, 0.8)
V2_ORDER = 3
V2_ALPHA = 0.05
LOSS_SAMPLE = 128
RL_SAMPLE = 64
FIXTURE_DIR = "fixtures"


def default_seeds(base: int = 0) -> list[int]:
    """Eighteen shard seeds: nine for θ_A members, then nine for θ_AS."""
    return [base * 1000 + i for i in range(1, 19)]


def shared_vocab(corpus: Sequence[NoteRecord]) -> Vocab:
    return Vocab.build(
        text for r in corpus for text in (r.assessment, r.subjective, r.objective, r.summary or "")
    )


def _pairs(corpus: Sequence[NoteRecord], fields: Sequence[str]) -> list[tuple[str, str]]:
    return [(assemble_input(r, fields), r.summary) for r in corpus if r.summary is not None]


def _train(corpus, fields, seed, vocab, order=ORDER, alpha=ALPHA, member=""):
    try:
        return train_copymix(_pairs(corpus, fields), order, alpha, LAM_GRID, seed, vocab=vocab,
                             fields=tuple(fields))
    except Exception as exc:
        raise RuntimeError(f"training {member or 'model'} failed: {exc}") from exc


def build_roster(
    corpus: Sequence[NoteRecord],
    seeds: Sequence[int] | None = None,
    field_specs: tuple[Sequence[str], Sequence[str]] = (FIELDS_A, FIELDS_AS),
    vocab: Vocab | None = None,
) -> ModelRegistry:
    """Nine θ_A and nine θ_AS copy-mixture models on distinct bootstrap shards."""
    if not corpus:
        raise ValueError("cannot build a roster from an empty corpus")
    seeds = list(default_seeds() if seeds is None else seeds)
    if len(seeds) != 18:
        raise ValueError(f"need 18 seeds (9 + 9), got {len(seeds)}")
    vocab = vocab or shared_vocab(corpus)
    registry = ModelRegistry()
    for role, fields, group in (("A", field_specs[0], seeds[:9]), ("AS", field_specs[1], seeds[9:])):
        for i, seed in enumerate(group, start=1):
            name = f"θ_{role}-{i}"
            registry.register(name, _train(corpus, fields, seed, vocab, member=name))
    return registry


def _sample(corpus: Sequence[NoteRecord], size: int, seed: int) -> list[NoteRecord]:
    labelled = [r for r in corpus if r.summary is not None]
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = sorted(rng.choice(len(labelled), size=min(size, len(labelled)), replace=False).tolist())
    return [labelled[i] for i in idx]


def training_loss(model: CopyMixModel, records: Sequence[NoteRecord]) -> float:
    """Mean per-token cross-entropy (nats) of the reference summaries under teacher forcing."""
    fields = model.fields or ("A", "S", "O")
    total, tokens = 0.0, 0
    for r in records:
        x = model.vocab.encode(assemble_input(r, fields))
        y = model.vocab.encode(r.summary) + [model.vocab.eos]
        total -= sequence_logprob(model, x, y)
        tokens += len(y)
    return total / max(tokens, 1)


def rl_tuned(model: CopyMixModel, corpus: Sequence[NoteRecord], seed: int,
             params: DecodeParams = DecodeParams(), sample: int = RL_SAMPLE) -> CopyMixModel:
    """Copy of ``model`` with the copy weight re-picked by greedy-decode ROUGE-L F1
    on a seeded sample of ``corpus``."""
    records = _sample(corpus, sample, seed)
    fields = model.fields or ("A", "S", "O")
    best = None
    for lam in LAM_GRID:
        cand = CopyMixModel(model.vocab, model.counts, model.order, model.alpha, lam,
                            model.shard_seed, model.eos_share, model.fields)
        total = 0.0
        for r in records:
            hyp = greedy_search(cand, cand.vocab.encode(assemble_input(r, fields)), params)
            total += rouge_l(tokenize(cand.vocab.decode(hyp.ids)), tokenize(r.summary)).f1
        if best is None or total > best[0]:
            best = (total, cand)
    return best[1]


def build_competition_roster(
    corpus: Sequence[NoteRecord], seed: int = 0, params: DecodeParams = DecodeParams()
) -> ModelRegistry:
    """Core roster plus every extra member used by the submission fixtures."""
    vocab = shared_vocab(corpus)
    seeds = default_seeds(seed)
    registry = build_roster(corpus, seeds, vocab=vocab)
    base = seed * 1000
    registry.register("θ_A-wavg", weight_average([registry[f"θ_A-{i}"] for i in range(1, 10)]))
    registry.register("θ_AS-wavg", weight_average([registry[f"θ_AS-{i}"] for i in range(1, 10)]))
    registry.register("θ_A-best", _train(corpus, FIELDS_A, base + 100, vocab, member="θ_A-best"))
    sources = []
    for i in range(1, 4):
        name = f"θ_A-w-{i}"
        sources.append(_train(corpus, FIELDS_A, base + 110 + i, vocab, member=name))
        registry.register(name, sources[-1])
    registry.register("θ_A-wavg3", weight_average(sources))
    for i in range(1, 4):
        name = f"θ_A-rl-{i}"
        trained = _train(corpus, FIELDS_A, base + 120 + i, vocab, member=name)
        registry.register(name, rl_tuned(trained, corpus, base + 120 + i, params))
    for i in range(1, 10):
        name = f"θ_A-b-{i}"
        registry.register(name, _train(corpus, FIELDS_A, base + 130 + i, vocab, member=name))

    probe = _sample(corpus, LOSS_SAMPLE, base + 200)
    for role, fields, group in (("A", FIELDS_A, seeds[:9]), ("AS", FIELDS_AS, seeds[9:])):
        losses = [(training_loss(registry[f"θ_{role}-{i}"], probe), i) for i in range(1, 10)]
        chosen = sorted(i for _, i in sorted(losses)[:3])
        for j, i in enumerate(chosen, start=1):
            registry.register(f"θ_{role}-v1-{j}", registry[f"θ_{role}-{i}"])
            name = f"θ_{role}-v2-{j}"
            registry.register(name, _train(corpus, fields, group[i - 1], vocab, V2_ORDER, V2_ALPHA, member=name))
    return registry


CORE_IDS = frozenset(f"θ_{r}-{i}" for r in ("A", "AS") for i in range(1, 10))


def build_registry_for(specs: Sequence[Spec], corpus: Sequence[NoteRecord], seed: int = 0,
                       params: DecodeParams = DecodeParams()) -> ModelRegistry:
    """The core roster when it resolves every model id in ``specs``, else the full one."""
    needed = {leaf.model_id for spec in specs for leaf in leaves(spec)}
    if needed <= CORE_IDS:
        return build_roster(corpus, default_seeds(seed))
    return build_competition_roster(corpus, seed, params)


# ---------------------------------------------------------------------------
# fixtures


@dataclass(frozen=True)
class Fixture:
    """A named system shape shown as one report row in ``group``.

    With ``aggregate == "systems"`` the row is the mean ± std over the
    listed systems evaluated separately; otherwise ``systems`` holds one
    spec and the row is mean ± std over records.
    """

    name: str
    group: str
    row: str
    systems: tuple[Spec, ...]
    aggregate: str = "records"

    def __post_init__(self):
        if self.aggregate not in ("records", "systems"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")
        if not self.systems:
            raise ValueError(f"fixture {self.name} has no systems")
        if self.aggregate == "records" and len(self.systems) != 1:
            raise ValueError(f"fixture {self.name} aggregates over records but lists {len(self.systems)} systems")

    def to_dict(self) -> dict:
        return {"name": self.name, "group": self.group, "row": self.row, "aggregate": self.aggregate,
                "systems": [spec_to_dict(s) for s in self.systems]}

    @classmethod
    def from_dict(cls, data: dict) -> "Fixture":
        return cls(data["name"], data["group"], data["row"],
                   tuple(spec_from_dict(s) for s in data["systems"]), data.get("aggregate", "records"))

    @property
    def spec(self) -> Spec:
        if len(self.systems) != 1:
            raise ValueError(f"fixture {self.name} holds {len(self.systems)} systems")
        return self.systems[0]

    def system_names(self) -> list[str]:
        if len(self.systems) == 1:
            return [self.name]
        return [f"{self.name}/{i + 1}" for i in range(len(self.systems))]


GROUP_A = "nine θ_A"
GROUP_AS = "nine θ_AS"
GROUP_11 = "HESM (1, 1)"
GROUP_33 = "HESM (3, 3)"
GROUP_MEMBERS = "HESM members"
GROUP_FINAL = "higher-level HESM"
GROUP_UNPACK = "unpacked MBR"

# the row every other row of a group is compared against
GROUP_BASELINES = {
    GROUP_A: "individual-A",
    GROUP_AS: "individual-AS",
    GROUP_11: "tokens-1-1",
    GROUP_33: "tokens-3-3",
    GROUP_MEMBERS: "best-A",
    GROUP_FINAL: "hesm-shallow",
    GROUP_UNPACK: "hesm-final",
}

NINE = range(1, 10)
THREE = range(1, 4)


def _leaves(role: str, idx: Sequence[int], tag: str = "") -> tuple[Leaf, ...]:
    return tuple(Leaf(f"θ_{role}-{tag}{i}") for i in idx)


def _ens(*groups: Sequence[Leaf]) -> TokenEnsemble:
    return TokenEnsemble(tuple(leaf for g in groups for leaf in g))


def _window(start: int) -> list[int]:
    return [(start + j) % 9 + 1 for j in range(3)]


def _pair_window(start: int) -> TokenEnsemble:
    return _ens(_leaves("A", _window(start)), _leaves("AS", _window(start)))


def build_fixtures() -> list[Fixture]:
    fx: list[Fixture] = []
    for role, group in (("A", GROUP_A), ("AS", GROUP_AS)):
        members = _leaves(role, NINE)
        fx += [
            Fixture(f"individual-{role}", group, "Individual", members, "systems"),
            Fixture(f"wavg-{role}", group, "Weight Avg.", (Leaf(f"θ_{role}-wavg"),)),
            Fixture(f"tokens-{role}", group, "Tok. Ensemble", (TokenEnsemble(members),)),
            Fixture(f"mbr-{role}", group, "MBR Decoding", (MbrSelect(members),)),
        ]

    pairs = tuple(_ens(_leaves("A", [i]), _leaves("AS", [i])) for i in NINE)
    fx += [
        Fixture("tokens-1-1", GROUP_11, "θ_A+θ_AS", pairs, "systems"),
        Fixture("hesm-1-1-mbr9", GROUP_11, "HESM", (MbrSelect(pairs),)),
    ]

    # disjoint seed groups 1-3, 4-6, 7-9; the MBR=9 pool adds the wrapped windows
    disjoint = tuple(_pair_window(s) for s in (0, 3, 6))
    sliding = tuple(_pair_window(s) for s in range(9))
    fx += [
        Fixture("tokens-3-3", GROUP_33, "θ_A+θ_AS", disjoint, "systems"),
        Fixture("hesm-3-3-mbr3", GROUP_33, "HESM", (MbrSelect(disjoint),)),
        Fixture("hesm-3-3-mbr9", GROUP_33, "HESM", (MbrSelect(sliding),)),
    ]

    members = {
        "best-A": ("Best-performing θ_A", Leaf("θ_A-best")),
        "wavg-3A": ("Weight Avg. of 3θ_A", Leaf("θ_A-wavg3")),
        "tokens-3A-rl": ("TokEns 3θ_A w/ RL", _ens(_leaves("A", THREE, "rl-"))),
        "tokens-9A-v1": ("TokEns 9θ_A-v1", _ens(_leaves("A", NINE, "b-"))),
        "tokens-9A-v2": ("TokEns 9θ_A-v2", _ens(_leaves("A", NINE))),
        "tokens-9AS": ("TokEns 9θ_AS", _ens(_leaves("AS", NINE))),
    }
    for name, (row, spec) in members.items():
        fx.append(Fixture(name, GROUP_MEMBERS, row, (spec,)))

    shallow = MbrSelect(tuple(spec for _, spec in members.values()))
    v1 = _ens(_leaves("A", THREE, "v1-"), _leaves("AS", THREE, "v1-"))
    v2 = _ens(_leaves("A", THREE, "v2-"), _leaves("AS", THREE, "v2-"))
    final = MbrSelect((shallow, v1, v2))
    fx += [
        Fixture("hesm-shallow", GROUP_FINAL, "HESM", (shallow,)),
        Fixture("tokens-3-3-v1", GROUP_FINAL, "TokEns(3θ_A+3θ_AS)-v1", (v1,)),
        Fixture("tokens-3-3-v2", GROUP_FINAL, "TokEns(3θ_A+3θ_AS)-v2", (v2,)),
        Fixture("hesm-final", GROUP_FINAL, "+ MBR Combination", (final,)),
    ]

    unpack1 = shallow.children + v1.children + v2.children
    unpack2 = (
        (Leaf("θ_A-best"),) + _leaves("A", THREE, "w-") + _leaves("A", THREE, "rl-")
        + _leaves("A", NINE, "b-") + _leaves("A", NINE) + _leaves("AS", NINE)
    )
    fx += [
        Fixture("unpack-1", GROUP_UNPACK, "HESM-unpack-1", (MbrSelect(unpack1),)),
        Fixture("unpack-2", GROUP_UNPACK, "HESM-unpack-2", (MbrSelect(unpack2),)),
    ]
    return fx


def _fixture_root():
    return resources.files("hesm").joinpath(FIXTURE_DIR)


def list_fixtures() -> list[Fixture]:
    """Every checked-in fixture, in report order."""
    root = _fixture_root()
    index = json.loads(root.joinpath("index.json").read_text(encoding="utf-8"))
    return [Fixture.from_dict(json.loads(root.joinpath(f"{name}.json").read_text(encoding="utf-8")))
            for name in index]


def get_fixture(name: str) -> Fixture:
    for fixture in list_fixtures():
        if fixture.name == name:
            return fixture
    raise KeyError(f"no fixture named {name!r}")


def fixture_json(fixture: Fixture) -> str:
    return json.dumps(fixture.to_dict(), ensure_ascii=False, indent=1) + "\n"


def write_fixtures(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fixtures = build_fixtures()
    paths = []
    for fixture in fixtures:
        path = directory / f"{fixture.name}.json"
        path.write_text(fixture_json(fixture), encoding="utf-8")
        paths.append(path)
    (directory / "index.json").write_text(
        json.dumps([f.name for f in fixtures], ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )
    return paths


if __name__ == "__main__":
    for p in write_fixtures(Path(__file__).parent / FIXTURE_DIR):
        print(p)
