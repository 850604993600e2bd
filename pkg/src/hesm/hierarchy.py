"""Hierarchical ensemble specifications and their evaluation.

A specification is a tree of three node kinds:

``Leaf(model_id)``
    one registered model, decoded with beam search;
``TokenEnsemble(children)``
    a token-level ensemble of distribution-producing children, decoded as
    one model;
``MbrSelect(children)``
    evaluates every child to text and picks the consensus candidate.

Decoding parameters set on a node apply to every distribution-producing
node beneath it that does not set its own.

Spec files are JSON::

    {"kind": "mbr", "reward": {"variant": "L", "field": "f1"},
     "children": [
        {"kind": "token_ensemble", "children": [{"kind": "leaf", "model": "θ_A-1"},
                                                {"kind": "leaf", "model": "θ_AS-1"}]},
        {"kind": "leaf", "model": "θ_A-2", "params": {"num_beams": 2}}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence, Union

from hesm.combine import TokenEnsembleModel
from hesm.decode import DecodeParams, beam_search
from hesm.mbr import DEFAULT_REWARD, CandidatePool, Reward, mbr_select
from hesm.model import SequenceModel

Params = tuple[tuple[str, object], ...]


def _freeze_params(params: Mapping | None) -> Params:
    return tuple(sorted((params or {}).items()))


@dataclass(frozen=True)
class Leaf:
    model_id: str
    params: Params = ()


@dataclass(frozen=True)
class TokenEnsemble:
    children: tuple["Spec", ...]
    params: Params = ()


@dataclass(frozen=True)
class MbrSelect:
    children: tuple["Spec", ...]
    reward: Reward = DEFAULT_REWARD
    params: Params = ()
    beams_per_child: int = 1


Spec = Union[Leaf, TokenEnsemble, MbrSelect]


class SpecError(ValueError):
    """Invalid specification, or a failure while evaluating one (``path`` locates the node)."""

    def __init__(self, message: str, path: str = "root"):
        super().__init__(f"{path}: {message}")
        self.path = path


class ModelRegistry(dict):
    """``model_id -> model``; ids may only be registered once."""

    def register(self, model_id: str, model: SequenceModel) -> None:
        if model_id in self:
            raise KeyError(f"model id {model_id!r} already registered")
        self[model_id] = model


# ---------------------------------------------------------------------------
# (de)serialization


def spec_from_dict(data: Mapping, path: str = "root") -> Spec:
    if not isinstance(data, Mapping):
        raise SpecError(f"expected a node object, got {type(data).__name__}", path)
    kind = data.get("kind")
    params = data.get("params") or {}
    try:
        DecodeParams().updated(params)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad params: {exc}", path) from None
    frozen = _freeze_params(params)
    if kind == "leaf":
        if not isinstance(data.get("model"), str):
            raise SpecError("leaf needs a string 'model'", path)
        return Leaf(data["model"], frozen)
    children = data.get("children")
    if not isinstance(children, list):
        raise SpecError(f"{kind!r} node needs a 'children' list", path)
    kids = tuple(spec_from_dict(c, f"{path}.children[{i}]") for i, c in enumerate(children))
    if kind == "token_ensemble":
        return TokenEnsemble(kids, frozen)
    if kind == "mbr":
        reward = data.get("reward") or {}
        try:
            rw = Reward.parse(reward.get("variant", "L"), reward.get("field", "f1"))
        except ValueError as exc:
            raise SpecError(str(exc), path) from None
        beams = data.get("beams_per_child", 1)
        if not isinstance(beams, int) or beams < 1:
            raise SpecError("beams_per_child must be a positive integer", path)
        return MbrSelect(kids, rw, frozen, beams)
    raise SpecError(f"unknown node kind {kind!r}", path)


def spec_to_dict(spec: Spec) -> dict:
    out: dict
    if isinstance(spec, Leaf):
        out = {"kind": "leaf", "model": spec.model_id}
    elif isinstance(spec, TokenEnsemble):
        out = {"kind": "token_ensemble", "children": [spec_to_dict(c) for c in spec.children]}
    else:
        out = {"kind": "mbr", "children": [spec_to_dict(c) for c in spec.children]}
        if spec.reward != DEFAULT_REWARD:
            out["reward"] = spec.reward.to_dict()
        if spec.beams_per_child != 1:
            out["beams_per_child"] = spec.beams_per_child
    if spec.params:
        out["params"] = dict(spec.params)
    return out


def load_spec(path: str | Path) -> Spec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecError(f"not valid JSON: {exc}", str(path)) from None
    return spec_from_dict(data)


def dump_spec(spec: Spec) -> str:
    return json.dumps(spec_to_dict(spec), ensure_ascii=False, indent=1) + "\n"


# ---------------------------------------------------------------------------
# validation


def leaves(spec: Spec) -> Iterator[Leaf]:
    if isinstance(spec, Leaf):
        yield spec
    else:
        for child in spec.children:
            yield from leaves(child)


def validate_spec(spec: Spec, registry: Mapping[str, SequenceModel]) -> list[str]:
    """Every violation found in ``spec``; an empty list means it is valid."""
    problems: list[str] = []
    _validate(spec, registry, "root", False, problems)
    return problems


def _validate(spec, registry, path, under_ensemble, problems) -> None:
    if isinstance(spec, Leaf):
        if spec.model_id not in registry:
            problems.append(f"{path}: unresolved model {spec.model_id!r}")
        return
    if not isinstance(spec, (TokenEnsemble, MbrSelect)):
        problems.append(f"{path}: unknown node type {type(spec).__name__}")
        return
    if isinstance(spec, MbrSelect) and under_ensemble:
        problems.append(f"{path}: MBR node under token ensemble")
    if not spec.children:
        problems.append(f"{path}: node has no children")
    is_ensemble = isinstance(spec, TokenEnsemble)
    for i, child in enumerate(spec.children):
        _validate(child, registry, f"{path}.children[{i}]", under_ensemble or is_ensemble, problems)
    if is_ensemble and not under_ensemble:
        first = None
        for leaf in leaves(spec):
            model = registry.get(leaf.model_id)
            if model is None:
                continue
            if first is None:
                first = model.vocab
            elif model.vocab != first:
                problems.append(f"{path}: vocabulary mismatch at model {leaf.model_id!r}")


# ---------------------------------------------------------------------------
# evaluation


class Evaluator:
    """Evaluates specification nodes for one input, memoizing every subtree.

    ``x`` is either input text (encoded by each model's own vocabulary) or a
    sequence of token ids. Identical subtrees under identical decoding
    parameters are decoded once, so evaluating many fixtures that share
    members costs little more than evaluating the distinct members.
    """

    def __init__(self, registry: Mapping[str, SequenceModel], x: str | Sequence[int],
                 params: DecodeParams = DecodeParams(), seed: int = 0):
        self.registry = registry
        self.x = x
        self.params = params
        # beam search consumes no randomness; the seed is kept for provenance
        self.seed = seed
        self._memo: dict = {}
        self._encoded: dict = {}

    def evaluate(self, spec: Spec) -> str:
        return self._texts(spec, self.params, 1, "root")[0]

    def pool(self, spec: MbrSelect) -> CandidatePool:
        """The candidate pool an MBR node selects from."""
        params = self.params.updated(dict(spec.params))
        texts, labels = self._gather(spec, params, "root")
        return CandidatePool(texts, labels)

    def _input_ids(self, model: SequenceModel) -> tuple[int, ...]:
        if not isinstance(self.x, str):
            return tuple(self.x)
        key = id(model.vocab)
        hit = self._encoded.get(key)
        if hit is None or hit[0] is not model.vocab:
            hit = (model.vocab, tuple(model.vocab.encode(self.x)))
            self._encoded[key] = hit
        return hit[1]

    def _texts(self, spec: Spec, inherited: DecodeParams, k: int, path: str) -> list[str]:
        params = inherited.updated(dict(spec.params))
        key = (spec, params, k)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        try:
            if isinstance(spec, MbrSelect):
                texts, _ = self._gather(spec, params, path)
                out = [mbr_select(texts, spec.reward).selected_text]
            else:
                model = self.build_model(spec, path)
                hyps = beam_search(model, self._input_ids(model), params)
                out = [model.vocab.decode(h.ids) for h in hyps[:k]]
        except SpecError:
            raise
        except Exception as exc:
            raise SpecError(f"{type(exc).__name__}: {exc}", path) from exc
        self._memo[key] = out
        return out

    def _gather(self, spec: MbrSelect, params: DecodeParams, path: str) -> tuple[list[str], list[str]]:
        texts, labels = [], []
        for i, child in enumerate(spec.children):
            k = 1 if isinstance(child, MbrSelect) else spec.beams_per_child
            child_texts = self._texts(child, params, k, f"{path}.children[{i}]")
            texts.extend(child_texts)
            name = describe_spec(child)
            labels.extend(name if len(child_texts) == 1 else f"{name}#{j}" for j in range(len(child_texts)))
        return texts, labels

    def build_model(self, spec: Spec, path: str = "root") -> SequenceModel:
        if isinstance(spec, Leaf):
            try:
                return self.registry[spec.model_id]
            except KeyError:
                raise SpecError(f"unresolved model {spec.model_id!r}", path) from None
        if isinstance(spec, TokenEnsemble):
            return TokenEnsembleModel(
                [self.build_model(c, f"{path}.children[{i}]") for i, c in enumerate(spec.children)]
            )
        raise SpecError("MBR node under token ensemble", path)


def evaluate_spec(spec: Spec, registry: Mapping[str, SequenceModel], x: str | Sequence[int],
                  params: DecodeParams = DecodeParams(), seed: int = 0) -> str:
    problems = validate_spec(spec, registry)
    if problems:
        raise SpecError("; ".join(problems))
    return Evaluator(registry, x, params, seed).evaluate(spec)


# ---------------------------------------------------------------------------
# rendering


def _role(model_id: str) -> str | None:
    base = model_id.removeprefix("θ_").removeprefix("theta_")
    if base.startswith("AS"):
        return "AS"
    if base.startswith("A"):
        return "A"
    return None


def describe_spec(spec: Spec) -> str:
    """Compact rendering: ``(a, b)`` for a token ensemble of ``a`` θ_A and ``b``
    θ_AS models, ``<child> / MBR=c`` when all ``c`` MBR children render alike."""
    if isinstance(spec, Leaf):
        return spec.model_id
    if isinstance(spec, TokenEnsemble):
        ids = [leaf.model_id for leaf in leaves(spec)]
        roles = [_role(i) for i in ids]
        if None in roles:
            return "TokEns[" + ", ".join(ids) + "]"
        return f"({roles.count('A')}, {roles.count('AS')})"
    parts = [describe_spec(c) for c in spec.children]
    if len(set(parts)) == 1:
        return f"{parts[0]} / MBR={len(parts)}"
    return f"MBR={len(parts)}[" + "; ".join(parts) + "]"
