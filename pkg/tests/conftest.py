import itertools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hesm.harness import synth_corpus  # noqa: E402
from hesm.model import TableModel, Vocab  # noqa: E402
from hesm.zoo import build_roster  # noqa: E402


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(11, 60)


@pytest.fixture(scope="session")
def small_roster(small_corpus):
    return build_roster(small_corpus[:48])


def random_table_model(rng: np.random.Generator, n_tokens: int, depth: int, quantized: bool = False) -> TableModel:
    """A table model over ``n_tokens`` content tokens plus EOS, with a distinct
    distribution for every prefix of up to ``depth`` tokens. Reserved ids other
    than EOS get no mass. Quantized models draw from a coarse grid so exact
    score ties are common."""
    vocab = Vocab([chr(ord("a") + i) for i in range(n_tokens)])
    support = [vocab.eos] + [vocab.id(chr(ord("a") + i)) for i in range(n_tokens)]

    def draw():
        probs = np.zeros(len(vocab))
        if quantized:
            w = rng.integers(0, 3, size=len(support)).astype(float)
            if w.sum() == 0:
                w[rng.integers(len(support))] = 1.0
        else:
            w = rng.dirichlet(np.ones(len(support)))
            w[rng.random(len(support)) < 0.2] = 0.0
            if w.sum() == 0:
                w[0] = 1.0
        probs[support] = w / w.sum()
        return probs

    table = {}
    content = support[1:]
    for length in range(depth + 1):
        for prefix in itertools.product(content, repeat=length):
            table[(None, prefix)] = draw()
    return TableModel(vocab, table, draw())


# -- acceptance criteria reporting --------------------------------------------

_CRITERIA: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.failed or (report.when == "call"):
        status = "PASS" if report.passed else "FAIL"
        previous = _CRITERIA.get(number)
        if previous is None or previous[1] == "PASS":
            _CRITERIA[number] = (title, status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, duration = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title} ({duration:.1f} s)")
