import numpy as np
import pytest

from diseasevec.embedding import EmbeddingTable
from diseasevec.vocab import Vocabulary


@pytest.fixture
def abc_vocab():
    # built from ["a a b", "a c"]
    return Vocabulary(("<unk>", "a", "b", "c"), (0, 3, 1, 1))


@pytest.fixture
def orthogonal_table():
    """Rows for <unk>, a, b, c: a/b/c are the unit axes."""
    return EmbeddingTable(np.array([[1.0, 1.0, 1.0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]))


class DictEmbedder:
    """Embedder backed by a plain text -> vector mapping."""

    def __init__(self, vectors):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}

    def __call__(self, text):
        return self.vectors[text]


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion with a summary line")
    config._acceptance_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        item.config._acceptance_results.append((marker.args[0], report.passed))


def pytest_terminal_summary(terminalreporter, config):
    results = config._acceptance_results
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed in results:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}")
