from pathlib import Path

import numpy as np
import pytest

from mlsolv.embed import SkipGramConfig, pretrain_on_graphs
from mlsolv.io import ingest_freesolv, read_corpus
from mlsolv.molgraph import parse_smiles

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"

SMALL_CORPUS = [
    "O", "CCO", "CCCCCC", "c1ccccc1", "CCCCCCl", "CCCCC=O", "CCCCCN", "CC(=O)O", "c1ccncc1", "CC(C)O",
    "ClC(Cl)Cl", "CS(=O)C", "CC#N", "c1ccc(O)cc1", "C1CCCCC1", "CCOC(=O)C", "Brc1ccccc1", "CCS", "CI", "FC(F)F",
]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by the test")
    config._criteria = {}
    config._criteria_notes = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    number, text = crit
    table = report.config_criteria
    prev = table.get(number, (text, True))
    table[number] = (text, prev[1] and report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = (marker.args[0], marker.args[1])
        report.config_criteria = item.config._criteria


def pytest_terminal_summary(terminalreporter, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        text, ok = criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {text}")
        for note in config._criteria_notes.get(number, []):
            terminalreporter.write_line(f"              {note}")


@pytest.fixture
def measured(request):
    """``measured("MUE 0.03")`` attaches a measured value to the test's criterion line."""
    marker = request.node.get_closest_marker("criterion")
    notes = request.config._criteria_notes

    def note(text):
        print(text)
        if marker is not None:
            notes.setdefault(marker.args[0], []).append(text)
    return note


@pytest.fixture(scope="session")
def small_table():
    """8-dimensional table trained on a handful of molecules (fast unit tests)."""
    graphs = [parse_smiles(s) for s in SMALL_CORPUS]
    return pretrain_on_graphs(graphs, SkipGramConfig(dim=8, epochs=20, seed=1))


@pytest.fixture(scope="session")
def corpus_table():
    """Default 128-dimensional table pretrained on the bundled corpus."""
    graphs, _ = read_corpus(DATA / "corpus.smi")
    return pretrain_on_graphs(graphs, SkipGramConfig())


@pytest.fixture(scope="session")
def freesolv():
    return ingest_freesolv(DATA / "freesolv.csv")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
