import numpy as np
import pytest
import torch

from childadult.corpus import SessionManifest, load_manifest, synth_corpus, synth_session, write_wav


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Four 15 s synthetic sessions written once per test run."""
    out = tmp_path_factory.mktemp("small_corpus")
    synth_corpus(out, n_sessions=4, session_duration=15.0, seed=3)
    return load_manifest(out / "manifest.json")


@pytest.fixture
def make_session(tmp_path):
    """Write a synthetic session of arbitrary length and return its manifest."""
    counter = iter(range(10_000))

    def make(duration: float, seed: int = 0, session_id: str | None = None) -> SessionManifest:
        sid = session_id or f"s{next(counter):03d}"
        manifest, audio = synth_session(sid, duration, np.random.default_rng(seed))
        path = tmp_path / f"{sid}.wav"
        write_wav(path, audio)
        manifest.audio_path = str(path)
        return manifest

    return make


# one summary line per acceptance criterion, printed after the run
_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[name] = "PASS" if report.outcome == "passed" else report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_criteria.items()):
        terminalreporter.write_line(f"{outcome:<7} {name}")
