import numpy as np
import pytest

from gazenet import data

_ACCEPTANCE_LINES = []


def record_criterion(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """2 persons x 10 frames; enough for loader and trainer plumbing tests."""
    root = tmp_path_factory.mktemp("tiny_ds")
    manifest = data.synth_generate(root, persons=2, frames_per_person=10, seed=7)
    return manifest


@pytest.fixture(scope="session")
def tiny_frames(tiny_dataset):
    return data.load_manifest(tiny_dataset)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
