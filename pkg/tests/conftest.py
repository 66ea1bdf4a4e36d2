import numpy as np
import pytest
import torch

from bpcodec.toycorpus import make_toy_corpus

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_corpus")
    make_toy_corpus(root, minutes=1.0, seconds_per_file=6.0, seed=7)
    return root


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``ok`` so tests can ``assert criterion(...)``."""

    def report(number, title, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title} ({detail})"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
