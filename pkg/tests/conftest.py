import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from melodyssl import ssl, synth  # noqa: E402


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small corpus on disk: 4 labeled (3 train / 1 val), 3 vocal + 1 instrumental unlabeled, 2 test."""
    root = tmp_path_factory.mktemp("tiny") / "corpus"
    synth.build_corpus(root, 4, 3, 2, 1, master_seed=123)
    return root


@pytest.fixture(scope="session")
def tiny_splits(tiny_corpus):
    return ssl.corpus_splits(tiny_corpus)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
