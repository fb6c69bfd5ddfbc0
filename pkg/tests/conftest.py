import shutil

import pytest

from plvseg.corpus import make_corpus, write_corpus


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Three small mosaics with ground truth, written once per session."""
    root = tmp_path_factory.mktemp("tiny")
    write_corpus(make_corpus(3, shape=(48, 64)), root)
    return root


@pytest.fixture
def dataset_copy(tiny_dataset, tmp_path):
    dst = tmp_path / "data"
    shutil.copytree(tiny_dataset, dst)
    return dst


ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
