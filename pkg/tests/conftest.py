import os
from pathlib import Path

import pytest

from postbound.frontend import load_program

BENCH = Path(__file__).resolve().parents[1] / "src" / "postbound" / "benchmarks"


@pytest.fixture
def bench():
    def load(name: str):
        return load_program(str(BENCH / f"{name}.bppl"))
    return load


def pytest_configure(config):
    os.environ.setdefault("PYTHONHASHSEED", "0")


# acceptance results, printed once at the end of the run
_RESULTS: list[tuple[int, bool, str]] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    _RESULTS.append((criterion, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
