from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class Criterion:
    def __init__(self, number: int, name: str) -> None:
        self.number = number
        self.name = name

    def record(self, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE[self.number] = (self.name, bool(ok), detail)
        print(f"[criterion {self.number}] {'PASS' if ok else 'FAIL'} {self.name} {detail}".rstrip())


@pytest.fixture
def criterion():
    return Criterion


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("STVG_CACHE_DIR", str(tmp_path / "_cache"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
