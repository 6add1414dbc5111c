import sys

import pytest


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line straight to the terminal, then assert."""

    def _report(label, ok, detail=""):
        with capsys.disabled():
            sys.stdout.write(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}\n")
        assert ok, f"{label}: {detail}"

    return _report
