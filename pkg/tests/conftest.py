from __future__ import annotations

from pathlib import Path

import pytest

from schemaparse.constraints import build
from schemaparse.schema import load_builtin
from schemaparse.tree import parse_linear

BUNDLE_NAMES = ("PIZZA", "BURRITO", "SUB", "BURGER", "COFFEE")
FIXTURES = Path(__file__).parent / "fixtures"


def load_worked_parses():
    """(bundle, utterance, parse) rows of the hand-transcribed worked examples."""
    rows = []
    for line in (FIXTURES / "worked_parses.tsv").read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        bundle, utterance, parse = line.split("\t")
        rows.append((bundle, utterance, parse_linear(parse)))
    return rows


@pytest.fixture(scope="session")
def bundles():
    return {name: load_builtin(name) for name in BUNDLE_NAMES}


@pytest.fixture(scope="session")
def engines(bundles):
    return {name: build(b) for name, b in bundles.items()}


@pytest.fixture(scope="session")
def worked_parses():
    return load_worked_parses()


#: criterion number -> "PASS ..." / "FAIL ..." / "SKIP ..." line, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
