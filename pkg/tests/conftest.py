"""Shared builders and the session-wide synthetic corpus."""
from __future__ import annotations

import numpy as np
import pytest

from gazewalk.features import extract_features
from gazewalk.observation import GazeCode, GazeSample, TrajectoryRecord
from gazewalk.synth import default_archetypes, default_area, generate

CORPUS_SEED = 20220401


def make_record(points, codes, rid="r1", activities=("typing",), age_group="adult"):
    """Record from a list of (x, y) positions and code strings (or one code for all)."""
    if isinstance(codes, str):
        codes = [codes] * len(points)
    samples = tuple(GazeSample(t, float(x), float(y), GazeCode.parse(c)) for t, ((x, y), c) in enumerate(zip(points, codes)))
    return TrajectoryRecord(
        id=rid,
        gender="female",
        age_group=age_group,
        companions=0,
        activities=frozenset(activities),
        entry_gate="A",
        exit_gate="B",
        samples=samples,
    )


def straight(n, step, y=0.0):
    return [(i * step, y) for i in range(n)]


@pytest.fixture(scope="session")
def area():
    return default_area()


@pytest.fixture(scope="session")
def archetypes():
    return default_archetypes()


@pytest.fixture(scope="session")
def corpus(area, archetypes):
    return generate(area, archetypes, CORPUS_SEED)


@pytest.fixture(scope="session")
def corpus_features(corpus):
    return [extract_features(r) for r in corpus]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------- acceptance verdicts

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
