"""Shared fixtures, the session-wide optimizer bounds guard and acceptance reporting."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from pulseforge import optimizer  # noqa: E402
from pulseforge.device_model import builtin_device, device_from_dict  # noqa: E402
from pulseforge.problems import builtin_molecule  # noqa: E402

# ------------------------------------------------------------------ bounds guard


class BoundsGuard:
    """Checks every optimizer evaluation against its box, independently of the optimizer."""

    def __init__(self):
        self.evaluations = 0
        self.violations: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def check(self, x, lo, hi) -> None:
        x = np.asarray(x, dtype=float)
        self.evaluations += 1
        if np.any(x < lo) or np.any(x > hi):
            self.violations.append((x.copy(), lo.copy(), hi.copy()))


GUARD = BoundsGuard()
_original_call = optimizer._Evaluator.__call__


def _guarded_call(self, x):
    GUARD.check(x, self.bounds.lo, self.bounds.hi)
    return _original_call(self, x)


optimizer._Evaluator.__call__ = _guarded_call


@pytest.fixture
def bounds_guard() -> BoundsGuard:
    return GUARD


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last so its guard check covers every other test
    items.sort(key=lambda it: "test_acceptance.py" in it.nodeid)


# ------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (ok, detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            ok, detail = ACCEPTANCE[k]
            terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    terminalreporter.write_line(
        f"optimizer bounds guard: {GUARD.evaluations} evaluations, "
        f"{len(GUARD.violations)} out of bounds"
    )


def pytest_sessionfinish(session, exitstatus):
    if GUARD.violations and session.exitstatus == 0:
        session.exitstatus = 1


# ---------------------------------------------------------------------- fixtures


@pytest.fixture(scope="session")
def device():
    return builtin_device("two_qubit")


@pytest.fixture(scope="session")
def nobus_device():
    return builtin_device("two_qubit_nobus")


@pytest.fixture(scope="session")
def line4():
    return builtin_device("line4")


@pytest.fixture(scope="session")
def one_qubit_device():
    return device_from_dict({"name": "one", "n_qubits": 1, "qubit_freq": [5.0e9], "bus_cutoff": 1})


@pytest.fixture(scope="session")
def h2():
    return builtin_molecule("h2_0.75")


@pytest.fixture(scope="session")
def heh():
    return builtin_molecule("heh_plus")
