"""Acceptance gate: one test per quantitative criterion.

Each test prints its PASS/FAIL line so the suite output doubles as the
verification report; ``pmsgctrl verify`` runs the same functions.
"""

import time

import pytest

from pmsgctrl import acceptance

_MODULE_T0 = time.perf_counter()


@pytest.mark.parametrize("code,title,func", acceptance.CRITERIA, ids=[c[0] for c in acceptance.CRITERIA])
def test_criterion(code, title, func):
    ok, detail = func()
    print(f"{'PASS' if ok else 'FAIL'} {code} {title}: {detail}")
    assert ok, f"{code} {title}: {detail}"


def test_suite_runtime_budget():
    elapsed = time.perf_counter() - _MODULE_T0
    print(f"acceptance module elapsed {elapsed:.1f} s (< 300 s)")
    assert elapsed < 300.0
