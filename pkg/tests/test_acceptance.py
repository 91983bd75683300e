"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines; sizes and
tolerances live in :mod:`reflectctl.acceptance`.
"""
from __future__ import annotations

import pytest

from reflectctl.acceptance import CHECKS

SEED = 1


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CHECKS), ids=[CHECKS[n].__name__.removeprefix("check_") for n in sorted(CHECKS)])
def test_criterion(number):
    result = CHECKS[number](seed=SEED, threads=1)
    print("\n" + result.line())
    for key, value in result.details.items():
        print(f"    {key}: {value}")
    assert result.passed, result.line()
