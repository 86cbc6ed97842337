"""The twelve acceptance criteria at their stated tolerances.

The trial budget follows ``PEAKFIELD_PROFILE`` (``full`` by default,
``quick`` for a faster pass). Each criterion prints one PASS/FAIL line.
"""
import os
import sys

import pytest

from peakfield.harness.acceptance import CRITERIA, PROFILES, run_criterion

PROFILE = os.environ.get("PEAKFIELD_PROFILE", "full")
assert PROFILE in PROFILES, f"PEAKFIELD_PROFILE must be one of {PROFILES}"


@pytest.mark.slow
@pytest.mark.parametrize("k", range(1, len(CRITERIA) + 1), ids=lambda k: f"criterion_{k:02d}")
def test_criterion(k, capsys):
    res = run_criterion(k, PROFILE)
    with capsys.disabled():
        sys.stdout.write(f"\n{res.line()}\n")
    assert res.passed, res.summary
