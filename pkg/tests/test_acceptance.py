"""Acceptance criteria, one test per criterion, at their stated tolerances.

Runs the ``full`` suite by default (about a minute and a half); set
``MSD_SUITE=quick`` for a faster pass with wider Monte-Carlo error.
Each test prints its table and a ``criterion N: PASS|FAIL`` line, and the
lines are repeated in the terminal summary.
"""

import os

import pytest

from msdenoise import verify as vf

SUITE = os.environ.get("MSD_SUITE", "full")
RESULTS = {}


@pytest.mark.parametrize("criterion", sorted(vf.CRITERIA))
def test_criterion(criterion):
    rows = vf.run_suite(SUITE, [criterion], seed=0)
    failed = [r for r in rows if r.passed is False]
    verdict = "FAIL" if failed else "PASS"
    RESULTS[criterion] = f"criterion {criterion}: {verdict} ({len(rows)} checks, {len(failed)} failed)"
    print(vf.format_table(rows))
    print(RESULTS[criterion])
    assert not failed, "\n".join(f"{r.name}: expected {r.expected}, measured {r.measured}, "
                                 f"tolerance {r.tolerance}" for r in failed)
