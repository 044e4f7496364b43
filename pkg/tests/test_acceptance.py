"""Acceptance criteria 1-10, each run at its stated tolerance and time budget.

A one-line verdict per criterion is printed in the terminal summary.
"""

import pytest

from latent_prior import checks

RESULTS: dict[int, checks.CheckResult] = {}


@pytest.mark.parametrize("number", sorted(checks.CHECKS), ids=lambda n: f"criterion_{n:02d}")
def test_criterion(number):
    res = checks.run_check(number)
    RESULTS[number] = res
    if res.skipped:
        pytest.skip(res.note)
    assert res.passed, "\n" + checks.format_result(res)


def summary_lines() -> list[str]:
    lines = []
    for number in sorted(RESULTS):
        res = RESULTS[number]
        worst = ", ".join(f"{m.name} = {m.value:.3e} ({m.relation} {m.tolerance:.1e})" for m in res.measurements[:2])
        budget = f"/{res.budget:g}s" if res.budget is not None else ""
        lines.append(f"{res.status} criterion {number:>2} {res.title} [{res.runtime:.2f}s{budget}] {worst or res.note}")
    return lines
