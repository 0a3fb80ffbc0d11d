import numpy as np
import pytest

from hierselect.conformal import draw_subsample
from hierselect.scoring import ScoreSet


@pytest.fixture
def worked():
    """Two singleton calibration groups (-1 null, 5 non-null), two singleton test groups."""
    cal = ScoreSet.from_arrays([[-1.0], [5.0]], null=[[True], [False]])
    test = ScoreSet.from_arrays([[-2.0], [-3.0]], role="test")
    return cal, test, draw_subsample(cal.sizes, 0)


def random_instance(rng, K=None, M=None, max_n=4, ties=False):
    """Small random calibration/test score sets for equivalence sweeps."""
    K = K or int(rng.integers(1, 7))
    M = M or int(rng.integers(1, 5))
    draw = (lambda n: rng.integers(-4, 5, n).astype(float)) if ties else (lambda n: rng.normal(size=n))
    cs = [draw(int(rng.integers(1, max_n + 1))) for _ in range(K)]
    nl = [rng.random(len(v)) < 0.6 for v in cs]
    ts = [draw(int(rng.integers(1, max_n + 1))) for _ in range(M)]
    cal = ScoreSet.from_arrays(cs, null=nl, V=[v + rng.normal(size=len(v)) for v in cs])
    test = ScoreSet.from_arrays(ts, role="test")
    return cal, test


# acceptance lines, printed once at the end of the run
ACCEPTANCE: list = []


def record_acceptance(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
