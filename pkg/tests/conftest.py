import numpy as np
import pytest
from hypothesis import strategies as st

from recl.cohort import Cohort


def make_cohort(C, events, A=None, X=None, k=2, tau=None):
    n = len(C)
    X = np.zeros((n, 1)) if X is None else np.asarray(X, dtype=float)
    A = np.arange(n) % k if A is None else np.asarray(A)
    return Cohort.from_arrays(X, A, np.asarray(C, dtype=float), events, k=k, tau=tau)


@pytest.fixture
def three_uncensored():
    # C=(4,4,4); events s1:[1.0], s2:[1.0, 2.0]
    return make_cohort([4.0, 4.0, 4.0], [[1.0], [1.0, 2.0], []], tau=4.0)


@pytest.fixture
def three_censored():
    # same events, first subject censored at 1.5
    return make_cohort([1.5, 4.0, 4.0], [[1.0], [1.0, 2.0], []], tau=4.0)


@st.composite
def cohorts(draw, min_n=2, max_n=30, k=2, censor=True, grid=True):
    """Random small cohorts; event and censoring times on a coarse grid so that
    ties across subjects and event/censoring coincidences are common."""
    n = draw(st.integers(min_n, max_n))
    step = 0.5 if grid else None
    rows = []
    for i in range(n):
        if censor and draw(st.booleans()):
            c = draw(st.integers(1, 8)) * 0.5
        else:
            c = 4.0
        if step:
            slots = [j * step for j in range(1, int(round(c / step)) + 1)]
            ev = sorted(draw(st.sets(st.sampled_from(slots), max_size=4)))
        else:
            ev = sorted(set(draw(st.lists(st.floats(0.01, c), max_size=4))))
        rows.append((c, ev))
    A = [i % k for i in range(n)]
    X = [[draw(st.floats(-2, 2, allow_nan=False))] for _ in range(n)]
    return make_cohort([r[0] for r in rows], [r[1] for r in rows], A=A, X=X, k=k, tau=4.0)
