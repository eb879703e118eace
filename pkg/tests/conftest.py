import numpy as np
import pytest
from hypothesis import settings

from genadapt.framework import LabeledBatch

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# acceptance verdict lines, repeated in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def gaussian_batches(seed, n_batches=6, n=30, flip_at=None, shift_every=None, holdout=0):
    """Two-class 2-D Gaussian stream; labels flip from batch ``flip_at`` on and
    class means move every ``shift_every`` batches."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_batches):
        offset = 0.0 if not shift_every else 1.5 * (k // shift_every)
        y = rng.integers(0, 2, size=n)
        X = rng.normal(size=(n, 2)) + np.where(y[:, None] == 1, 1.5, -1.5) + offset
        if flip_at is not None and k >= flip_at:
            y = 1 - y
        hold = None
        if holdout:
            hy = rng.integers(0, 2, size=holdout)
            hX = rng.normal(size=(holdout, 2)) + np.where(hy[:, None] == 1, 1.5, -1.5) + offset
            if flip_at is not None and k >= flip_at:
                hy = 1 - hy
            hold = LabeledBatch(hX, hy, k)
        out.append(LabeledBatch(X, y, k, hold))
    return out


def regression_batches(seed, n_batches=6, n=30, m=3, switch_every=3, noise=0.1):
    """Linear regimes that swap coefficient vectors every ``switch_every`` batches."""
    rng = np.random.default_rng(seed)
    betas = [rng.normal(size=m) * 2, rng.normal(size=m) * 2]
    out = []
    for k in range(n_batches):
        beta = betas[(k // switch_every) % 2]
        X = rng.normal(size=(n, m))
        y = X @ beta + 1.0 + noise * rng.normal(size=n)
        out.append(LabeledBatch(X, y, k))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
