import numpy as np
import pytest

from policyboot.data import Dataset, ScoreTable


def make_binary_table(g1, x):
    """Score table with a given binary contrast column."""
    g1 = np.asarray(g1, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    z = np.column_stack([np.zeros_like(g1), g1])
    return ScoreTable(z=z, g=z.copy(), x=x, g_binary=g1.copy())


def make_binary_dataset(y, t, x, e=0.5):
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=int)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return Dataset(y=y, t=t, x=x, propensity=float(e))


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def toy_table():
    """The 3-row instance used across solver examples: g=(2,-4,6)."""
    return make_binary_table([2.0, -4.0, 6.0], [[0.1], [0.5], [0.9]])


@pytest.fixture
def uniform3():
    return np.full(3, 1.0 / 3.0)
