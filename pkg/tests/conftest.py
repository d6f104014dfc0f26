import numpy as np
import pytest


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / (scale if scale > 0 else 1.0))


def dense_tt_svd(t, caps):
    """Independent sequential truncated-SVD reconstruction, straight from numpy."""
    t = np.asarray(t, dtype=float)
    shape = t.shape
    rest = t
    r_prev = 1
    factors = []
    for k in range(len(shape) - 1):
        m = rest.reshape(r_prev * shape[k], -1)
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        r = min(caps[k + 1], s.size)
        factors.append(u[:, :r])
        rest = s[:r, None] * vt[:r]
        r_prev = r
    # contract left-to-right: (prefix, r) x (r, n, r')
    acc = np.ones((1, 1))
    for u in factors:
        rl = acc.shape[1]
        acc = (acc @ u.reshape(rl, -1)).reshape(-1, u.shape[1])
    acc = acc @ rest
    return acc.reshape(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
