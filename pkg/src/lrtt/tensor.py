"""Dense tensor primitives: norms, reshapes, matricization and truncated SVD.

Dense tensors and matrices are plain ``numpy.ndarray`` objects in float64,
C (row-major, last index fastest) order. That single ordering is shared by
every reshape in the package and by the on-disk container format.
"""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .errors import NumericalFailure, ShapeMismatch, SplitOutOfRange


def as_dense(t) -> np.ndarray:
    a = np.ascontiguousarray(t, dtype=np.float64)
    if a.ndim == 0:
        raise ShapeMismatch("a tensor needs at least one mode")
    if any(d < 1 for d in a.shape):
        raise ShapeMismatch(f"all mode sizes must be >= 1, got {a.shape}")
    return a


def frobenius_norm(t) -> float:
    """Square root of the sum of squared entries."""
    a = np.asarray(t, dtype=np.float64).ravel()
    amax = float(np.max(np.abs(a))) if a.size else 0.0
    if amax == 0.0 or not np.isfinite(amax):
        return amax
    # scale by a power of two (exact) so squares neither overflow nor underflow
    scale = math.ldexp(1.0, -math.frexp(amax)[1])
    return float(np.linalg.norm(a * scale)) / scale


def reshape(t, new_shape: Sequence[int]) -> np.ndarray:
    a = as_dense(t)
    new_shape = tuple(int(d) for d in new_shape)
    if any(d < 1 for d in new_shape) or not new_shape:
        raise ShapeMismatch(f"invalid shape {new_shape}")
    if int(np.prod(new_shape)) != a.size:
        raise ShapeMismatch(f"cannot reshape {a.shape} ({a.size} entries) into {new_shape}")
    return a.reshape(new_shape)


def matricize(t, split: int) -> np.ndarray:
    """Group modes ``[0, split)`` into rows and ``[split, K)`` into columns."""
    a = as_dense(t)
    if not 1 <= split < a.ndim:
        raise SplitOutOfRange(f"split must lie in [1, {a.ndim - 1}], got {split}")
    rows = int(np.prod(a.shape[:split]))
    return a.reshape(rows, -1)


def dematricize(m, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize` for any split of ``shape``."""
    return reshape(m, shape)


class TruncatedSVD(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    discarded_energy: float

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V


def _normalize_signs(U: np.ndarray, V: np.ndarray) -> None:
    # first nonzero entry of each left singular vector made non-negative
    for j in range(U.shape[1]):
        col = U[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            U[:, j] = -col
            V[j, :] = -V[j, :]


def svd_truncated(m, max_rank: int, *, drop_null: bool = True) -> TruncatedSVD:
    """Best rank-``r`` approximation ``U @ diag(S) @ V`` of a matrix.

    ``r = min(max_rank, numerical rank of m)`` and never less than one, so a
    zero matrix gives a single zero singular value. Set ``drop_null=False``
    to keep numerically null directions up to ``max_rank``.

    Raises
    ------
    NumericalFailure
        If the input is non-finite or LAPACK does not converge.
    """
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalFailure("non-finite entries passed to SVD")
    try:
        U, S, V = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc

    r = min(int(max_rank), S.size)
    if drop_null:
        tol = S[0] * max(a.shape) * np.finfo(np.float64).eps if S.size else 0.0
        r = min(r, int(np.count_nonzero(S > tol)))
    r = max(r, 1)
    discarded = float(np.sqrt(np.sum(S[r:] ** 2)))
    U = np.array(U[:, :r])
    V = np.array(V[:r, :])
    _normalize_signs(U, V)
    return TruncatedSVD(U, np.array(S[:r]), V, discarded)


def qr(m) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericalFailure("non-finite entries passed to QR")
    try:
        return np.linalg.qr(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"QR failed: {exc}") from exc
