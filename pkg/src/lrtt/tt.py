"""Tensor-train tensors and operators.

Core layouts (fixed; also the serialization layout):

* :class:`TTVector` core ``k`` has shape ``(I_k, R_{k-1}, R_k)`` so that
  ``core[i]`` is the ``R_{k-1} x R_k`` matrix multiplied in the chain product.
* :class:`TTMatrix` core ``k`` has shape ``(J_k, I_k, R_{k-1}, R_k)`` with
  ``J`` the output and ``I`` the input mode. The dense operator has
  ``prod(J)`` rows and ``prod(I)`` columns; mode ``k`` of the train carries
  the index pair ``(j_k, i_k)`` fused as ``j_k * I_k + i_k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch
from .tensor import as_dense, qr, svd_truncated

RankProfile = tuple  # (R_0, ..., R_K) with R_0 = R_K = 1
RankCap = Union[int, Sequence[int]]


def check_ranks(ranks: Sequence[int], order: int | None = None) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if order is not None and len(ranks) != order + 1:
        raise ShapeMismatch(f"expected {order + 1} ranks, got {len(ranks)}")
    if len(ranks) < 2 or ranks[0] != 1 or ranks[-1] != 1:
        raise ShapeMismatch(f"boundary ranks must be 1, got {ranks}")
    if any(r < 1 for r in ranks):
        raise ShapeMismatch(f"ranks must be >= 1, got {ranks}")
    return ranks


def rank_caps(cap: RankCap, order: int) -> tuple[int, ...]:
    """Expand an integer cap or validate a full profile into K+1 caps."""
    if isinstance(cap, (int, np.integer)):
        if cap < 1:
            raise ValueError("rank cap must be >= 1")
        return (1,) + (int(cap),) * (order - 1) + (1,)
    return check_ranks(cap, order)


def check_factorization(factors: Sequence[int], size: int | None = None) -> tuple[int, ...]:
    factors = tuple(int(f) for f in factors)
    if not factors or any(f < 1 for f in factors):
        raise ShapeMismatch(f"invalid mode factorization {factors}")
    if size is not None and int(np.prod(factors)) != size:
        raise ShapeMismatch(f"factors {factors} multiply to {int(np.prod(factors))}, not {size}")
    return factors


@dataclass(frozen=True, eq=False)
class TTVector:
    cores: tuple

    def __post_init__(self):
        cores = tuple(np.asarray(c, dtype=np.float64) for c in self.cores)
        if not cores:
            raise ShapeMismatch("a TT tensor needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise ShapeMismatch(f"core {k} must be 3-order, got shape {c.shape}")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[1]:
                raise ShapeMismatch(f"rank mismatch between cores {k} and {k + 1}")
        if cores[0].shape[1] != 1 or cores[-1].shape[2] != 1:
            raise ShapeMismatch("boundary ranks must be 1")
        object.__setattr__(self, "cores", cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    def copy(self) -> "TTVector":
        return TTVector(tuple(c.copy() for c in self.cores))


@dataclass(frozen=True, eq=False)
class TTMatrix:
    cores: tuple

    def __post_init__(self):
        cores = tuple(np.asarray(c, dtype=np.float64) for c in self.cores)
        if not cores:
            raise ShapeMismatch("a TT matrix needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 4:
                raise ShapeMismatch(f"core {k} must be 4-order, got shape {c.shape}")
        for k in range(len(cores) - 1):
            if cores[k].shape[3] != cores[k + 1].shape[2]:
                raise ShapeMismatch(f"rank mismatch between cores {k} and {k + 1}")
        if cores[0].shape[2] != 1 or cores[-1].shape[3] != 1:
            raise ShapeMismatch("boundary ranks must be 1")
        object.__setattr__(self, "cores", cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def out_shape(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores)

    @property
    def in_shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def n_rows(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def n_cols(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[3] for c in self.cores)

    def copy(self) -> "TTMatrix":
        return TTMatrix(tuple(c.copy() for c in self.cores))


def fuse(m: TTMatrix) -> TTVector:
    """View a TT matrix as a TT vector over fused modes ``J_k * I_k``."""
    return TTVector(tuple(c.reshape(c.shape[0] * c.shape[1], c.shape[2], c.shape[3]) for c in m.cores))


def unfuse(v: TTVector, out_shape: Sequence[int], in_shape: Sequence[int]) -> TTMatrix:
    if len(out_shape) != v.order or len(in_shape) != v.order:
        raise ShapeMismatch("factorization length differs from TT order")
    cores = []
    for c, j, i in zip(v.cores, out_shape, in_shape):
        if c.shape[0] != j * i:
            raise ShapeMismatch(f"fused mode {c.shape[0]} != {j}*{i}")
        cores.append(c.reshape(j, i, c.shape[1], c.shape[2]))
    return TTMatrix(tuple(cores))


# -- evaluation -------------------------------------------------------------

def tt_element(w: TTVector, idx: Sequence[int]) -> float:
    idx = tuple(int(i) for i in idx)
    if len(idx) != w.order:
        raise IndexOutOfRange(f"index {idx} has wrong length for order {w.order}")
    for i, n in zip(idx, w.shape):
        if not 0 <= i < n:
            raise IndexOutOfRange(f"index {idx} outside shape {w.shape}")
    acc = np.ones((1, 1))
    for c, i in zip(w.cores, idx):
        acc = acc @ c[i]
    return float(acc[0, 0])


def tt_full(w: TTVector) -> np.ndarray:
    acc = np.ones((1, 1))
    for c in w.cores:
        n, rl, rr = c.shape
        # (prefix, R_{k-1}) x (R_{k-1}, I_k * R_k)
        acc = acc @ c.transpose(1, 0, 2).reshape(rl, n * rr)
        acc = acc.reshape(-1, rr)
    return acc.reshape(w.shape)


def tt_matrix_full(m: TTMatrix) -> np.ndarray:
    k = m.order
    full = tt_full(fuse(m))
    inter = []
    for j, i in zip(m.out_shape, m.in_shape):
        inter += [j, i]
    full = full.reshape(inter)
    perm = list(range(0, 2 * k, 2)) + list(range(1, 2 * k, 2))
    return full.transpose(perm).reshape(m.n_rows, m.n_cols)


# -- decomposition ----------------------------------------------------------

def tt_svd(t, cap: RankCap, *, return_energies: bool = False):
    """Left-to-right sequential truncated SVD of a dense tensor.

    The reconstruction error equals the root-sum-square of the per-step
    discarded energies, which are returned alongside when requested.
    """
    a = as_dense(t)
    shape = a.shape
    caps = rank_caps(cap, len(shape))
    cores, energies = [], []
    r_prev = 1
    rest = a
    for k in range(len(shape) - 1):
        mat = rest.reshape(r_prev * shape[k], -1)
        res = svd_truncated(mat, caps[k + 1])
        r = res.S.size
        cores.append(res.U.reshape(r_prev, shape[k], r).transpose(1, 0, 2))
        energies.append(res.discarded_energy)
        rest = res.S[:, None] * res.V
        r_prev = r
    cores.append(rest.reshape(r_prev, shape[-1], 1).transpose(1, 0, 2))
    out = TTVector(tuple(np.ascontiguousarray(c) for c in cores))
    return (out, energies) if return_energies else out


def interleave_dense(w, in_f: Sequence[int], out_f: Sequence[int]) -> np.ndarray:
    """Reshape a (prod J, prod I) matrix to the paired-index tensor (J_1 I_1, ..., J_K I_K)."""
    w = np.asarray(w, dtype=np.float64)
    in_f = check_factorization(in_f)
    out_f = check_factorization(out_f)
    if len(in_f) != len(out_f):
        raise ShapeMismatch("input and output factorizations must have equal length")
    if w.ndim != 2 or w.shape != (int(np.prod(out_f)), int(np.prod(in_f))):
        raise ShapeMismatch(
            f"matrix shape {w.shape} does not match factorizations out={out_f} in={in_f}")
    k = len(in_f)
    t = w.reshape(tuple(out_f) + tuple(in_f))
    perm = [p for pair in zip(range(k), range(k, 2 * k)) for p in pair]
    return t.transpose(perm).reshape([j * i for j, i in zip(out_f, in_f)])


def tt_matrix_from_dense(w, in_f: Sequence[int], out_f: Sequence[int], cap: RankCap) -> TTMatrix:
    t = interleave_dense(w, in_f, out_f)
    return unfuse(tt_svd(t, cap), out_f, in_f)


# -- arithmetic -------------------------------------------------------------

def tt_matvec(m: TTMatrix, x) -> np.ndarray:
    """Apply a TT matrix to a vector or to the rows of a (batch, prod I) array.

    Contracts one core at a time; the dense operator is never formed.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != m.n_cols:
        raise ShapeMismatch(f"input of shape {x.shape} does not match {m.n_cols} columns")
    b = xb.shape[0]
    # state: (batch, out-prefix, rank, in-suffix)
    t = xb.reshape(b, 1, 1, m.n_cols)
    for c in m.cores:
        j, i, rl, rr = c.shape
        t = t.reshape(b, t.shape[1], rl, i, -1)
        t = np.einsum("bpaiq,jiac->bpjcq", t, c, optimize=True)
        t = t.reshape(b, t.shape[1] * j, rr, -1)
    y = t.reshape(b, m.n_rows)
    return y[0] if single else y


def tt_add(a: TTVector, b: TTVector) -> TTVector:
    """Exact sum by block-diagonal core concatenation; ranks add."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    k = a.order
    if k == 1:
        return TTVector((a.cores[0] + b.cores[0],))
    cores = []
    for n, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        m, al, ar = ca.shape
        _, bl, br = cb.shape
        if n == 0:
            c = np.concatenate([ca, cb], axis=2)
        elif n == k - 1:
            c = np.concatenate([ca, cb], axis=1)
        else:
            c = np.zeros((m, al + bl, ar + br))
            c[:, :al, :ar] = ca
            c[:, al:, ar:] = cb
        cores.append(c)
    return TTVector(tuple(cores))


def tt_scale(a: TTVector, c: float) -> TTVector:
    cores = list(a.cores)
    cores[0] = cores[0] * float(c)
    return TTVector(tuple(cores))


def tt_sub(a: TTVector, b: TTVector) -> TTVector:
    return tt_add(a, tt_scale(b, -1.0))


def tt_dot(a: TTVector, b: TTVector) -> float:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    acc = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        acc = np.einsum("ab,iac,ibd->cd", acc, ca, cb, optimize=True)
    return float(acc[0, 0])


def tt_norm(a: TTVector) -> float:
    """Frobenius norm via a left-to-right QR sweep.

    Orthogonalizing keeps the result accurate when ``a`` is a difference of
    nearly equal tensors, where the Gram contraction would cancel badly.
    """
    carry = np.ones((1, 1))
    for c in a.cores:
        n, rl, rr = c.shape
        block = carry @ c.transpose(1, 0, 2).reshape(rl, n * rr)
        block = block.reshape(-1, rr)
        if block.shape[0] >= block.shape[1]:
            _, carry = qr(block)
        else:
            carry = block
    return float(np.linalg.norm(carry))


def orthogonalize_left(w: TTVector) -> TTVector:
    """Left-orthogonalize cores 0..K-2; the norm is carried by the last core."""
    cores = [c.transpose(1, 0, 2) for c in w.cores]  # (Rl, I, Rr)
    for k in range(len(cores) - 1):
        rl, n, rr = cores[k].shape
        q, r = qr(cores[k].reshape(rl * n, rr))
        cores[k] = q.reshape(rl, n, q.shape[1])
        cores[k + 1] = np.einsum("ab,bic->aic", r, cores[k + 1])
    return TTVector(tuple(np.ascontiguousarray(c.transpose(1, 0, 2)) for c in cores))


def orthogonalize_right(w: TTVector) -> TTVector:
    """Right-orthogonalize cores 1..K-1; the norm is carried by the first core."""
    cores = [c.transpose(1, 0, 2) for c in w.cores]
    for k in range(len(cores) - 1, 0, -1):
        rl, n, rr = cores[k].shape
        q, r = qr(cores[k].reshape(rl, n * rr).T)
        cores[k] = q.T.reshape(q.shape[1], n, rr)
        cores[k - 1] = np.einsum("aib,cb->aic", cores[k - 1], r)
    return TTVector(tuple(np.ascontiguousarray(c.transpose(1, 0, 2)) for c in cores))


def param_count(m: TTVector | TTMatrix) -> int:
    return int(sum(c.size for c in m.cores))


def dense_param_count(m: TTMatrix) -> int:
    return m.n_rows * m.n_cols


# -- construction helpers ---------------------------------------------------

def random_tt(shape: Sequence[int], ranks: Sequence[int], rng: np.random.Generator,
              scale: float = 1.0) -> TTVector:
    ranks = check_ranks(ranks, len(shape))
    cores = [scale * rng.standard_normal((n, ranks[k], ranks[k + 1])) for k, n in enumerate(shape)]
    return TTVector(tuple(cores))


def random_tt_matrix(out_shape: Sequence[int], in_shape: Sequence[int], ranks: Sequence[int],
                     rng: np.random.Generator, scale: float = 1.0) -> TTMatrix:
    ranks = check_ranks(ranks, len(out_shape))
    cores = [scale * rng.standard_normal((j, i, ranks[k], ranks[k + 1]))
             for k, (j, i) in enumerate(zip(out_shape, in_shape))]
    return TTMatrix(tuple(cores))


def zeros_tt(shape: Sequence[int]) -> TTVector:
    return TTVector(tuple(np.zeros((n, 1, 1)) for n in shape))


def identity_tt_matrix(modes: Sequence[int]) -> TTMatrix:
    return TTMatrix(tuple(np.eye(n)[:, :, None, None] for n in modes))


def sum_of_indices_tt(shape: Sequence[int]) -> TTVector:
    """Rank-2 train for ``t[i_1, ..., i_K] = i_1 + ... + i_K``.

    Boundary cores are ``[i 1]`` and ``[1 i]^T``; interior cores are
    ``[[1, 0], [i, 1]]``.
    """
    k = len(shape)
    if k == 1:
        return TTVector((np.arange(shape[0], dtype=float).reshape(-1, 1, 1),))
    cores = []
    for n, size in enumerate(shape):
        i = np.arange(size, dtype=float)
        if n == 0:
            c = np.stack([i, np.ones(size)], axis=-1)[:, None, :]
        elif n == k - 1:
            c = np.stack([np.ones(size), i], axis=-1)[:, :, None]
        else:
            c = np.zeros((size, 2, 2))
            c[:, 0, 0] = 1.0
            c[:, 1, 0] = i
            c[:, 1, 1] = 1.0
        cores.append(c)
    return TTVector(tuple(cores))
