"""Rank reduction of TT tensors back onto a prescribed small-rank set.

Two variants:

``retract_literal``
    One left-to-right truncated-SVD sweep over the cores as they are, with
    no orthogonalization first. The running rank is
    ``min(r_max, n_k * m_k, floor(r_k * r_{k+1}))``, evaluated with the
    running ranks initialised to one.

``retract_orthogonal``
    Right-to-left QR sweep followed by a left-to-right truncated-SVD sweep
    (quasi-optimal TT rounding). Because every discarded block is orthogonal
    to what is kept, ``||w - result|| == sqrt(sum(eps_k**2))`` up to rounding.
    This is the variant used by the RGD loop.

Both accept a :class:`~lrtt.tt.TTVector` or a :class:`~lrtt.tt.TTMatrix`;
matrices go through the fused ``(j_k, i_k)`` view.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import svd_truncated
from .tt import (RankCap, TTMatrix, TTVector, fuse, orthogonalize_right, rank_caps, tt_norm,
                 unfuse)


@dataclass(frozen=True)
class RetractReport:
    input_ranks: tuple
    output_ranks: tuple
    per_core_discarded_energy: tuple
    total_relative_error_estimate: float

    @property
    def error_bound(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.per_core_discarded_energy))))


def _via_fused(fn, w, *args):
    if isinstance(w, TTMatrix):
        out, report = fn(fuse(w), *args)
        return unfuse(out, w.out_shape, w.in_shape), report
    return fn(w, *args)


def _lnr(w: TTVector) -> list:
    return [c.transpose(1, 0, 2) for c in w.cores]


def _pack(cores_lnr) -> TTVector:
    return TTVector(tuple(np.ascontiguousarray(c.transpose(1, 0, 2)) for c in cores_lnr))


def _report(w: TTVector, out: TTVector, energies, norm: float) -> RetractReport:
    bound = float(np.sqrt(np.sum(np.square(energies)))) if energies else 0.0
    rel = bound / norm if norm > 0 else 0.0
    return RetractReport(w.ranks, out.ranks, tuple(float(e) for e in energies), rel)


def _literal(w: TTVector, r_max: int):
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    cores = _lnr(w)
    r = w.ranks
    k_total = len(cores)
    rhat = [1] * (k_total + 1)
    energies = []
    carry = np.ones((1, 1))
    out = []
    for k in range(k_total - 1):
        core = np.einsum("ab,bic->aic", carry, cores[k])
        rl, n, rr = core.shape
        # the running value on the right-hand side is still its initial 1
        rhat[k + 1] = min(r_max, n * rhat[k + 1], (r[k] * r[k + 1]) // rhat[k + 1])
        res = svd_truncated(core.reshape(rl * n, rr), rhat[k + 1])
        rhat[k + 1] = res.S.size
        out.append(res.U.reshape(rl, n, rhat[k + 1]))
        carry = res.S[:, None] * res.V
        energies.append(res.discarded_energy)
    out.append(np.einsum("ab,bic->aic", carry, cores[-1]))
    result = _pack(out)
    return result, _report(w, result, energies, tt_norm(w))


def _orthogonal(w: TTVector, target: RankCap):
    caps = rank_caps(target, w.order)
    ortho = orthogonalize_right(w)
    norm = float(np.linalg.norm(ortho.cores[0]))
    cores = _lnr(ortho)
    energies = []
    for k in range(len(cores) - 1):
        rl, n, rr = cores[k].shape
        res = svd_truncated(cores[k].reshape(rl * n, rr), caps[k + 1])
        r = res.S.size
        cores[k] = res.U.reshape(rl, n, r)
        cores[k + 1] = np.einsum("ab,bic->aic", res.S[:, None] * res.V, cores[k + 1])
        energies.append(res.discarded_energy)
    result = _pack(cores)
    return result, _report(w, result, energies, norm)


def retract_literal(w, r_max: int):
    """Truncate every TT-rank to at most ``r_max`` without orthogonalizing.

    Returns ``(result, RetractReport)``. The per-core energies are the
    singular values dropped at each step; without orthogonality they do not
    bound the true error.
    """
    return _via_fused(_literal, w, int(r_max))


def retract_orthogonal(w, target: RankCap):
    """Quasi-optimal rounding to a rank profile (or a uniform cap).

    Returns ``(result, RetractReport)``; ``report.error_bound`` equals the
    Frobenius distance between input and result.
    """
    return _via_fused(_orthogonal, w, target)


def retract(w, target: RankCap, mode: str = "orthogonal"):
    if mode == "orthogonal":
        return retract_orthogonal(w, target)
    if mode == "literal":
        if not isinstance(target, (int, np.integer)):
            target = max(target)
        return retract_literal(w, target)
    raise ValueError(f"unknown retraction mode {mode!r}")
