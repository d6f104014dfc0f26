"""Riemannian gradient descent towards a small-rank TT approximation.

The objective is the squared Frobenius distance between reconstructions,
``L(W_hat) = 0.5 * ||W_ref - W_hat||_F**2``, evaluated in TT arithmetic.
Each step takes a free gradient step (ranks grow) and retracts back to the
target ranks with :func:`~lrtt.retraction.retract_orthogonal`.

Convergence traces record, per iterate ``W_hat^(t)``:

* ``loss``            -- ``L(W_hat^(t))``
* ``grad_norm_sq``    -- ``||grad L(W_hat^(t))||^2`` (Euclidean gradient)
* ``riem_grad_norm_sq`` -- the Euclidean gradient projected onto the
  tangent space of the fixed-rank manifold at ``W_hat^(t)`` (Riemannian
  gradient). The step itself does not use this projection.
* ``step_grad_norm_sq`` -- ``||W_hat^(t) - W_hat^(t+1)||^2 / eta^2``, the
  gradient actually realised after retraction.

When the target rank is below the true rank the Euclidean gradient stays
bounded away from zero; the other two vanish at stationary points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .retraction import retract_orthogonal
from .tt import (RankCap, TTMatrix, TTVector, fuse, orthogonalize_left, orthogonalize_right,
                 rank_caps, random_tt, tt_add, tt_norm, tt_scale, unfuse)

BOUND_TOL = 1e-9


@dataclass(frozen=True)
class RgdConfig:
    target_ranks: RankCap
    eta: float = 1.0
    max_steps: int = 10
    smoothness: Union[float, str] = 1.0
    stop_tol: float | None = None

    def validate(self, h: float | None = None) -> None:
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ConfigError(f"learning rate must be positive, got {self.eta}")
        if int(self.max_steps) < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.stop_tol is not None and self.stop_tol < 0:
            raise ConfigError("stop_tol must be non-negative")
        if h is None and self.smoothness != "auto":
            h = float(self.smoothness)
        if h is not None:
            if h <= 0:
                raise ConfigError(f"smoothness must be positive, got {h}")
            if not self.eta < 2.0 / h:
                raise ConfigError(f"eta={self.eta} outside (0, 2/H) with H={h:g}")


@dataclass
class ConvergenceTrace:
    losses: list = field(default_factory=list)
    grad_norm_sq: list = field(default_factory=list)
    riem_grad_norm_sq: list = field(default_factory=list)
    step_grad_norm_sq: list = field(default_factory=list)
    ranks: list = field(default_factory=list)
    final_loss: float | None = None

    def __len__(self):
        return len(self.losses)

    def append(self, loss, grad_norm_sq, riem_grad_norm_sq, step_grad_norm_sq, ranks):
        self.losses.append(float(loss))
        self.grad_norm_sq.append(float(grad_norm_sq))
        self.riem_grad_norm_sq.append(float(riem_grad_norm_sq))
        self.step_grad_norm_sq.append(float(step_grad_norm_sq))
        self.ranks.append(tuple(int(r) for r in ranks))

    @property
    def best_loss(self) -> float:
        vals = list(self.losses)
        if self.final_loss is not None:
            vals.append(self.final_loss)
        return min(vals)

    def gradients(self, kind: str) -> np.ndarray:
        if kind == "riemannian":
            return np.asarray(self.riem_grad_norm_sq)
        if kind == "step":
            return np.asarray(self.step_grad_norm_sq)
        if kind == "euclidean":
            return np.asarray(self.grad_norm_sq)
        raise ValueError(f"unknown gradient kind {kind!r}")

    def to_lines(self) -> list[str]:
        lines = []
        for t in range(len(self)):
            lines.append(
                f"step={t} loss={self.losses[t]!r} grad_norm_sq={self.grad_norm_sq[t]!r} "
                f"riem_grad_norm_sq={self.riem_grad_norm_sq[t]!r} "
                f"step_grad_norm_sq={self.step_grad_norm_sq[t]!r} "
                f"ranks={','.join(map(str, self.ranks[t]))}")
        if self.final_loss is not None:
            lines.append(f"final_loss={self.final_loss!r}")
        return lines

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "ConvergenceTrace":
        trace = cls()
        for line in lines:
            line = line.strip()
            if not line:
                continue
            rec = dict(item.split("=", 1) for item in line.split())
            if "final_loss" in rec:
                trace.final_loss = float(rec["final_loss"])
                continue
            trace.append(float(rec["loss"]), float(rec["grad_norm_sq"]),
                         float(rec["riem_grad_norm_sq"]),
                         float(rec["step_grad_norm_sq"]),
                         [int(r) for r in rec["ranks"].split(",")])
        return trace


def _check_same(a: TTVector, b: TTVector) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")


def tt_distance_loss(w_ref: TTVector, w_hat: TTVector) -> float:
    _check_same(w_ref, w_hat)
    return 0.5 * tt_norm(tt_add(w_ref, tt_scale(w_hat, -1.0))) ** 2


def loss_gradient(w_ref: TTVector, w_hat: TTVector) -> TTVector:
    """Euclidean gradient ``W_hat - W_ref`` of the distance loss, in TT form."""
    _check_same(w_ref, w_hat)
    return tt_add(w_hat, tt_scale(w_ref, -1.0))


def tangent_norm_sq(x: TTVector, z: TTVector) -> float:
    """``||P_x z||^2`` for the tangent space of the fixed-rank manifold at ``x``.

    Uses the orthogonal decomposition of the tangent space into the terms
    ``(P<k (x) I (x) P>k) z - (P<=k (x) P>k) z``; all contractions stay in TT form.
    """
    if x.shape != z.shape:
        raise ShapeMismatch(f"shapes differ: {x.shape} vs {z.shape}")
    k_total = x.order
    left_x = orthogonalize_left(x).cores
    right_x = orthogonalize_right(x).cores
    lefts = [np.ones((1, 1))]
    for k in range(k_total - 1):
        lefts.append(np.einsum("ab,iac,ibd->cd", lefts[k], left_x[k], z.cores[k], optimize=True))
    rights = [np.ones((1, 1))]
    for k in range(k_total - 1, 0, -1):
        rights.insert(0, np.einsum("iac,ibd,cd->ab", right_x[k], z.cores[k], rights[0],
                                   optimize=True))
    total = 0.0
    for k in range(k_total):
        c = np.einsum("ab,ibd,cd->iac", lefts[k], z.cores[k], rights[k], optimize=True)
        total += float(np.sum(c * c))
        if k < k_total - 1:
            d = np.einsum("iac,iad->cd", left_x[k], c, optimize=True)
            total -= float(np.sum(d * d))
    return max(total, 0.0)


def estimate_smoothness(w_ref: TTVector, w_hat: TTVector, *, iters: int = 20,
                        rng: np.random.Generator | None = None) -> float:
    """Power iteration on the Hessian action ``v -> grad(w_hat + v) - grad(w_hat)``."""
    rng = rng or np.random.default_rng(0)
    g0 = loss_gradient(w_ref, w_hat)
    v = random_tt(w_hat.shape, (1,) * (w_hat.order + 1), rng)
    v = tt_scale(v, 1.0 / tt_norm(v))
    h = 0.0
    for _ in range(iters):
        hv = tt_add(loss_gradient(w_ref, tt_add(w_hat, v)), tt_scale(g0, -1.0))
        hv, _ = retract_orthogonal(hv, max(v.ranks))
        h = tt_norm(hv)
        if h == 0:
            break
        v = tt_scale(hv, 1.0 / h)
    return h


def _smoothness(cfg: RgdConfig, w_ref, w_hat) -> float:
    if cfg.smoothness == "auto":
        return estimate_smoothness(w_ref, w_hat)
    return float(cfg.smoothness)


def rgd_step(w_hat: TTVector, w_ref: TTVector, cfg: RgdConfig):
    """One free gradient step followed by retraction.

    Returns ``(next_iterate, loss, grad_norm_sq)`` with loss and gradient
    evaluated at ``w_hat`` (before the step).
    """
    grad = loss_gradient(w_ref, w_hat)
    gnorm = tt_norm(grad)
    free = tt_add(w_hat, tt_scale(grad, -cfg.eta))
    nxt, _ = retract_orthogonal(free, rank_caps(cfg.target_ranks, w_hat.order))
    return nxt, 0.5 * gnorm ** 2, gnorm ** 2


def rgd_compress(w_ref: TTVector | TTMatrix, cfg: RgdConfig):
    """Approximate ``w_ref`` by a train with ranks ``cfg.target_ranks``.

    Starts from the orthogonal retraction of ``w_ref`` and iterates
    :func:`rgd_step` until the (Euclidean or realised) squared gradient norm
    drops below the stop tolerance or ``max_steps`` is reached.

    Returns ``(w_hat, trace)``; ``w_hat`` has the same type as ``w_ref``.
    """
    if isinstance(w_ref, TTMatrix):
        out, trace = rgd_compress(fuse(w_ref), cfg)
        return unfuse(out, w_ref.out_shape, w_ref.in_shape), trace

    caps = rank_caps(cfg.target_ranks, w_ref.order)
    trace = ConvergenceTrace()
    if all(c >= r for c, r in zip(caps, w_ref.ranks)):
        cfg.validate(None if cfg.smoothness == "auto" else float(cfg.smoothness))
        trace.append(0.0, 0.0, 0.0, 0.0, w_ref.ranks)
        trace.final_loss = 0.0
        return w_ref.copy(), trace

    w_hat, _ = retract_orthogonal(w_ref, caps)
    cfg.validate(_smoothness(cfg, w_ref, w_hat))
    step_cfg = RgdConfig(caps, cfg.eta, cfg.max_steps, cfg.smoothness, cfg.stop_tol)
    tol = None
    for _ in range(int(cfg.max_steps)):
        nxt, loss, g2 = rgd_step(w_hat, w_ref, step_cfg)
        riem = tangent_norm_sq(w_hat, loss_gradient(w_ref, w_hat))
        step_sq = tt_norm(tt_add(w_hat, tt_scale(nxt, -1.0))) ** 2 / cfg.eta ** 2
        trace.append(loss, g2, riem, step_sq, nxt.ranks)
        w_hat = nxt
        if tol is None:
            tol = cfg.stop_tol if cfg.stop_tol is not None else 1e-14 * g2
        if g2 <= tol or step_sq <= tol:
            break
    trace.final_loss = tt_distance_loss(w_ref, w_hat)
    return w_hat, trace


# -- theory diagnostics -----------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    """Outcome of the convergence and performance inequalities.

    Each slack is ``bound - observed``; a check passes when its slack is at
    least ``-BOUND_TOL``. ``None`` marks a check that was not evaluated.
    """
    gradient: str
    max_grad_bound_ok: bool | None = None
    min_grad_bound_ok: bool | None = None
    dominated_ok: bool | None = None
    performance_bound_ok: bool | None = None
    max_grad_slack: float | None = None
    min_grad_slack: float | None = None
    dominated_slack: float | None = None
    performance_slack: float | None = None

    @property
    def all_ok(self) -> bool:
        flags = [self.max_grad_bound_ok, self.min_grad_bound_ok, self.dominated_ok,
                 self.performance_bound_ok]
        return all(f for f in flags if f is not None)

    def lines(self) -> list[str]:
        rows = [("max_grad_bound", self.max_grad_bound_ok, self.max_grad_slack),
                ("min_grad_bound", self.min_grad_bound_ok, self.min_grad_slack),
                ("gradient_dominated", self.dominated_ok, self.dominated_slack),
                ("performance_bound", self.performance_bound_ok, self.performance_slack)]
        return [f"{name}: {'PASS' if ok else 'FAIL'} slack={slack!r} gradient={self.gradient}"
                for name, ok, slack in rows if ok is not None]


def _step_constant(h: float, eta: float) -> float:
    if not (h > 0 and 0 < eta < 2.0 / h):
        raise ConfigError(f"eta={eta} outside (0, 2/H) with H={h:g}")
    return 2.0 / (eta * (2.0 - h * eta))


def check_theorem1_bounds(trace: ConvergenceTrace, h: float, eta: float, loss_star: float,
                          gradient: str = "riemannian") -> BoundReport:
    """Check the max- and min-gradient bounds of smooth gradient descent.

    ``max_t g_t <= c (L_0 - L*)`` and ``min_t g_t <= c (L_0 - L*) / T`` with
    ``c = 2 / (eta (2 - H eta))`` and ``T = len(trace)``.
    """
    c = _step_constant(h, eta)
    if len(trace) == 0:
        raise ValueError("empty trace")
    g = trace.gradients(gradient)
    rhs = c * (trace.losses[0] - loss_star)
    s_max = rhs - float(np.max(g))
    s_min = rhs / len(g) - float(np.min(g))
    return BoundReport(gradient, max_grad_bound_ok=s_max >= -BOUND_TOL,
                       min_grad_bound_ok=s_min >= -BOUND_TOL,
                       max_grad_slack=s_max, min_grad_slack=s_min)


def check_gradient_dominated(trace: ConvergenceTrace, tau: float, loss_star: float, *,
                             gradient: str = "euclidean", h: float | None = None,
                             eta: float | None = None) -> BoundReport:
    """Check ``L_t - L* <= tau * ||grad L_t||^2`` at every iterate.

    With ``h`` and ``eta`` also given, the performance chain at the iterate of
    smallest gradient is checked as well:
    ``L_a - L* <= tau g_a <= c (L_0 - L*) / T``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    losses = np.asarray(trace.losses)
    g = trace.gradients(gradient)
    slack = float(np.min(tau * g - (losses - loss_star)))
    kwargs = dict(dominated_ok=slack >= -BOUND_TOL, dominated_slack=slack)
    if h is not None and eta is not None:
        c = _step_constant(h, eta)
        a = int(np.argmin(g))
        first = tau * g[a] - (losses[a] - loss_star)
        second = c * (losses[0] - loss_star) / len(g) - tau * g[a]
        perf = float(min(first, second))
        kwargs.update(performance_bound_ok=perf >= -BOUND_TOL, performance_slack=perf)
    return BoundReport(gradient, **kwargs)


def unsquared_dominance(w_ref: TTVector, w_hat: TTVector, loss_star: float = 0.0) -> dict:
    """Evaluate both readings of the 1-gradient-dominance claim for ``L = ||W_hat - W_ref||_F``.

    The gradient of the unsquared norm has unit Frobenius norm away from the
    minimizer. Reported:

    * ``chain``: ``L - L* <= ||grad L||_F * L`` (the sum-of-squares chain)
    * ``squared``: ``L - L* <= 1 * ||grad L||_F**2``
    """
    dist = tt_norm(tt_add(w_hat, tt_scale(w_ref, -1.0)))
    gnorm = 1.0 if dist > 0 else 0.0
    chain = gnorm * dist - (dist - loss_star)
    squared = gnorm ** 2 - (dist - loss_star)
    return {"loss": dist, "grad_norm": gnorm,
            "chain_ok": chain >= -BOUND_TOL, "chain_slack": chain,
            "squared_ok": squared >= -BOUND_TOL, "squared_slack": squared}
