"""Cross-entropy fusion through the convex log-sum-exp reparametrisation.

With ``q = softmax(u)`` the restricted cross-entropy becomes

    J(u) = -sum_i sum_{l in L_i} P[l, i] * (u[l] - logsumexp(u[L_i]))

which is convex and invariant to ``u -> u + c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..labels import softmax_t
from .common import BatchFusion, as_batch, overlap_components
from .descent import safeguarded_descent


@dataclass(frozen=True)
class CESolverConfig:
    """Gradient-descent settings. ``step_size=None`` picks a per-problem step
    from an upper bound on the objective's curvature."""

    step_size: float | None = 0.1
    max_iters: int = 3000
    grad_tol: float = 1e-7
    objective_tol: float = 1e-10

    def __post_init__(self):
        step = 1.0 if self.step_size is None else self.step_size
        if min(step, self.max_iters, self.grad_tol, self.objective_tol) <= 0:
            raise InvalidArgumentError("solver settings must be positive")


def _group_lse(u: np.ndarray, M: np.ndarray):
    """Per-column log-sum-exp over the mask and the masked softmax.

    ``u`` is (S, L), ``M`` is (S, L, N). Returns lse (S, N) and sm (S, L, N).
    """
    U = np.where(M > 0, u[:, :, None], -np.inf)
    top = U.max(axis=1, keepdims=True)
    E = np.exp(U - top)
    tot = E.sum(axis=1, keepdims=True)
    return (top + np.log(tot))[:, 0, :], E / tot


def ce_objective_batch(u, P, M) -> np.ndarray:
    lse, _ = _group_lse(u, M)
    return -(P * u[:, :, None]).sum(axis=(1, 2)) + (P.sum(axis=1) * lse).sum(axis=1)


def ce_gradient_batch(u, P, M) -> np.ndarray:
    _, sm = _group_lse(u, M)
    mass = P.sum(axis=1, keepdims=True)
    return (sm * mass - P).sum(axis=2)


def ce_objective(u, profile) -> float:
    batch, _ = as_batch(profile)
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidArgumentError("u must be finite")
    return float(ce_objective_batch(u[None], batch.P, batch.M)[0])


def ce_gradient(u, profile) -> np.ndarray:
    batch, _ = as_batch(profile)
    return ce_gradient_batch(np.asarray(u, dtype=float)[None], batch.P, batch.M)[0]


class _GroupedCE:
    """Value and gradient of ``J`` for a batch, with per-group sums done as products with the mask."""

    def __init__(self, P, M):
        self.P, self.M = P, M
        self.row_mass = P.sum(axis=2)
        self.col_mass = P.sum(axis=1)
        self.shared = M[0] if (M == M[0]).all() else None

    def __call__(self, u, rows):
        top = u.max(axis=1, keepdims=True)
        E = np.exp(u - top)
        if self.shared is not None:
            G = E @ self.shared
        else:
            G = np.einsum("sl,sln->sn", E, self.M[rows])
        with np.errstate(divide="ignore"):
            lse = top + np.log(G)
        rm, cm = self.row_mass[rows], self.col_mass[rows]
        f = -(rm * u).sum(axis=1) + (cm * lse).sum(axis=1)
        W = cm / np.where(G > 0, G, 1.0)
        if self.shared is not None:
            grad = E * (W @ self.shared.T) - rm
        else:
            grad = E * np.einsum("sn,sln->sl", W, self.M[rows]) - rm
        bad = ~(G > 0).all(axis=1)
        if bad.any():
            # a whole group underflowed against the global max; redo those rows exactly
            b = rows[bad]
            f[bad] = ce_objective_batch(u[bad], self.P[b], self.M[b])
            grad[bad] = ce_gradient_batch(u[bad], self.P[b], self.M[b])
        return f, grad


def fuse_ce_batch(batch, config: CESolverConfig = CESolverConfig(),
                  trace: bool = False) -> BatchFusion:
    P, M = batch.P, batch.M
    S, L, _ = P.shape
    step = config.step_size
    if step is None:
        # each group's log-sum-exp Hessian is bounded by half its mass (Gershgorin)
        mass = P.sum(axis=1)
        step = 2.0 / np.maximum((M * mass[:, None, :]).sum(axis=2).max(axis=1), 1e-12)
    res = safeguarded_descent(np.zeros((S, L)), _GroupedCE(P, M), step,
                              config.max_iters, config.grad_tol, config.objective_tol,
                              trace=trace)
    u = res.x - res.x.mean(axis=1, keepdims=True)
    out = BatchFusion(softmax_t(u), "ce", {
        "iterations": res.iterations,
        "objective": res.objective,
        "grad_norm": res.grad_norm,
        "converged": res.converged,
    })
    out.u = u
    out.trace = res.trace
    masks = np.unique(M, axis=0)
    if any(overlap_components(m) > 1 for m in masks):
        out.warnings.append("disconnected class overlap: optimum may not be unique")
    return out


def fuse_ce(profile, config: CESolverConfig = CESolverConfig()):
    """Estimate the full distribution by gradient descent on ``J(u)`` from ``u = 0``."""
    batch, single = as_batch(profile)
    out = fuse_ce_batch(batch, config)
    return out.label(0) if single else out
