"""Masked rank-1 factorisation of the probability profile by alternating least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from .common import BatchFusion, MaskOps, as_batch


@dataclass(frozen=True)
class ALSConfig:
    rmse_tol: float = 1e-3
    max_iters: int = 3000

    def __post_init__(self):
        if self.rmse_tol <= 0 or self.max_iters <= 0:
            raise InvalidArgumentError("ALS settings must be positive")


def mfp_objective_batch(u, v, P, M) -> np.ndarray:
    R = M * (P - u[:, :, None] * v[:, None, :])
    return (R * R).sum(axis=(1, 2))


def mfp_objective(u, v, profile) -> float:
    batch, _ = as_batch(profile)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(mfp_objective_batch(u[None], v[None], batch.P, batch.M)[0])


def _ratio(num, den, fallback):
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), fallback), (~ok).sum(axis=1)


def fuse_mf_prob_batch(batch, config: ALSConfig = ALSConfig(), trace: bool = False) -> BatchFusion:
    P, M = batch.P, batch.M
    S, L, N = P.shape
    MP = M * P
    mask = MaskOps(M)
    u = np.full((S, L), 1.0 / L)
    v = np.ones((S, N))
    iters = np.zeros(S, dtype=int)
    rmse = np.full(S, np.inf)
    zero_den = np.zeros(S, dtype=int)
    negatives = np.zeros(S, dtype=int)
    degenerate = np.zeros(S, dtype=bool)
    active = np.ones(S, dtype=bool)
    history = [[] for _ in range(S)] if trace else None

    for _ in range(config.max_iters):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        m = mask.take(rows)
        MPr, ur, vr = MP[rows], u[rows], v[rows]

        un, bad_u = _ratio(np.einsum("sln,sn->sl", MPr, vr), m.over_classifiers(vr ** 2), ur)
        negatives[rows] += (un < 0).sum(axis=1)
        un = np.maximum(un, 0.0)
        total = un.sum(axis=1, keepdims=True)
        dead = total[:, 0] <= 0
        un = np.where(dead[:, None], 1.0 / L, un / np.where(dead[:, None], 1.0, total))

        vn, bad_v = _ratio(np.einsum("sln,sl->sn", MPr, un), m.over_classes(un ** 2), vr)
        negatives[rows] += (vn < 0).sum(axis=1)
        vn = np.maximum(vn, 0.0)
        zero_den[rows] += bad_u + bad_v

        delta = np.concatenate([un - ur, vn - vr], axis=1)
        rmse[rows] = np.sqrt((delta ** 2).mean(axis=1))
        u[rows], v[rows] = un, vn
        iters[rows] += 1
        degenerate[rows[dead]] = True
        if trace:
            f = mfp_objective_batch(un, vn, P[rows], M[rows])
            for r, val in zip(rows, f):
                history[r].append(float(val))
        active[rows[(rmse[rows] < config.rmse_tol) | dead]] = False

    out = BatchFusion(u.copy(), "mf_p", {
        "iterations": iters,
        "objective": mfp_objective_batch(u, v, P, M),
        "rmse": rmse,
        "converged": (rmse < config.rmse_tol) & ~degenerate,
        "zero_denominators": zero_den,
        "negative_projections": negatives,
    })
    out.u, out.v, out.trace = u, v, history
    return out


def fuse_mf_prob(profile, config: ALSConfig = ALSConfig()):
    """Rank-1 ``u v^T`` fit to the masked profile with ``u`` kept on the simplex; returns ``q = u``."""
    batch, single = as_batch(profile)
    out = fuse_mf_prob_batch(batch, config)
    return out.label(0) if single else out
