"""Brute-force reference minimisers for small class universes.

Nothing here imports from :mod:`hetfuse.fusion`; the objectives are written
out again on purpose so the two routes can check each other.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UnsupportedSizeError

MAX_ORACLE_CLASSES = 4


@dataclass(frozen=True)
class GridSpec:
    resolution: int | None = None  # None picks 200 for L <= 3 and 60 for L = 4
    refinement_rounds: int = 2
    # coarse points refined independently; near the simplex boundary the
    # objective valley can bend away from the single best coarse point
    refinement_starts: int = 8

    def __post_init__(self):
        if self.resolution is not None and self.resolution < 2:
            raise InvalidArgumentError("grid resolution must be at least 2")
        if self.refinement_rounds < 0:
            raise InvalidArgumentError("refinement rounds must be nonnegative")
        if self.refinement_starts < 1:
            raise InvalidArgumentError("refinement starts must be positive")

    def steps(self, L: int) -> int:
        if self.resolution is not None:
            return self.resolution
        return 200 if L <= 3 else 60

    def cell(self, L: int) -> float:
        """Coarse grid spacing on the simplex; the tolerance the oracle promises."""
        return 1.0 / self.steps(L)


@functools.lru_cache(maxsize=8)
def _simplex_grid(L: int, r: int) -> np.ndarray:
    axes = np.meshgrid(*[np.arange(r + 1)] * (L - 1), indexing="ij")
    head = np.stack([a.ravel() for a in axes], axis=1)
    head = head[head.sum(axis=1) <= r]
    pts = np.concatenate([head, r - head.sum(axis=1, keepdims=True)], axis=1) / r
    pts.setflags(write=False)
    return pts


def _local_grid(centre: np.ndarray, radius: float, h: float) -> np.ndarray:
    L = centre.size
    k = int(round(radius / h))
    offsets = np.arange(-k, k + 1) * h
    axes = np.meshgrid(*[offsets] * (L - 1), indexing="ij")
    head = np.stack([a.ravel() for a in axes], axis=1) + centre[:-1]
    pts = np.concatenate([head, 1.0 - head.sum(axis=1, keepdims=True)], axis=1)
    return pts[(pts >= 0).all(axis=1)]


def _restricted_ce(Q: np.ndarray, P: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Restricted cross-entropy at every row of ``Q`` (G, L)."""
    total = np.zeros(Q.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(P.shape[1]):
            members = [l for l in range(P.shape[0]) if M[l, i]]
            norm = Q[:, members].sum(axis=1)
            for l in members:
                if P[l, i] > 0:
                    total -= P[l, i] * np.log(Q[:, l] / norm)
    return np.where(np.isnan(total), np.inf, total)


def _zero_filled_ce(Q: np.ndarray, P: np.ndarray, M: np.ndarray) -> np.ndarray:
    total = np.zeros(Q.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(P.shape[1]):
            for l in range(P.shape[0]):
                target = P[l, i] if M[l, i] else 0.0
                if target > 0:
                    total -= target * np.log(Q[:, l])
    return np.where(np.isnan(total), np.inf, total)


def _grid_search(objective, L: int, grid: GridSpec):
    if L > MAX_ORACLE_CLASSES:
        raise UnsupportedSizeError(f"grid oracle supports at most {MAX_ORACLE_CLASSES} classes")
    if L == 1:
        q = np.ones(1)
        return q, float(objective(q[None])[0])
    r = grid.steps(L)
    pts = _simplex_grid(L, r)
    vals = objective(pts)
    order = np.argsort(vals, kind="stable")[:grid.refinement_starts]
    q_best, f_best = pts[order[0]], vals[order[0]]
    for start in order:
        q, f = pts[start], vals[start]
        h = 1.0 / r
        for _ in range(grid.refinement_rounds):
            local = _local_grid(q, h, h / 10)
            local_vals = objective(local)
            best = int(np.argmin(local_vals))
            if local_vals[best] <= f:
                q, f = local[best], local_vals[best]
            h /= 10
        if f < f_best:
            q_best, f_best = q, f
    q, f = q_best, f_best
    return q, float(f)


def _profile_arrays(profile):
    return np.asarray(profile.P, dtype=float), np.asarray(profile.M) > 0


def grid_min_ce(profile, grid: GridSpec = GridSpec()):
    """Grid minimiser of the restricted cross-entropy over the simplex, L <= 4."""
    P, M = _profile_arrays(profile)
    return _grid_search(lambda Q: _restricted_ce(Q, P, M), P.shape[0], grid)


def grid_min_sd(profile, grid: GridSpec = GridSpec()):
    """Grid minimiser of the summed cross-entropy against zero-filled predictions."""
    P, M = _profile_arrays(profile)
    return _grid_search(lambda Q: _zero_filled_ce(Q, P, M), P.shape[0], grid)


def exhaustive_mf_check(u, v, c, Z, M, lam: float = 0.0) -> float:
    """Plain-loop value of ``||M * (Z - u v^T - 1 c^T)||_F^2 + lam (|u|^2 + |v|^2)``.

    Pass ``c=None`` for the probability-space objective (no shift).
    """
    L, N = len(u), len(v)
    if L > 10 or N > 10:
        raise UnsupportedSizeError("exhaustive check is limited to 10 x 10 profiles")
    total = 0.0
    for l in range(L):
        for i in range(N):
            if M[l][i]:
                shift = 0.0 if c is None else float(c[i])
                r = float(Z[l][i]) - float(u[l]) * float(v[i]) - shift
                total += r * r
    reg = 0.0
    for vec in (u, v):
        for x in vec:
            reg += float(x) * float(x)
    return total + lam * reg


def total_variation(p, q) -> float:
    return 0.5 * math.fsum(abs(float(a) - float(b)) for a, b in zip(p, q))
