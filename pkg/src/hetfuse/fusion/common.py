from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..labels import FusedLabel, PredictionProfile, ProfileBatch


@dataclass
class BatchFusion:
    """Fused labels for a batch: ``Q`` has shape (S, L); diagnostics are per-sample arrays."""

    Q: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.Q.shape[0]

    def label(self, s: int) -> FusedLabel:
        diag = {k: _scalar(v[s]) for k, v in self.diagnostics.items()}
        if self.warnings:
            diag["warnings"] = list(self.warnings)
        return FusedLabel(self.Q[s].copy(), self.method, diag)

    def labels(self) -> list[FusedLabel]:
        return [self.label(s) for s in range(len(self))]

    def summary(self) -> dict:
        out = {}
        for k, v in self.diagnostics.items():
            v = np.asarray(v)
            out[k] = float(v.mean()) if v.dtype != bool else float(v.mean())
        return out


def _scalar(x):
    x = np.asarray(x)
    if x.dtype == bool:
        return bool(x)
    if np.issubdtype(x.dtype, np.integer):
        return int(x)
    return float(x)


def as_batch(profile) -> tuple[ProfileBatch, bool]:
    if isinstance(profile, ProfileBatch):
        return profile, False
    if isinstance(profile, PredictionProfile):
        return ProfileBatch.of(profile), True
    raise TypeError(f"expected a profile, got {type(profile).__name__}")


def overlap_components(M: np.ndarray) -> int:
    """Number of connected components of the class co-occurrence graph of mask ``M`` (L, N)."""
    L = M.shape[0]
    adj = (M @ M.T) > 0
    seen = np.zeros(L, dtype=bool)
    count = 0
    for start in range(L):
        if seen[start]:
            continue
        count += 1
        frontier = np.zeros(L, dtype=bool)
        frontier[start] = True
        while frontier.any():
            seen |= frontier
            frontier = adj[frontier].any(axis=0) & ~seen
    return count


def masked_column_means(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Mean of ``X`` over the mask in each column; shapes (S, L, N) -> (S, N)."""
    return (M * X).sum(axis=1) / M.sum(axis=1)


class MaskOps:
    """Contractions with a mask stack (S, L, N), using one (L, N) matrix when all samples share it."""

    def __init__(self, M: np.ndarray, rows: np.ndarray | None = None, shared=None):
        self.full = M
        self.shared = shared if shared is not None else (M[0] if (M == M[0]).all() else None)
        self.M = None if self.shared is not None else (M if rows is None else M[rows])

    def take(self, rows) -> "MaskOps":
        return MaskOps(self.full, rows, self.shared)

    def over_classifiers(self, x: np.ndarray) -> np.ndarray:
        """``sum_i M[l, i] * x[i]`` -> (S, L)."""
        if self.shared is not None:
            return x @ self.shared.T
        return np.einsum("sln,sn->sl", self.M, x)

    def over_classes(self, x: np.ndarray) -> np.ndarray:
        """``sum_l M[l, i] * x[l]`` -> (S, N)."""
        if self.shared is not None:
            return x @ self.shared
        return np.einsum("sln,sl->sn", self.M, x)
