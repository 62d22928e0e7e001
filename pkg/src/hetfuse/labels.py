"""Class sets, temperature softmax, restriction and prediction profiles.

A *profile* collects the outputs of ``N`` classifiers for one sample into
``L x N`` matrices over the class universe:

* ``P`` -- temperature-smoothed probabilities, zero outside each mask column
* ``Z`` -- temperature-scaled logits, zero-mean within each mask column
* ``M`` -- binary coverage mask, ``M[l, i] = 1`` iff classifier ``i`` predicts ``l``

Batched variants stack ``S`` samples along a leading axis so the solvers can
work on a whole transfer set at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CoverageError, DegenerateRestrictionError, InvalidArgumentError

PROB_FLOOR = 1e-12
SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True)
class ClassUniverse:
    """Ordered set of class labels; index order is sorted label order."""

    labels: tuple[str, ...]

    def __init__(self, labels: Iterable[str]):
        labels = [str(lab) for lab in labels]
        if not labels:
            raise InvalidArgumentError("class universe must be non-empty")
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError("class labels must be unique")
        object.__setattr__(self, "labels", tuple(sorted(labels)))
        object.__setattr__(self, "_index", {lab: k for k, lab in enumerate(self.labels)})

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise InvalidArgumentError(f"unknown class label {label!r}") from None

    def subset(self, labels: Iterable[str]) -> "ClassSubset":
        return ClassSubset(self, [self.index(lab) for lab in labels])

    def full(self) -> "ClassSubset":
        return ClassSubset(self, range(self.size))


@dataclass(frozen=True)
class ClassSubset:
    universe: ClassUniverse
    indices: tuple[int, ...]

    def __init__(self, universe: ClassUniverse, indices: Iterable[int]):
        idx = sorted(int(k) for k in indices)
        if not idx:
            raise InvalidArgumentError("class subset must be non-empty")
        if len(set(idx)) != len(idx):
            raise InvalidArgumentError("duplicate indices in class subset")
        if idx[0] < 0 or idx[-1] >= universe.size:
            raise InvalidArgumentError("subset index out of range")
        object.__setattr__(self, "universe", universe)
        object.__setattr__(self, "indices", tuple(idx))

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.universe.labels[k] for k in self.indices)

    def complement(self) -> tuple[int, ...]:
        inside = set(self.indices)
        return tuple(k for k in range(self.universe.size) if k not in inside)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.universe.size)
        m[list(self.indices)] = 1.0
        return m


def _check_temperature(T: float) -> float:
    T = float(T)
    if not np.isfinite(T) or T <= 0:
        raise InvalidArgumentError(f"temperature must be positive and finite, got {T}")
    return T


def softmax_t(logits, T: float = 1.0) -> np.ndarray:
    """Softmax of ``logits / T`` along the last axis, max-shifted for stability."""
    T = _check_temperature(T)
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("logits must be finite")
    z = z / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def safe_log(probs) -> np.ndarray:
    return np.log(np.maximum(np.asarray(probs, dtype=float), PROB_FLOOR))


def restrict(q, subset: ClassSubset | Sequence[int]) -> np.ndarray:
    """Renormalise a distribution over the universe onto ``subset``."""
    q = np.asarray(q, dtype=float)
    idx = list(subset.indices) if isinstance(subset, ClassSubset) else list(subset)
    part = q[idx]
    mass = part.sum()
    if not mass > 0:
        raise DegenerateRestrictionError("distribution has zero mass on the subset")
    return part / mass


@dataclass(frozen=True)
class HCPrediction:
    """Output of one classifier on one sample, over its own class subset."""

    subset: ClassSubset
    probs: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.subset.size,):
            raise InvalidArgumentError(
                f"expected {self.subset.size} probabilities, got shape {probs.shape}")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise InvalidArgumentError("probabilities must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > SIMPLEX_ATOL:
            raise InvalidArgumentError(f"probabilities sum to {probs.sum():.12g}, not 1")
        object.__setattr__(self, "probs", probs)
        if self.logits is not None:
            logits = np.asarray(self.logits, dtype=float)
            if logits.shape != probs.shape:
                raise InvalidArgumentError("logits and probs have different lengths")
            if not np.all(np.isfinite(logits)):
                raise InvalidArgumentError("logits must be finite")
            if np.max(np.abs(softmax_t(logits) - probs)) > 1e-6:
                raise InvalidArgumentError("logits disagree with probabilities")
            object.__setattr__(self, "logits", logits)

    @classmethod
    def from_logits(cls, subset: ClassSubset, logits) -> "HCPrediction":
        logits = np.asarray(logits, dtype=float)
        return cls(subset, softmax_t(logits), logits)

    def effective_logits(self) -> np.ndarray:
        if self.logits is not None:
            return self.logits
        return safe_log(self.probs)


@dataclass(frozen=True)
class PredictionProfile:
    P: np.ndarray
    Z: np.ndarray
    M: np.ndarray

    @property
    def L(self) -> int:
        return self.P.shape[0]

    @property
    def N(self) -> int:
        return self.P.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.P[self.M[:, i] > 0, i]


@dataclass(frozen=True)
class ProfileBatch:
    """``S`` profiles stacked along axis 0: ``P, Z, M`` all have shape (S, L, N)."""

    P: np.ndarray
    Z: np.ndarray
    M: np.ndarray

    def __len__(self) -> int:
        return self.P.shape[0]

    def __getitem__(self, s: int) -> PredictionProfile:
        return PredictionProfile(self.P[s], self.Z[s], self.M[s])

    def take(self, index) -> "ProfileBatch":
        return ProfileBatch(self.P[index], self.Z[index], self.M[index])

    @classmethod
    def stack(cls, profiles: Sequence[PredictionProfile]) -> "ProfileBatch":
        return cls(np.stack([p.P for p in profiles]),
                   np.stack([p.Z for p in profiles]),
                   np.stack([p.M for p in profiles]))

    @classmethod
    def of(cls, profile) -> "ProfileBatch":
        if isinstance(profile, ProfileBatch):
            return profile
        return cls(profile.P[None], profile.Z[None], profile.M[None])


@dataclass
class FusedLabel:
    q: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)


def _uncovered(M: np.ndarray, universe_labels) -> list[str]:
    return [universe_labels[l] for l in np.flatnonzero(M.sum(axis=-1) == 0)]


def build_profile(predictions: Sequence[HCPrediction], universe: ClassUniverse,
                  T: float = 1.0) -> PredictionProfile:
    """Assemble one sample's classifier outputs into masked ``P, Z, M``."""
    T = _check_temperature(T)
    if not predictions:
        raise InvalidArgumentError("at least one prediction is required")
    L, N = universe.size, len(predictions)
    P = np.zeros((L, N))
    Z = np.zeros((L, N))
    M = np.zeros((L, N))
    for i, pred in enumerate(predictions):
        if pred.subset.universe != universe:
            raise InvalidArgumentError("prediction subset belongs to a different universe")
        idx = list(pred.subset.indices)
        M[idx, i] = 1.0
        z = pred.effective_logits() / T
        # T = 1 keeps the given probabilities bit-for-bit
        P[idx, i] = pred.probs if T == 1.0 else softmax_t(z)
        Z[idx, i] = z - z.mean()
    missing = _uncovered(M, universe.labels)
    if missing:
        raise CoverageError(missing)
    return PredictionProfile(P, Z, M)


def build_profile_batch(hc_logits: Sequence[np.ndarray], subsets: Sequence[ClassSubset],
                        T: float = 1.0) -> ProfileBatch:
    """Vectorised :func:`build_profile` for ``S`` samples sharing one mask.

    ``hc_logits[i]`` has shape (S, |L_i|) and holds classifier ``i``'s raw logits.
    """
    T = _check_temperature(T)
    if len(hc_logits) != len(subsets) or not subsets:
        raise InvalidArgumentError("need one logit array per subset")
    universe = subsets[0].universe
    S = np.asarray(hc_logits[0]).shape[0]
    L, N = universe.size, len(subsets)
    P = np.zeros((S, L, N))
    Z = np.zeros((S, L, N))
    M = np.zeros((L, N))
    for i, (z, sub) in enumerate(zip(hc_logits, subsets)):
        z = np.asarray(z, dtype=float)
        if z.shape != (S, sub.size):
            raise InvalidArgumentError(f"logits for classifier {i} have shape {z.shape}")
        idx = list(sub.indices)
        M[idx, i] = 1.0
        P[:, idx, i] = softmax_t(z, T)
        zt = z / T
        Z[:, idx, i] = zt - zt.mean(axis=1, keepdims=True)
    missing = _uncovered(M, universe.labels)
    if missing:
        raise CoverageError(missing)
    return ProfileBatch(P, Z, np.broadcast_to(M, (S, L, N)).copy())
