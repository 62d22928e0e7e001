"""Linear softmax classifier and its training from soft labels or fusion losses."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .fusion.ce import ce_gradient_batch, ce_objective_batch
from .labels import ProfileBatch, softmax_t

CHECKPOINT_FORMAT = "hetfuse-softmax-model"
CHECKPOINT_VERSION = 1
BP_METHODS = ("ce", "mf_p", "mf_lv", "mf_lf")
MF_P_RATE_SCALE = 150.0
WEIGHT_MEAN_FLOOR = 1e-6


@dataclass(frozen=True)
class SoftmaxModel:
    weight: np.ndarray  # (L, D)
    bias: np.ndarray  # (L,)
    classes: tuple[str, ...] | None = None

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        b = np.array(self.bias, dtype=float)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise InvalidArgumentError("weight must be (L, D) and bias (L,)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidArgumentError("model parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        if self.classes is not None:
            object.__setattr__(self, "classes", tuple(self.classes))

    @classmethod
    def init(cls, n_classes: int, dim: int, seed: int = 0, scale: float = 0.01,
             classes: Sequence[str] | None = None) -> "SoftmaxModel":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(n_classes, dim)), np.zeros(n_classes), classes)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise InvalidArgumentError(f"expected features of width {self.dim}, got {X.shape}")
        return X @ self.weight.T + self.bias

    def predict_proba(self, X, T: float = 1.0) -> np.ndarray:
        return softmax_t(self.logits(X), T)

    def predict(self, X) -> np.ndarray:
        return self.logits(X).argmax(axis=1)

    def accuracy(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def with_params(self, weight, bias) -> "SoftmaxModel":
        return SoftmaxModel(weight, bias, self.classes)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.weight).tobytes())
        h.update(np.ascontiguousarray(self.bias).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    rates: tuple[float, float] = (0.1, 0.01)
    momentum: float = 0.9
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or min(self.rates) <= 0:
            raise InvalidArgumentError("epochs, batch size and rates must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must lie in [0, 1)")

    def rate(self, epoch: int) -> float:
        """First rate for the first half of the epochs, second rate afterwards."""
        return self.rates[0] if epoch < (self.epochs + 1) // 2 else self.rates[1]

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w <= 0):
            raise InvalidArgumentError("class weights must be a positive vector")
        object.__setattr__(self, "weights", w)


def compute_balance_weights(fused) -> ClassWeights:
    """Inverse of each class's mean fused probability over the transfer set.

    ``fused`` is a list of FusedLabel or an (S, L) array of label vectors.
    """
    if isinstance(fused, np.ndarray):
        Q = fused
    else:
        Q = np.array([f.q for f in fused])
    if Q.size == 0:
        raise InvalidArgumentError("need at least one fused label")
    return ClassWeights(1.0 / np.maximum(Q.mean(axis=0), WEIGHT_MEAN_FLOOR))


def batch_order(n: int, config: TrainConfig) -> list[np.ndarray]:
    """Per-epoch sample permutations; depends only on ``n`` and the seed."""
    rng = np.random.default_rng(config.seed)
    return [rng.permutation(n) for _ in range(config.epochs)]


def order_fingerprint(n: int, config: TrainConfig) -> str:
    h = hashlib.sha256()
    for perm in batch_order(n, config):
        h.update(perm.astype(np.int64).tobytes())
    return h.hexdigest()[:16]


def soft_ce_grad(logits, targets, weights=None):
    """Per-sample weighted soft cross-entropy and its gradient in the logits."""
    s = softmax_t(logits)
    wq = targets if weights is None else targets * weights
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_s = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -(wq * log_s).sum(axis=1)
    return loss, wq.sum(axis=1, keepdims=True) * s - wq


def bp_loss_grad(method: str, logits, P, Z, M, lam: float = 0.01):
    """Per-sample fusion loss with the model output plugged in, and its logit gradient.

    ``ce`` uses the model's logits as ``u`` directly; ``mf_p`` plugs in the
    softmax output and solves ``v``; ``mf_lv`` solves ``(v, c)`` and
    ``mf_lf`` solves ``c`` with ``v = 1``. Solved variables are treated as
    constants when differentiating. The factorisation losses are averaged
    over the ``L * N`` profile entries.
    """
    a = np.asarray(logits, dtype=float)
    if method == "ce":
        return ce_objective_batch(a, P, M), ce_gradient_batch(a, P, M)
    entries = M.shape[1] * M.shape[2]
    if method == "mf_p":
        s = softmax_t(a)
        den = (M * s[:, :, None] ** 2).sum(axis=1)
        num = (M * P * s[:, :, None]).sum(axis=1)
        v = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        R = M * (P - s[:, :, None] * v[:, None, :])
        gu = -2.0 * (R * v[:, None, :]).sum(axis=2) / entries
        return (R * R).sum(axis=(1, 2)) / entries, s * (gu - (gu * s).sum(axis=1, keepdims=True))
    if method in ("mf_lv", "mf_lf"):
        count = M.sum(axis=1)
        u_bar = (M * a[:, :, None]).sum(axis=1) / count
        z_bar = (M * Z).sum(axis=1) / count
        if method == "mf_lv":
            centred = M * (a[:, :, None] - u_bar[:, None, :])
            v = (centred * Z).sum(axis=1) / ((centred ** 2).sum(axis=1) + lam)
            v = np.maximum(v, 0.0)
            reg = lam
        else:
            v = np.ones_like(u_bar)
            reg = 0.0
        c = z_bar - v * u_bar
        R = M * (Z - a[:, :, None] * v[:, None, :] - c[:, None, :])
        loss = (R * R).sum(axis=(1, 2)) + reg * ((a * a).sum(axis=1) + (v * v).sum(axis=1))
        grad = -2.0 * (R * v[:, None, :]).sum(axis=2) + 2.0 * reg * a
        return loss / entries, grad / entries
    raise InvalidArgumentError(f"unknown backprop method {method!r}; expected one of {BP_METHODS}")


def _param_grads(X, g):
    n = X.shape[0]
    return g.T @ X / n, g.sum(axis=0) / n


def _fit(model: SoftmaxModel, X, n: int, config: TrainConfig, batch_loss, rate_scale=1.0):
    W, b = model.weight.copy(), model.bias.copy()
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    curve = []
    for epoch, perm in enumerate(batch_order(n, config)):
        lr = config.rate(epoch) * rate_scale
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb = X[idx]
            loss, g = batch_loss(xb @ W.T + b, idx)
            gW, gb = _param_grads(xb, g)
            vW = config.momentum * vW + gW
            vb = config.momentum * vb + gb
            W -= lr * vW
            b -= lr * vb
            total += loss.sum()
        curve.append(total / n)
    return model.with_params(W, b), curve


def _check_features(model, X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise InvalidArgumentError(f"features must be (n, {model.dim}), got {X.shape}")
    if X.shape[0] != n:
        raise InvalidArgumentError(f"{X.shape[0]} feature rows for {n} targets")
    return X


def train_soft(model: SoftmaxModel, X, targets, config: TrainConfig = TrainConfig(),
               weights: ClassWeights | None = None):
    """Momentum SGD on the (optionally class-weighted) soft cross-entropy.

    ``targets`` is an (n, L) array or a list of FusedLabel. Returns the
    trained model and the per-epoch mean loss.
    """
    Q = np.array([t.q for t in targets]) if not isinstance(targets, np.ndarray) else targets
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != model.n_classes:
        raise InvalidArgumentError(f"targets must be (n, {model.n_classes})")
    X = _check_features(model, X, Q.shape[0])
    w = None if weights is None else weights.weights
    if w is not None and w.shape != (model.n_classes,):
        raise InvalidArgumentError("one weight per class is required")
    return _fit(model, X, Q.shape[0], config, lambda a, idx: soft_ce_grad(a, Q[idx], w))


def train_hard(model: SoftmaxModel, X, y, config: TrainConfig = TrainConfig()):
    y = np.asarray(y, dtype=int)
    return train_soft(model, X, np.eye(model.n_classes)[y], config)


def train_bp(model: SoftmaxModel, X, profiles: ProfileBatch, method: str,
             config: TrainConfig = TrainConfig(), lam: float = 0.01):
    """Train by backpropagating a fusion loss through the model output."""
    if method not in BP_METHODS:
        raise InvalidArgumentError(f"unknown backprop method {method!r}; expected one of {BP_METHODS}")
    if profiles.P.shape[1] != model.n_classes:
        raise InvalidArgumentError("profile class count differs from the model's")
    X = _check_features(model, X, len(profiles))
    P, Z, M = profiles.P, profiles.Z, profiles.M
    scale = MF_P_RATE_SCALE if method == "mf_p" else 1.0
    return _fit(model, X, len(profiles), config,
                lambda a, idx: bp_loss_grad(method, a, P[idx], Z[idx], M[idx], lam), scale)


def bp_objective(model: SoftmaxModel, X, profiles: ProfileBatch, method: str, lam: float = 0.01):
    """Mean fusion loss over a batch and its gradient in the model parameters."""
    X = np.asarray(X, dtype=float)
    loss, g = bp_loss_grad(method, model.logits(X), profiles.P, profiles.Z, profiles.M, lam)
    gW, gb = _param_grads(X, g)
    return float(loss.mean()), gW, gb


def soft_objective(model: SoftmaxModel, X, Q, weights: ClassWeights | None = None):
    X = np.asarray(X, dtype=float)
    loss, g = soft_ce_grad(model.logits(X), np.asarray(Q, dtype=float),
                           None if weights is None else weights.weights)
    gW, gb = _param_grads(X, g)
    return float(loss.mean()), gW, gb


def save_model(path, model: SoftmaxModel, seed: int | None = None,
               config: TrainConfig | None = None, extra: dict | None = None) -> None:
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n_classes": model.n_classes,
        "dim": model.dim,
        "classes": list(model.classes) if model.classes is not None else None,
        "weight": model.weight.tolist(),
        "bias": model.bias.tolist(),
        "seed": seed,
        "config_hash": config.digest() if config is not None else None,
    }
    if extra:
        record["extra"] = extra
    Path(path).write_text(json.dumps(record, indent=1))


def load_model(path) -> SoftmaxModel:
    record = json.loads(Path(path).read_text())
    if record.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported checkpoint version {record.get('version')}")
    model = SoftmaxModel(np.array(record["weight"]), np.array(record["bias"]), record.get("classes"))
    if (model.n_classes, model.dim) != (record["n_classes"], record["dim"]):
        raise InvalidArgumentError(f"{path}: recorded dimensions do not match the parameters")
    return model
