"""Synthetic classification worlds and heterogeneous source classifiers.

A world draws Gaussian classes in ``D`` dimensions. Classes ``0..L-1`` form
the universe; extra *outside* classes only ever appear in the unlabelled
transfer set. Source classifiers each see a subset of the universe and are
trained on disjoint slices of a per-class training pool.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, SizingError
from .labels import ClassSubset, ClassUniverse, HCPrediction
from .trainer import SoftmaxModel, TrainConfig, train_hard

SPLITS = ("train", "transfer", "adjust", "test")
HC_MODES = ("random_classes", "completely_overlapping")
SENSITIVITY_AXES = ("transfer_size", "temperature", "hc_accuracy")
DEFAULT_SWEEPS = {
    "transfer_size": [500, 2000, 5000],
    "temperature": [1.0, 3.0, 6.0, 10.0],
    "hc_accuracy": [0.4, 0.6, 0.8],
}


@dataclass(frozen=True)
class WorldSpec:
    n_classes: int = 8
    dim: int = 10
    mean_scale: float = 1.0
    cov_scale: float = 1.0
    separation: float = 2.5
    n_outside: int = 4
    transfer_size: int = 5000
    train_per_class: int = 1000
    adjust_per_class: int = 50
    test_per_class: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.dim < 2:
            raise InvalidArgumentError("a world needs at least 2 classes and 2 dimensions")
        if min(self.mean_scale, self.cov_scale, self.separation) <= 0:
            raise InvalidArgumentError("scales must be positive")
        if self.n_outside < 0 or self.transfer_size < 1:
            raise InvalidArgumentError("invalid outside-class count or transfer size")
        if min(self.train_per_class, self.adjust_per_class, self.test_per_class) < 1:
            raise InvalidArgumentError("every split needs at least one sample per class")


@dataclass(frozen=True)
class HCConfigSpec:
    n_hcs: int = 5
    classes_per_hc: tuple[int, int] = (3, 5)
    mode: str = "random_classes"
    samples_per_class: tuple[int, int] = (50, 200)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in HC_MODES:
            raise InvalidArgumentError(f"mode must be one of {HC_MODES}")
        lo, hi = self.classes_per_hc
        if self.n_hcs < 1 or lo < 1 or hi < lo:
            raise InvalidArgumentError("invalid classifier count or class range")
        lo, hi = self.samples_per_class
        if lo < 1 or hi < lo:
            raise InvalidArgumentError("invalid samples-per-class range")


@dataclass(frozen=True)
class SensitivitySpec:
    axis: str
    values: tuple = ()

    def __post_init__(self):
        if self.axis not in SENSITIVITY_AXES:
            raise InvalidArgumentError(f"axis must be one of {SENSITIVITY_AXES}")
        if not self.values:
            object.__setattr__(self, "values", tuple(DEFAULT_SWEEPS[self.axis]))


@dataclass
class Split:
    X: np.ndarray
    latent: np.ndarray  # index into all classes; >= n_classes means outside the universe
    ids: list[str]


@dataclass
class World:
    spec: WorldSpec
    universe: ClassUniverse
    splits: dict[str, Split]
    outside_labels: tuple[str, ...] = ()

    def split(self, name: str) -> Split:
        return self.splits[name]

    @property
    def L(self) -> int:
        return self.universe.size

    def fingerprint(self, name: str = "transfer") -> str:
        s = self.splits[name]
        return hashlib.sha256(np.ascontiguousarray(s.X).tobytes()).hexdigest()[:16]


def class_labels(n: int, prefix: str = "c") -> list[str]:
    width = max(2, len(str(n - 1)))
    return [f"{prefix}{k:0{width}d}" for k in range(n)]


def generate_world(spec: WorldSpec) -> World:
    """Draw a world; identical specs give identical worlds."""
    rng = np.random.default_rng(spec.seed)
    L, K, D = spec.n_classes, spec.n_classes + spec.n_outside, spec.dim
    centres = spec.mean_scale * spec.separation * rng.normal(size=(K, D)) / np.sqrt(D) * np.sqrt(2)
    shapes = np.eye(D) + 0.3 * rng.normal(size=(K, D, D)) / np.sqrt(D)
    noise_sd = np.sqrt(spec.cov_scale)

    def draw(classes: np.ndarray, split: str, stream: int) -> Split:
        # one stream per split, so resizing one split leaves the others untouched
        eps = np.random.default_rng([spec.seed, stream]).normal(size=(classes.size, D))
        X = centres[classes] + noise_sd * np.einsum("nij,nj->ni", shapes[classes], eps)
        return Split(X, classes, [f"{split}-{k}" for k in range(classes.size)])

    inside = np.arange(L)
    transfer_classes = np.random.default_rng([spec.seed, 5]).integers(0, K, size=spec.transfer_size)
    splits = {
        "train": draw(np.repeat(inside, spec.train_per_class), "train", 1),
        "transfer": draw(transfer_classes, "transfer", 2),
        "adjust": draw(np.repeat(inside, spec.adjust_per_class), "adjust", 3),
        "test": draw(np.repeat(inside, spec.test_per_class), "test", 4),
    }
    return World(spec, ClassUniverse(class_labels(L)), splits,
                 tuple(class_labels(spec.n_outside, "x")))


@dataclass
class SourceClassifier:
    subset: ClassSubset
    model: SoftmaxModel
    train_ids: list[str] = field(default_factory=list)

    def logits(self, X) -> np.ndarray:
        return self.model.logits(X)

    def predictions(self, X) -> list[HCPrediction]:
        return [HCPrediction.from_logits(self.subset, z) for z in self.logits(X)]

    def local_labels(self, latent: np.ndarray) -> np.ndarray:
        """Map universe indices onto this classifier's output indices (-1 if not covered)."""
        lookup = np.full(max(self.subset.universe.size, int(latent.max()) + 1), -1)
        lookup[list(self.subset.indices)] = np.arange(self.subset.size)
        return lookup[latent]


def assign_subsets(universe: ClassUniverse, spec: HCConfigSpec) -> list[ClassSubset]:
    """Class subsets for each classifier; their union always covers the universe."""
    L = universe.size
    if spec.mode == "completely_overlapping":
        return [universe.full() for _ in range(spec.n_hcs)]
    rng = np.random.default_rng([spec.seed, 1])
    lo, hi = spec.classes_per_hc
    lo, hi = min(lo, L), min(hi, L)
    for _ in range(200):
        chosen = [rng.choice(L, size=rng.integers(lo, hi + 1), replace=False)
                  for _ in range(spec.n_hcs)]
        if len(set(np.concatenate(chosen).tolist())) == L:
            break
    else:
        missing = sorted(set(range(L)) - set(np.concatenate(chosen).tolist()))
        for j, cls in enumerate(missing):
            chosen[j % spec.n_hcs] = np.append(chosen[j % spec.n_hcs], cls)
    return [ClassSubset(universe, c) for c in chosen]


def train_hcs(world: World, spec: HCConfigSpec, config: TrainConfig = TrainConfig(),
              subsets: list[ClassSubset] | None = None) -> list[SourceClassifier]:
    """Train one source classifier per subset on disjoint slices of the training pool."""
    subsets = subsets or assign_subsets(world.universe, spec)
    pool = world.split("train")
    rng = np.random.default_rng([spec.seed, 2])
    by_class = {c: rng.permutation(np.flatnonzero(pool.latent == c)) for c in range(world.L)}
    cursor = {c: 0 for c in range(world.L)}
    lo, hi = spec.samples_per_class
    hcs = []
    for i, sub in enumerate(subsets):
        rows = []
        for c in sub.indices:
            k = int(rng.integers(lo, hi + 1))
            if cursor[c] + k > by_class[c].size:
                raise SizingError(
                    f"class {world.universe.labels[c]} has {by_class[c].size} training samples, "
                    f"not enough for classifier {i}")
            rows.append(by_class[c][cursor[c]:cursor[c] + k])
            cursor[c] += k
        rows = np.concatenate(rows)
        if rows.size == 0:
            raise SizingError(f"classifier {i} has no training samples")
        init = SoftmaxModel.init(sub.size, world.spec.dim, seed=hash_seed(spec.seed, 3, i),
                                 classes=sub.labels)
        hc = SourceClassifier(sub, init, [pool.ids[r] for r in rows])
        cfg = replace(config, seed=hash_seed(config.seed, 4, i))
        hc.model, _ = train_hard(init, pool.X[rows], hc.local_labels(pool.latent[rows]), cfg)
        hcs.append(hc)
    return hcs


def hash_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def perturb(model: SoftmaxModel, scale: float, rng: np.random.Generator) -> SoftmaxModel:
    """Add zero-mean Gaussian noise with standard deviation ``scale`` to every parameter."""
    if scale == 0:
        return model
    return model.with_params(model.weight + scale * rng.normal(size=model.weight.shape),
                             model.bias + scale * rng.normal(size=model.bias.shape))


def degrade_to_accuracy(model: SoftmaxModel, target: float, X_adjust, y_adjust,
                        seed: int = 0, tolerance: float = 0.01, rounds: int = 20) -> SoftmaxModel:
    """Inject parameter noise until adjustment accuracy falls to ``target`` (+/- ``tolerance``).

    The noise direction is drawn once; its scale is doubled until accuracy
    is at most ``target + tolerance`` and then bisected for at most
    ``rounds`` steps. A model already at or below the target is returned as is.
    """
    if not 0 < target <= 1:
        raise InvalidArgumentError("target accuracy must lie in (0, 1]")
    y_adjust = np.asarray(y_adjust)
    if y_adjust.size == 0:
        raise InvalidArgumentError("adjustment set is empty")
    if model.accuracy(X_adjust, y_adjust) <= target:
        return model
    rng = np.random.default_rng(seed)
    dW = rng.normal(size=model.weight.shape)
    db = rng.normal(size=model.bias.shape)

    def noisy(scale):
        return model.with_params(model.weight + scale * dW, model.bias + scale * db)

    base = float(np.abs(model.weight).mean() + np.abs(model.bias).mean()) or 1.0
    lo, hi = 0.0, 0.01 * base
    for _ in range(60):
        if noisy(hi).accuracy(X_adjust, y_adjust) <= target + tolerance:
            break
        lo, hi = hi, hi * 2
    else:
        return noisy(hi)
    best = noisy(hi)
    for _ in range(rounds):
        acc = best.accuracy(X_adjust, y_adjust)
        if abs(acc - target) <= tolerance:
            break
        mid = 0.5 * (lo + hi)
        cand = noisy(mid)
        if cand.accuracy(X_adjust, y_adjust) > target + tolerance:
            lo = mid
        else:
            hi, best = mid, cand
    return best


# ---- JSON Lines dataset files ---------------------------------------------

def dump_world(world: World, path) -> None:
    """One record per sample; transfer samples carry ``label: null``."""
    names = list(world.universe.labels) + list(world.outside_labels)
    with open(path, "w") as fh:
        header = {"kind": "world", "spec": asdict(world.spec), "classes": list(world.universe.labels),
                  "outside": list(world.outside_labels)}
        fh.write(json.dumps(header) + "\n")
        for name in SPLITS:
            s = world.splits[name]
            for sid, x, c in zip(s.ids, s.X, s.latent):
                label = None if name == "transfer" else names[c]
                fh.write(json.dumps({"sample_id": sid, "features": x.tolist(),
                                     "label": label, "split": name}) + "\n")


def load_world(path) -> World:
    """Read a world written by :func:`dump_world`. Transfer latents are unknown and set to -1."""
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "world":
        raise InvalidArgumentError(f"{path}: missing world header line")
    head = lines[0]
    spec = WorldSpec(**head["spec"])
    names = head["classes"] + head.get("outside", [])
    index = {n: k for k, n in enumerate(names)}
    buckets = {name: ([], [], []) for name in SPLITS}
    for lineno, rec in enumerate(lines[1:], start=2):
        try:
            X, lat, ids = buckets[rec["split"]]
            X.append(rec["features"])
            lat.append(-1 if rec["label"] is None else index[rec["label"]])
            ids.append(rec["sample_id"])
        except KeyError as err:
            raise InvalidArgumentError(f"{path}:{lineno}: bad record ({err})") from None
    splits = {k: Split(np.array(v[0], dtype=float).reshape(len(v[0]), spec.dim),
                       np.array(v[1], dtype=int), v[2]) for k, v in buckets.items()}
    return World(spec, ClassUniverse(head["classes"]), splits, tuple(head.get("outside", [])))
