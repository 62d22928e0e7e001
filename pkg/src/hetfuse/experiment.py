"""Benchmark trials: world -> source classifiers -> fusion -> unified classifier -> accuracy."""

from __future__ import annotations

import hashlib
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bench import (
    HCConfigSpec,
    SensitivitySpec,
    WorldSpec,
    degrade_to_accuracy,
    generate_world,
    hash_seed,
    train_hcs,
)
from .errors import InvalidArgumentError
from .fusion import CESolverConfig, fuse_batch
from .labels import ProfileBatch, build_profile_batch
from .oracle import GridSpec, grid_min_ce, total_variation
from .trainer import (
    SoftmaxModel,
    TrainConfig,
    compute_balance_weights,
    order_fingerprint,
    train_bp,
    train_hard,
    train_soft,
)

log = logging.getLogger(__name__)

METHODS = (
    "sd", "sd-bs",
    "ce-e", "ce-bp", "ce-bs",
    "mf-p-e", "mf-p-bp", "mf-p-bs",
    "mf-lv-e", "mf-lv-bp", "mf-lv-bs",
    "mf-lf-e", "mf-lf-bp", "mf-lf-bs",
    "spv",
)
# method-name family -> fusion solver / backprop loss name
_FAMILY = {"sd": "sd", "ce": "ce", "mf-p": "mf_p", "mf-lv": "mf_lv", "mf-lf": "mf_lf"}
QUALITY_MAX_CLASSES = 4
QUALITY_SAMPLES = 20


def parse_method(name: str) -> tuple[str, str]:
    """Split a method name into (fusion family, mode); mode is 'e', 'bp', 'bs' or 'spv'."""
    if name not in METHODS:
        raise InvalidArgumentError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    if name == "spv":
        return "", "spv"
    if name == "sd":
        return "sd", "e"
    family, mode = name.rsplit("-", 1)
    return _FAMILY[family], mode


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldSpec = WorldSpec()
    hc: HCConfigSpec = HCConfigSpec()
    train: TrainConfig = TrainConfig()
    methods: tuple[str, ...] = METHODS
    trials: int = 1
    temperature: float = 3.0
    lam: float = 0.01
    seed: int = 0
    hc_accuracy: float | None = None
    # None: curvature-bounded step for the cross-entropy solver
    ce_step: float | None = None
    output: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise InvalidArgumentError("at least one method is required")
        for m in self.methods:
            parse_method(m)
        if self.trials < 1:
            raise InvalidArgumentError("trials must be positive")
        if self.temperature <= 0 or self.lam < 0:
            raise InvalidArgumentError("temperature must be positive and lambda nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d


@dataclass
class TrialReport:
    trial: int
    seeds: dict
    accuracy: dict = field(default_factory=dict)
    label_quality: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    fingerprints: dict = field(default_factory=dict)
    hc_accuracy: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    wall_time: float | None = None

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d


def trial_seeds(config: ExperimentConfig, trial: int) -> dict:
    return {
        "world": hash_seed(config.seed, trial, 11),
        "hc": hash_seed(config.seed, trial, 12),
        "train": hash_seed(config.seed, trial, 13),
        "init": hash_seed(config.seed, trial, 14),
        "noise": hash_seed(config.seed, trial, 15),
    }


def _fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _quality(fused_q: np.ndarray, profiles: ProfileBatch) -> float:
    n = min(QUALITY_SAMPLES, len(profiles))
    return float(np.mean([total_variation(fused_q[s], grid_min_ce(profiles[s], GridSpec())[0])
                          for s in range(n)]))


def run_trial(config: ExperimentConfig, trial: int) -> TrialReport:
    """One benchmark trial; per-method failures are recorded, not raised."""
    start = time.perf_counter()
    seeds = trial_seeds(config, trial)
    report = TrialReport(trial, seeds)
    world = generate_world(replace(config.world, seed=seeds["world"]))
    hc_spec = replace(config.hc, seed=seeds["hc"])
    hc_train = replace(config.train, seed=seeds["train"])
    hcs = train_hcs(world, hc_spec, hc_train)

    adjust, test = world.split("adjust"), world.split("test")
    if config.hc_accuracy is not None:
        for i, hc in enumerate(hcs):
            keep = np.isin(adjust.latent, hc.subset.indices)
            hc.model = degrade_to_accuracy(hc.model, config.hc_accuracy, adjust.X[keep],
                                           hc.local_labels(adjust.latent[keep]),
                                           seed=hash_seed(seeds["noise"], i))
    for hc in hcs:
        keep = np.isin(adjust.latent, hc.subset.indices)
        report.hc_accuracy.append(hc.model.accuracy(adjust.X[keep], hc.local_labels(adjust.latent[keep])))

    transfer = world.split("transfer")
    subsets = [hc.subset for hc in hcs]
    profiles = build_profile_batch([hc.logits(transfer.X) for hc in hcs], subsets, config.temperature)
    init = SoftmaxModel.init(world.L, world.spec.dim, seed=seeds["init"], classes=world.universe.labels)
    train_cfg = replace(config.train, seed=seeds["train"])
    report.fingerprints = {
        "hcs": _fingerprint(*[hc.model.weight for hc in hcs], *[hc.model.bias for hc in hcs]),
        "transfer": world.fingerprint("transfer"),
        "test": world.fingerprint("test"),
        "init": init.fingerprint(),
        "batch_order": order_fingerprint(transfer.X.shape[0], train_cfg),
    }

    fused = {}
    for name in config.methods:
        try:
            family, mode = parse_method(name)
            if mode == "spv":
                pool = world.split("train")
                used = {sid for hc in hcs for sid in hc.train_ids}
                rows = np.array([k for k, sid in enumerate(pool.ids) if sid in used])
                model, _ = train_hard(init, pool.X[rows], pool.latent[rows], train_cfg)
            elif mode == "bp":
                model, _ = train_bp(init, transfer.X, profiles, family, train_cfg, lam=config.lam)
            else:
                if family not in fused:
                    fused[family] = fuse_batch(family, profiles, lam=config.lam,
                                               ce_config=CESolverConfig(step_size=config.ce_step))
                    report.diagnostics[family] = fused[family].summary()
                    if world.L <= QUALITY_MAX_CLASSES:
                        report.label_quality[family] = _quality(fused[family].Q, profiles)
                Q = fused[family].Q
                weights = compute_balance_weights(Q) if mode == "bs" else None
                model, _ = train_soft(init, transfer.X, Q, train_cfg, weights)
            report.accuracy[name] = model.accuracy(test.X, test.latent)
        except Exception as err:  # recorded per method; the trial carries on
            log.warning("trial %d method %s failed: %s", trial, name, err)
            report.failures[name] = "".join(traceback.format_exception_only(type(err), err)).strip()
    report.wall_time = time.perf_counter() - start
    return report


def _safe_trial(args):
    config, trial = args
    try:
        return run_trial(config, trial)
    except Exception as err:
        rep = TrialReport(trial, trial_seeds(config, trial))
        rep.failures["trial"] = "".join(traceback.format_exception_only(type(err), err)).strip()
        return rep


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> list[TrialReport]:
    """All trials, merged in trial order regardless of ``jobs``."""
    work = [(config, t) for t in range(config.trials)]
    if jobs <= 1 or config.trials == 1:
        return [_safe_trial(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_safe_trial, work))


def summarise(reports: list[TrialReport], methods) -> dict:
    out = {}
    for m in methods:
        accs = [r.accuracy[m] for r in reports if m in r.accuracy]
        out[m] = {
            "mean": float(np.mean(accs)) if accs else None,
            "median": float(np.median(accs)) if accs else None,
            "trials": len(accs),
            "failures": sum(m in r.failures for r in reports),
        }
    return out


def experiment_document(config: ExperimentConfig, reports: list[TrialReport],
                        timing: bool = False) -> dict:
    return {
        "config": config.to_dict(),
        "summary": summarise(reports, config.methods),
        "trials": [r.to_dict(timing) for r in reports],
        "failed_trials": [r.trial for r in reports if "trial" in r.failures],
    }


def format_table(doc: dict) -> str:
    rows = [f"{'method':<10} {'mean':>7} {'median':>7} {'trials':>6} {'failed':>6}"]
    for m, s in doc["summary"].items():
        mean = "-" if s["mean"] is None else f"{s['mean']:.4f}"
        med = "-" if s["median"] is None else f"{s['median']:.4f}"
        rows.append(f"{m:<10} {mean:>7} {med:>7} {s['trials']:>6} {s['failures']:>6}")
    return "\n".join(rows)


def sweep_config(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "transfer_size":
        return replace(config, world=replace(config.world, transfer_size=int(value)))
    if axis == "temperature":
        return replace(config, temperature=float(value))
    if axis == "hc_accuracy":
        return replace(config, hc_accuracy=float(value))
    raise InvalidArgumentError(f"unknown sweep axis {axis!r}")


def run_sweep(config: ExperimentConfig, sweep: SensitivitySpec, jobs: int = 1):
    """One experiment per axis value, all with the same seeds."""
    return [(value, run_experiment(sweep_config(config, sweep.axis, value), jobs))
            for value in sweep.values]


def sweep_rows(config: ExperimentConfig, sweep: SensitivitySpec, series) -> list[dict]:
    """Long-format rows (axis value, method, mean, median) for plotting."""
    rows = []
    for value, reports in series:
        for m, s in summarise(reports, config.methods).items():
            rows.append({"axis": sweep.axis, "value": value, "method": m,
                         "mean": s["mean"], "median": s["median"], "trials": s["trials"]})
    return rows


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)
