"""Command-line interface: ``hetfuse {fuse,experiment,sweep,gen-world,train-hc}``.

Configs are TOML files; top-level keys set experiment options and the
``world.*``, ``hc.*``, ``train.*`` and ``sweep.*`` sections set the matching
settings fields, e.g.::

    seed = 7
    trials = 5
    methods = ["sd", "ce-e", "mf-lf-bs", "spv"]
    world.n_classes = 6
    hc.mode = "completely_overlapping"
    train.epochs = 10
    sweep.axis = "temperature"
    sweep.values = [1, 3, 6, 10]

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .bench import (
    HCConfigSpec,
    SensitivitySpec,
    WorldSpec,
    dump_world,
    generate_world,
    load_world,
    train_hcs,
)
from .errors import CoverageError, HetfuseError, InvalidArgumentError
from .experiment import (
    ExperimentConfig,
    dumps,
    experiment_document,
    format_table,
    run_experiment,
    run_sweep,
    sweep_rows,
)
from .fusion import FUSION_METHODS, CESolverConfig, LogitMFConfig, fuse_batch
from .labels import ClassUniverse, HCPrediction, ProfileBatch, build_profile
from .trainer import TrainConfig, save_model

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
log = logging.getLogger("hetfuse")

_SECTIONS = {"world": WorldSpec, "hc": HCConfigSpec, "train": TrainConfig}
_TOP_LEVEL = {"seed", "trials", "temperature", "lambda", "methods", "hc_accuracy", "ce_step",
              "output", "jobs"}


class UsageError(InvalidArgumentError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; here bad usage is a validation error
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# ---- config files -----------------------------------------------------------

def _coerce(cls, name: str, values: dict):
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, val in values.items():
        if key not in known:
            raise InvalidArgumentError(f"unknown config key {name}.{key}")
        out[key] = tuple(val) if isinstance(val, list) else val
    return out


def load_config(path: str | None) -> tuple[dict, dict]:
    """Parse a TOML config into (experiment kwargs, sweep section)."""
    if path is None:
        return {}, {}
    try:
        raw = tomllib.loads(Path(path).read_text())
    except OSError as err:
        raise InvalidArgumentError(f"cannot read config {path}: {err.strerror}") from None
    except tomllib.TOMLDecodeError as err:
        raise InvalidArgumentError(f"{path}: {err}") from None
    kwargs, sweep = {}, {}
    for key, val in raw.items():
        if key in _SECTIONS:
            if not isinstance(val, dict):
                raise InvalidArgumentError(f"{path}: {key} must be a section")
            kwargs[key] = _SECTIONS[key](**_coerce(_SECTIONS[key], key, val))
        elif key == "sweep":
            unknown = set(val) - {"axis", "values"}
            if unknown:
                raise InvalidArgumentError(f"unknown config key sweep.{sorted(unknown)[0]}")
            sweep = dict(val)
        elif key in _TOP_LEVEL:
            kwargs[key] = val
        else:
            raise InvalidArgumentError(f"unknown config key {key}")
    return kwargs, sweep


def build_experiment_config(args) -> tuple[ExperimentConfig, dict, int]:
    kwargs, sweep = load_config(args.config)
    jobs = kwargs.pop("jobs", 1)
    if "lambda" in kwargs:
        kwargs["lam"] = kwargs.pop("lambda")
    if "methods" in kwargs:
        kwargs["methods"] = tuple(kwargs["methods"])
    for flag, key in (("seed", "seed"), ("temperature", "temperature"), ("lam", "lam"),
                      ("trials", "trials"), ("out", "output")):
        val = getattr(args, flag, None)
        if val is not None:
            kwargs[key] = val
    if getattr(args, "methods", None):
        kwargs["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if getattr(args, "jobs", None) is not None:
        jobs = args.jobs
    try:
        config = ExperimentConfig(**kwargs)
    except TypeError as err:
        raise InvalidArgumentError(str(err)) from None
    return config, sweep, max(1, int(jobs))


# ---- prediction files -------------------------------------------------------

def _record_error(path, lineno, msg):
    return InvalidArgumentError(f"{path}:{lineno}: {msg}")


def read_predictions(path, universe_labels=None):
    """Read classifier outputs from JSON Lines.

    Each record: ``sample_id``, ``classifier_id``, ``classes`` and ``probs``
    and/or ``logits``. Returns (universe, {sample_id: [HCPrediction, ...]}) with
    samples in first-appearance order and classifiers sorted by id.
    """
    records = []
    try:
        fh = open(path)
    except OSError as err:
        raise InvalidArgumentError(f"cannot read {path}: {err.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise _record_error(path, lineno, f"invalid JSON ({err.msg})") from None
            if not isinstance(rec, dict):
                raise _record_error(path, lineno, "record must be an object")
            for key in ("sample_id", "classifier_id", "classes"):
                if key not in rec:
                    raise _record_error(path, lineno, f"missing field {key!r}")
            if "probs" not in rec and "logits" not in rec:
                raise _record_error(path, lineno, "record needs probs or logits")
            if not isinstance(rec["classes"], list) or not rec["classes"]:
                raise _record_error(path, lineno, "classes must be a non-empty list")
            records.append((lineno, rec))
    if not records:
        raise InvalidArgumentError(f"{path}: no prediction records")

    labels = universe_labels or sorted({str(c) for _, rec in records for c in rec["classes"]})
    universe = ClassUniverse(labels)
    samples: dict[str, dict] = {}
    for lineno, rec in records:
        try:
            classes = [str(c) for c in rec["classes"]]
            for key in ("logits", "probs"):
                if rec.get(key) is not None and len(rec[key]) != len(classes):
                    raise InvalidArgumentError(f"{key} has {len(rec[key])} entries for "
                                               f"{len(classes)} classes")
            # the subset sorts its labels; reorder the outputs to match
            order = np.argsort([universe.index(c) for c in classes], kind="stable")
            subset = universe.subset(classes)
            logits = rec.get("logits")
            probs = rec.get("probs")
            if logits is not None:
                logits = np.asarray(logits, dtype=float)[order]
            if probs is not None:
                probs = np.asarray(probs, dtype=float)[order]
            if probs is None:
                pred = HCPrediction.from_logits(subset, logits)
            else:
                pred = HCPrediction(subset, probs, logits)
        except (HetfuseError, ValueError, TypeError, IndexError) as err:
            raise _record_error(path, lineno, str(err)) from None
        per = samples.setdefault(str(rec["sample_id"]), {})
        cid = str(rec["classifier_id"])
        if cid in per:
            raise _record_error(path, lineno, f"duplicate classifier {cid!r} for this sample")
        per[cid] = pred
    return universe, {sid: [per[k] for k in sorted(per)] for sid, per in samples.items()}


def fuse_predictions(universe, samples: dict, method: str, temperature: float = 1.0,
                     lam: float = 0.01):
    """Fuse every sample; samples sharing a mask are solved as one batch."""
    family = method.replace("-", "_")
    if family not in FUSION_METHODS:
        raise UsageError(f"unknown fusion method {method!r}; choose from "
                         + ", ".join(m.replace("_", "-") for m in FUSION_METHODS))
    profiles = {}
    for sid, preds in samples.items():
        try:
            profiles[sid] = build_profile(preds, universe, temperature)
        except CoverageError:
            raise
        except HetfuseError as err:
            raise InvalidArgumentError(f"sample {sid}: {err}") from None
    groups: dict[bytes, list[str]] = {}
    for sid, prof in profiles.items():
        groups.setdefault(prof.M.tobytes() + bytes([prof.N]), []).append(sid)
    out = {}
    for sids in groups.values():
        batch = ProfileBatch.stack([profiles[s] for s in sids])
        fused = fuse_batch(family, batch, lam=lam, ce_config=CESolverConfig(step_size=None),
                           mf_config=LogitMFConfig(lam=lam))
        for k, sid in enumerate(sids):
            out[sid] = fused.label(k)
    return [(sid, out[sid]) for sid in samples]


def write_fused(path, universe, fused) -> None:
    lines = []
    for sid, label in fused:
        lines.append(json.dumps({"sample_id": sid, "method": label.method,
                                 "classes": list(universe.labels), "q": label.q.tolist(),
                                 "diagnostics": label.diagnostics}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---- subcommands ------------------------------------------------------------

def cmd_fuse(args) -> int:
    method = args.method
    classes = args.classes.split(",") if args.classes else None
    universe, samples = read_predictions(args.input, classes)
    T = 1.0 if args.temperature is None else args.temperature
    lam = 0.01 if args.lam is None else args.lam
    fused = fuse_predictions(universe, samples, method, T, lam)
    write_fused(args.out, universe, fused)
    log.info("fused %d samples with %s", len(fused), method)
    return EXIT_OK


def _write_report(path, doc) -> None:
    if path:
        Path(path).write_text(dumps(doc) + "\n")


def cmd_experiment(args) -> int:
    config, _, jobs = build_experiment_config(args)
    start = time.perf_counter()
    reports = run_experiment(config, jobs=jobs)
    doc = experiment_document(config, reports, timing=args.timing)
    if args.timing:
        doc["wall_time"] = time.perf_counter() - start
    _write_report(config.output, doc)
    print(format_table(doc))
    if doc["failed_trials"]:
        print(f"failed trials: {doc['failed_trials']}", file=sys.stderr)
    if len(doc["failed_trials"]) == len(reports):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args) -> int:
    config, sweep, jobs = build_experiment_config(args)
    axis = args.axis or sweep.get("axis")
    if axis is None:
        raise InvalidArgumentError("sweep needs an axis (--axis or sweep.axis)")
    values = sweep.get("values", ())
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    spec = SensitivitySpec(axis, tuple(values))
    series = run_sweep(config, spec, jobs=jobs)
    docs = [{"value": value, **experiment_document(config, reports, timing=args.timing)}
            for value, reports in series]
    rows = sweep_rows(config, spec, series)
    _write_report(config.output, {"axis": spec.axis, "values": list(spec.values), "series": docs})
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["axis", "value", "method", "mean", "median", "trials"])
            w.writeheader()
            w.writerows(rows)
    for value, doc in zip(spec.values, docs):
        print(f"== {spec.axis} = {value}")
        print(format_table(doc))
    return EXIT_OK


def cmd_gen_world(args) -> int:
    kwargs, _ = load_config(args.config)
    spec = kwargs.get("world", WorldSpec())
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    world = generate_world(spec)
    if not args.out:
        raise InvalidArgumentError("gen-world needs --out")
    dump_world(world, args.out)
    counts = {k: len(s.ids) for k, s in world.splits.items()}
    print(f"wrote {args.out}: {world.L} classes, " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_train_hc(args) -> int:
    kwargs, _ = load_config(args.config)
    hc_spec = kwargs.get("hc", HCConfigSpec())
    train = kwargs.get("train", TrainConfig())
    if args.seed is not None:
        hc_spec = replace(hc_spec, seed=args.seed)
        train = replace(train, seed=args.seed)
    world = load_world(args.world)
    if not args.out:
        raise InvalidArgumentError("train-hc needs --out (a directory)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hcs = train_hcs(world, hc_spec, train)
    transfer = world.split("transfer")
    lines = []
    for i, hc in enumerate(hcs):
        save_model(out / f"hc{i}.json", hc.model, seed=hc_spec.seed, config=train,
                   extra={"classes": list(hc.subset.labels)})
        for sid, z in zip(transfer.ids, hc.logits(transfer.X)):
            lines.append(json.dumps({"sample_id": sid, "classifier_id": f"hc{i}",
                                     "classes": list(hc.subset.labels), "logits": z.tolist()}))
    (out / "predictions.jsonl").write_text("\n".join(lines) + "\n")
    print(f"trained {len(hcs)} classifiers; transfer predictions in {out / 'predictions.jsonl'}")
    return EXIT_OK


# ---- entry point ------------------------------------------------------------

def _common(p, experiment=True):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path")
    if experiment:
        p.add_argument("--methods", help="comma-separated method names")
        p.add_argument("--temperature", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--jobs", type=int, help="worker processes (default 1)")
        p.add_argument("--trials", type=int)
        p.add_argument("--timing", action="store_true", help="include wall time in the report")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fuse", help="fuse classifier predictions into soft labels")
    p.add_argument("input", help="JSON Lines prediction file")
    p.add_argument("--method", default="ce",
                   help="one of " + ", ".join(m.replace("_", "-") for m in FUSION_METHODS))
    p.add_argument("--classes", help="comma-separated class universe (default: union of inputs)")
    p.add_argument("--out", help="output JSON Lines file (default stdout)")
    p.add_argument("--temperature", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("experiment", help="run benchmark trials")
    _common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="run a sensitivity sweep")
    _common(p)
    p.add_argument("--axis", help="transfer_size, temperature or hc_accuracy")
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--csv", help="write the long-format series as CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-world", help="generate and dump a synthetic world")
    _common(p, experiment=False)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train-hc", help="train source classifiers on a dumped world")
    _common(p, experiment=False)
    p.add_argument("--world", required=True, help="world file from gen-world")
    p.set_defaults(func=cmd_train_hc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HetfuseError as err:
        print(f"hetfuse: error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as err:  # anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"hetfuse: runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
