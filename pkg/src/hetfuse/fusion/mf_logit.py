"""Rank-1 factorisation of the logit profile with a per-classifier shift.

Objective (free scale ``v``)::

    F(u, v, c) = ||M * (Z - u v^T - 1 c^T)||_F^2 + lam * (||u||^2 + ||v||^2),  v >= 0

The fixed-scale variant pins ``v = 1`` and drops the regulariser, which leaves
a convex least-squares problem in ``(u, c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from ..labels import softmax_t
from .ce import CESolverConfig
from .common import BatchFusion, MaskOps, as_batch, masked_column_means
from .descent import safeguarded_descent

VARIANTS = ("free_v", "fixed_v")


@dataclass(frozen=True)
class LogitMFConfig:
    lam: float = 0.01
    rmse_tol: float = 1e-3
    max_iters: int = 3000
    variant: str = "free_v"
    # fixed_v only. step_size=None uses the curvature bound of the mask; the
    # objective-change stop is reduced to a stagnation test so the gradient
    # test decides (a 1e-10 change stop leaves ~1e-5 logit error on this quadratic)
    descent: CESolverConfig = field(
        default_factory=lambda: CESolverConfig(step_size=None, objective_tol=1e-16))

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgumentError("lambda must be nonnegative")
        if self.rmse_tol <= 0 or self.max_iters <= 0:
            raise InvalidArgumentError("ALS settings must be positive")
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"variant must be one of {VARIANTS}")


def _residual(u, v, c, Z, M):
    return M * (Z - u[:, :, None] * v[:, None, :] - c[:, None, :])


def mfl_objective_batch(u, v, c, Z, M, lam) -> np.ndarray:
    R = _residual(u, v, c, Z, M)
    return (R * R).sum(axis=(1, 2)) + lam * ((u * u).sum(axis=1) + (v * v).sum(axis=1))


def mfl_objective(u, v, c, Z, M, lam=0.0) -> float:
    u, v, c = (np.asarray(a, dtype=float)[None] for a in (u, v, c))
    return float(mfl_objective_batch(u, v, c, np.asarray(Z)[None], np.asarray(M)[None], lam)[0])


def eliminate_c_objective(u, v, Z, M, lam=0.0) -> float:
    """Shift-free form: per column, the squared norm of the mean-removed masked residual."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    Z, M = np.asarray(Z, dtype=float), np.asarray(M)
    total = 0.0
    for i in range(Z.shape[1]):
        idx = M[:, i] > 0
        r = Z[idx, i] - u[idx] * v[i]
        k = r.size
        proj = (np.eye(k) - np.ones((k, k)) / k) @ r
        total += proj @ proj
    return float(total + lam * (u @ u + v @ v))


def optimal_shift(u, v, Z, M) -> np.ndarray:
    """Closed-form minimiser over ``c`` of the masked residual, batched (S, N)."""
    return masked_column_means(Z - u[:, :, None] * v[:, None, :], M)


def _safe_div(num, den, fallback):
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), fallback), (~ok).sum(axis=1)


def _als(Z, M, config: LogitMFConfig, trace: bool):
    S, L, N = Z.shape
    lam = config.lam
    MZ = M * Z
    mask = MaskOps(M)
    counts = M.sum(axis=1)
    col_total = MZ.sum(axis=1)
    c = col_total / counts
    v = np.ones((S, N))
    u = np.zeros((S, L))
    iters = np.zeros(S, dtype=int)
    rmse = np.full(S, np.inf)
    zero_den = np.zeros(S, dtype=int)
    active = np.ones(S, dtype=bool)
    history = [[] for _ in range(S)] if trace else None

    for _ in range(config.max_iters):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        m = mask.take(rows)
        MZr, ur, vr, cr = MZ[rows], u[rows], v[rows], c[rows]
        un, bad_u = _safe_div(np.einsum("sln,sn->sl", MZr, vr) - m.over_classifiers(cr * vr),
                              lam + m.over_classifiers(vr ** 2), ur)
        su = m.over_classes(un)
        vn, bad_v = _safe_div(np.einsum("sln,sl->sn", MZr, un) - cr * su,
                              lam + m.over_classes(un ** 2), vr)
        vn = np.maximum(vn, 0.0)
        cn = (col_total[rows] - su * vn) / counts[rows]
        zero_den[rows] += bad_u + bad_v

        delta = np.concatenate([un - ur, vn - vr], axis=1)
        rmse[rows] = np.sqrt((delta ** 2).mean(axis=1))
        u[rows], v[rows], c[rows] = un, vn, cn
        iters[rows] += 1
        if trace:
            f = mfl_objective_batch(un, vn, cn, Z[rows], M[rows], lam)
            for r, val in zip(rows, f):
                history[r].append(float(val))
        active[rows[rmse[rows] < config.rmse_tol]] = False

    diag = {
        "iterations": iters,
        "objective": mfl_objective_batch(u, v, c, Z, M, lam),
        "rmse": rmse,
        "converged": rmse < config.rmse_tol,
        "zero_denominators": zero_den,
    }
    return u, v, c, diag, history


def fixed_v_objective_batch(u, c, Z, M) -> np.ndarray:
    R = M * (Z - u[:, :, None] - c[:, None, :])
    return (R * R).sum(axis=(1, 2))


def _fixed_v(Z, M, config: LogitMFConfig, trace: bool):
    S, L, N = Z.shape
    row_count = M.sum(axis=2)
    col_count = M.sum(axis=1)
    step = config.descent.step_size
    if step is None:
        # Gershgorin bound on the Hessian in (u, c) is 4 * max(row count, column count)
        step = 1.0 / (4.0 * np.maximum(row_count.max(axis=1), col_count.max(axis=1)))
    MZ = M * Z
    row_z, col_z, zz = MZ.sum(axis=2), MZ.sum(axis=1), (MZ * MZ).sum(axis=(1, 2))
    mask = MaskOps(M)

    def value_and_grad(x, rows):
        # expanded sum of squares; avoids forming the (S, L, N) residual per step
        u, c = x[:, :L], x[:, L:]
        m = mask.take(rows)
        Mc, Mu = m.over_classifiers(c), m.over_classes(u)
        rc, cc, rz, cz = row_count[rows], col_count[rows], row_z[rows], col_z[rows]
        f = (zz[rows] - 2 * (u * rz).sum(1) - 2 * (c * cz).sum(1)
             + (rc * u * u).sum(1) + (cc * c * c).sum(1) + 2 * (u * Mc).sum(1))
        gu = 2 * (rc * u + Mc - rz)
        gc = 2 * (cc * c + Mu - cz)
        return f, np.concatenate([gu, gc], axis=1)

    x0 = np.concatenate([np.zeros((S, L)), col_z / col_count], axis=1)
    d = config.descent
    res = safeguarded_descent(x0, value_and_grad, step, config.max_iters, d.grad_tol,
                              d.objective_tol, trace=trace)
    u, c = res.x[:, :L], res.x[:, L:]
    diag = {
        "iterations": res.iterations,
        "objective": fixed_v_objective_batch(u, c, Z, M),
        "grad_norm": res.grad_norm,
        "converged": res.converged,
    }
    return u, np.ones((S, N)), c, diag, res.trace


def fuse_mf_logit_batch(batch, config: LogitMFConfig = LogitMFConfig(),
                        trace: bool = False) -> BatchFusion:
    Z, M = batch.Z, batch.M
    warnings = []
    if config.variant == "free_v":
        u, v, c, diag, history = _als(Z, M, config, trace)
        method = "mf_lv"
        if config.lam == 0:
            warnings.append("free scale with lambda = 0: u and v may drift without bound")
    else:
        u, v, c, diag, history = _fixed_v(Z, M, config, trace)
        shift = u.mean(axis=1, keepdims=True)
        u, c = u - shift, c + shift
        method = "mf_lf"
    out = BatchFusion(softmax_t(u), method, diag, warnings)
    out.u, out.v, out.c, out.trace = u, v, c, history
    return out


def fuse_mf_logit(profile, config: LogitMFConfig = LogitMFConfig()):
    """Fit ``u`` (unified logits) to the masked logit profile and return ``softmax(u)``."""
    batch, single = as_batch(profile)
    out = fuse_mf_logit_batch(batch, config)
    return out.label(0) if single else out
