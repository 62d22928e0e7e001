"""Batched gradient descent with step halving, shared by the convex solvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

RESTORE_AFTER = 5


@dataclass
class DescentResult:
    x: np.ndarray
    objective: np.ndarray
    grad_norm: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    trace: list | None = None


def safeguarded_descent(
    x0: np.ndarray,
    value_and_grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
    step_size: float | np.ndarray,
    max_iters: int,
    grad_tol: float,
    objective_tol: float,
    trace: bool = False,
) -> DescentResult:
    """Minimise ``S`` independent problems stacked along axis 0 of ``x0``.

    ``value_and_grad(x, rows)`` evaluates the problems selected by the index
    array ``rows`` at points ``x`` (one row per selected problem). A step that
    increases the objective is rejected and the step size halved; the base
    step comes back after five accepted steps in a row. A problem stops once
    its gradient infinity-norm drops below ``grad_tol`` or an accepted step
    lowers the objective by less than ``objective_tol``.
    """
    x = np.array(x0, dtype=float, copy=True)
    S = x.shape[0]
    base = np.broadcast_to(np.asarray(step_size, dtype=float), (S,)).copy()
    step = base.copy()
    streak = np.zeros(S, dtype=int)
    iters = np.zeros(S, dtype=int)
    f, g = value_and_grad(x, np.arange(S))
    gnorm = np.abs(g).max(axis=1)
    active = gnorm >= grad_tol
    history = [[float(v)] for v in f] if trace else None

    for _ in range(max_iters):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        cand = x[rows] - step[rows, None] * g[rows]
        f_new, g_new = value_and_grad(cand, rows)
        ok = f_new <= f[rows]
        iters[rows] += 1

        acc = rows[ok]
        drop = f[acc] - f_new[ok]
        x[acc] = cand[ok]
        f[acc] = f_new[ok]
        g[acc] = g_new[ok]
        gnorm[acc] = np.abs(g_new[ok]).max(axis=1)
        streak[acc] += 1
        restore = acc[streak[acc] >= RESTORE_AFTER]
        step[restore] = base[restore]
        streak[restore] = 0
        active[acc[(drop < objective_tol) | (gnorm[acc] < grad_tol)]] = False

        rej = rows[~ok]
        step[rej] *= 0.5
        streak[rej] = 0
        if trace:
            for r in acc:
                history[r].append(float(f[r]))

    return DescentResult(x, f, gnorm, iters, gnorm < grad_tol, history)
