"""Independent reference solvers used only to cross-check the package.

The proximal-gradient (FISTA) solver below shares no code with the
block-coordinate-descent implementation under test; the proximal map is
written out inline on purpose.
"""

from __future__ import annotations

import numpy as np


def prox_gradient_group_lasso(
    x: np.ndarray,
    z: np.ndarray,
    group_sizes,
    lam: float,
    max_iter: int = 20_000,
    rel_tol: float = 1e-14,
) -> np.ndarray:
    """Minimize ||z - X g||^2 + lam * sum_k ||g_k||_2 by FISTA."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float).ravel()
    p = x.shape[1]
    starts = np.concatenate([[0], np.cumsum(group_sizes)]).astype(int)

    lip = 2.0 * np.linalg.norm(x, 2) ** 2
    if lip == 0.0:
        return np.zeros(p)
    step = 1.0 / lip

    def prox(v: np.ndarray, thr: float) -> np.ndarray:
        out = v.copy()
        for a, b in zip(starts[:-1], starts[1:]):
            nrm = np.linalg.norm(v[a:b])
            if nrm <= thr:
                out[a:b] = 0.0
            else:
                out[a:b] = (1.0 - thr / nrm) * v[a:b]
        return out

    def objective(g: np.ndarray) -> float:
        r = z - x @ g
        pen = sum(np.linalg.norm(g[a:b]) for a, b in zip(starts[:-1], starts[1:]))
        return float(r @ r) + lam * pen

    g = np.zeros(p)
    y = g.copy()
    t = 1.0
    best = g.copy()
    best_obj = objective(g)
    prev_obj = best_obj
    stable = 0
    for _ in range(max_iter):
        grad = 2.0 * (x.T @ (x @ y - z))
        g_new = prox(y - step * grad, step * lam)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = g_new + ((t - 1.0) / t_new) * (g_new - g)
        g, t = g_new, t_new
        obj = objective(g)
        if obj < best_obj:
            best_obj = obj
            best = g.copy()
        if obj > prev_obj:  # gradient restart
            y = g.copy()
            t = 1.0
        if abs(prev_obj - obj) <= rel_tol * max(1.0, abs(obj)):
            stable += 1
            if stable >= 10:
                break
        else:
            stable = 0
        prev_obj = obj
    return best


def oracle_objective(x, z, group_sizes, gamma, lam: float) -> float:
    """Objective evaluated with the oracle's own formula."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float).ravel()
    gamma = np.asarray(gamma, dtype=float).ravel()
    starts = np.concatenate([[0], np.cumsum(group_sizes)]).astype(int)
    r = z - x @ gamma
    pen = sum(np.linalg.norm(gamma[a:b]) for a, b in zip(starts[:-1], starts[1:]))
    return float(r @ r) + lam * pen
