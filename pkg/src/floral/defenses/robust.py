"""Baseline robust aggregators and detectors.

Inputs are stacked as rows: ``updates`` has shape ``(n, D)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist


class RobustAggregationError(ValueError):
    pass


def _rows(updates) -> np.ndarray:
    arr = np.asarray([np.asarray(u, dtype=float).ravel() for u in updates])
    if arr.ndim != 2 or len(arr) == 0:
        raise RobustAggregationError("need at least one update")
    return arr


def krum_scores(updates, f: int) -> np.ndarray:
    """Sum of squared distances from each update to its ``n - f - 2`` nearest peers."""
    x = _rows(updates)
    n = len(x)
    if n < f + 3:
        raise RobustAggregationError(f"Krum needs n >= f + 3, got n={n}, f={f}")
    d2 = cdist(x, x, "sqeuclidean")
    k = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(d2[i], i)
        scores[i] = np.sort(others)[:k].sum()
    return scores


def krum(updates, f: int, m_select: int | None = None):
    """Krum (``m_select`` None or 1) or Multi-Krum.

    Returns ``(aggregate, selected_indices)``: the single lowest-scored update
    for Krum, otherwise the mean of the ``m_select`` lowest-scored ones.
    """
    x = _rows(updates)
    scores = krum_scores(x, f)
    order = np.argsort(scores, kind="stable")
    if m_select is None or m_select == 1:
        return x[order[0]].copy(), order[:1]
    if not 1 <= m_select <= len(x):
        raise RobustAggregationError("m_select must be between 1 and n")
    chosen = order[:m_select]
    return x[chosen].mean(axis=0), np.sort(chosen)


def krum_f(epsilon: float, m: int) -> int:
    """Assumed Byzantine count ``max(floor(epsilon * m), 1)``."""
    return max(int(math.floor(epsilon * m)), 1)


@dataclass
class GeometricMedianResult:
    point: np.ndarray
    converged: bool
    n_iter: int
    objective: list = field(default_factory=list)


def _gm_objective(x, w, z):
    return float(np.sum(w * np.linalg.norm(x - z, axis=1)))


def geometric_median(updates, weights=None, tol: float = 1e-10, max_iter: int = 1000, nu: float = 1e-8):
    """Smoothed Weiszfeld iteration for ``argmin_z sum_i w_i ||z - u_i||``.

    ``nu`` floors each distance to keep the reweighting finite when an
    iterate lands on a data point. Stops when the iterate moves less than
    ``tol``; if ``max_iter`` is reached first, the best iterate is returned
    with ``converged=False``.
    """
    x = _rows(updates)
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(x),) or np.any(w < 0) or w.sum() <= 0:
        raise RobustAggregationError("weights must be non-negative with positive total")
    w = w / w.sum()
    z = w @ x
    history = [_gm_objective(x, w, z)]
    best, best_obj = z, history[0]
    for it in range(1, max_iter + 1):
        beta = w / np.maximum(nu, np.linalg.norm(x - z, axis=1))
        z_new = beta @ x / beta.sum()
        obj = _gm_objective(x, w, z_new)
        history.append(obj)
        if obj < best_obj:
            best, best_obj = z_new, obj
        moved = np.linalg.norm(z_new - z)
        z = z_new
        if moved < tol:
            return GeometricMedianResult(best.copy(), True, it, history)
    return GeometricMedianResult(best.copy(), False, max_iter, history)


def coordinate_median(updates) -> np.ndarray:
    return np.median(_rows(updates), axis=0)


def trimmed_mean(updates, beta: float) -> np.ndarray:
    """Per-coordinate mean after dropping ``floor(beta * n)`` values at each end.

    The kept values are summed with ``math.fsum`` so the result does not
    depend on the order of the updates.
    """
    x = _rows(updates)
    if not 0 <= beta < 0.5:
        raise RobustAggregationError("beta must lie in [0, 0.5)")
    n = len(x)
    cut = int(math.floor(beta * n))
    if n - 2 * cut < 1:
        raise RobustAggregationError("trimming removes every update")
    kept = np.sort(x, axis=0)[cut : n - cut]
    return np.array([math.fsum(col) for col in kept.T]) / len(kept)


def coordinate_median_or_trimmed_mean(updates, beta: float | None = None) -> np.ndarray:
    return coordinate_median(updates) if beta is None else trimmed_mean(updates, beta)


def foolsgold_weights(histories, kappa: float = 10.0) -> np.ndarray:
    """Per-client weights in ``[0, 1]`` from cosine similarity of update histories.

    Clients whose histories point the same way (sybils) are pushed to 0.
    Pardoning follows the original algorithm: similarity of a client to a
    peer with a larger maximum similarity is scaled down by their ratio.
    """
    h = _rows(histories)
    n = len(h)
    norms = np.linalg.norm(h, axis=1)
    live = norms > 0
    w = np.ones(n)
    if live.sum() < 2:
        return w
    unit = np.zeros_like(h)
    unit[live] = h[live] / norms[live, None]
    cs = unit @ unit.T
    np.fill_diagonal(cs, -np.inf)
    cs[~live, :] = -np.inf
    cs[:, ~live] = -np.inf
    v = cs.max(axis=1)
    adj = cs.copy()
    for i in np.flatnonzero(live):
        for j in np.flatnonzero(live):
            if i != j and v[j] > v[i] > 0:
                adj[i, j] *= v[i] / v[j]
    raw = 1.0 - adj.max(axis=1)
    raw = np.clip(raw, 0.0, 1.0)
    top = raw[live].max()
    if top <= 0:
        w[live] = 0.0
        return w
    scaled = raw / top
    scaled = np.where(scaled >= 1.0, 0.99, scaled)
    with np.errstate(divide="ignore"):
        logit = kappa * (np.log(scaled / (1.0 - scaled)) + 0.5)
    logit = np.where(np.isfinite(logit), logit, 0.0)
    w[live] = np.clip(logit, 0.0, 1.0)[live]
    return w


def foolsgold_raw(histories) -> np.ndarray:
    """Weights ``1 - max_j cs_ij`` before pardoning and logit sharpening."""
    h = _rows(histories)
    unit = h / np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-300)
    cs = unit @ unit.T
    np.fill_diagonal(cs, -np.inf)
    return np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)


def rlr_aggregate(global_params, deltas, threshold: float = 1.0, server_lr: float = 1.0) -> np.ndarray:
    """Robust learning rate: flip the server step on coordinates without sign agreement."""
    if threshold < 0:
        raise RobustAggregationError("threshold must be >= 0")
    d = _rows(deltas)
    agreement = np.abs(np.sign(d).sum(axis=0))
    rate = np.where(agreement >= threshold, server_lr, -server_lr)
    return np.asarray(global_params, dtype=float) + rate * d.mean(axis=0)
