"""Server aggregation rules: FedAvg, FedProx and FedNova.

All functions take client models (not deltas) as rows of a 2-D array or a
list of 1-D arrays and return the new global parameter vector.
"""

from __future__ import annotations

import numpy as np

AGGREGATORS = ("fedavg", "fedprox", "fednova")


class AggregationError(ValueError):
    pass


def _stack(updates):
    arr = np.asarray([np.asarray(u, dtype=float) for u in updates])
    if arr.ndim != 2 or len(arr) == 0:
        raise AggregationError("need a non-empty list of equal-length parameter vectors")
    return arr


def _probs(weights, n):
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    if w.shape != (n,) or total <= 0:
        raise AggregationError("weights must be one positive-total value per update")
    return w / total


def fedavg(updates, weights=None) -> np.ndarray:
    """Weighted mean ``sum_i (n_i / sum n) theta_i``, reduced in input order."""
    arr = _stack(updates)
    p = _probs(weights, len(arr))
    out = np.zeros(arr.shape[1])
    for pi, row in zip(p, arr):
        out += pi * row
    return out


# FedProx differs from FedAvg only on the client (proximal term in local SGD).
fedprox = fedavg


def fednova(global_params, updates, weights=None, local_steps=None) -> np.ndarray:
    """Normalised averaging: ``g + (sum p_i tau_i) * sum p_i (theta_i - g) / tau_i``."""
    arr = _stack(updates)
    g = np.asarray(global_params, dtype=float)
    p = _probs(weights, len(arr))
    tau = np.ones(len(arr)) if local_steps is None else np.asarray(local_steps, dtype=float)
    if tau.shape != (len(arr),) or np.any(tau <= 0):
        raise AggregationError("local_steps must be one positive count per update")
    direction = np.zeros_like(g)
    for pi, ti, row in zip(p, tau, arr):
        direction += pi * (row - g) / ti
    return g + float(np.dot(p, tau)) * direction


def aggregate(name: str, global_params, updates, weights=None, local_steps=None) -> np.ndarray:
    if name in ("fedavg", "fedprox"):
        return fedavg(updates, weights)
    if name == "fednova":
        return fednova(global_params, updates, weights, local_steps)
    raise AggregationError(f"unknown aggregator {name!r}; choose from {AGGREGATORS}")
