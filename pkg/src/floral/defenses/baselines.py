"""Baseline defenses behind the common ``defense(global, updates, ctx)`` call."""

from __future__ import annotations

import numpy as np

from ..aggregation import aggregate
from .floral import DefenseOutcome, RoundContext
from .robust import (
    coordinate_median,
    foolsgold_weights,
    geometric_median,
    krum,
    krum_f,
    rlr_aggregate,
    trimmed_mean,
)


class NoDefense:
    name = "none"

    def __call__(self, global_params, updates, ctx: RoundContext) -> DefenseOutcome:
        new = aggregate(ctx.aggregator, global_params, updates, ctx.weights, ctx.local_steps)
        return DefenseOutcome(np.ones(len(updates), dtype=bool), new)


class Krum:
    """Krum, or Multi-Krum when ``multi`` is set (averages the ``n - f`` best by default)."""

    def __init__(self, multi: bool = False, f: int | None = None, m_select: int | None = None):
        self.multi = multi
        self.f = f
        self.m_select = m_select
        self.name = "multikrum" if multi else "krum"

    def __call__(self, global_params, updates, ctx: RoundContext) -> DefenseOutcome:
        n = len(updates)
        f = self.f if self.f is not None else krum_f(ctx.epsilon, n)
        m_select = 1
        if self.multi:
            m_select = self.m_select if self.m_select is not None else max(n - f, 1)
        new, chosen = krum(updates, f, m_select)
        mask = np.zeros(n, dtype=bool)
        mask[chosen] = True
        return DefenseOutcome(mask, new, {"f": f})


class Rfa:
    name = "rfa"

    def __init__(self, tol: float = 1e-8, max_iter: int = 200):
        self.tol = tol
        self.max_iter = max_iter

    def __call__(self, global_params, updates, ctx: RoundContext) -> DefenseOutcome:
        res = geometric_median(updates, ctx.weights, tol=self.tol, max_iter=self.max_iter)
        return DefenseOutcome(
            np.ones(len(updates), dtype=bool),
            res.point,
            {"converged": res.converged, "iterations": res.n_iter},
        )


class Median:
    name = "median"

    def __call__(self, global_params, updates, ctx: RoundContext) -> DefenseOutcome:
        return DefenseOutcome(np.ones(len(updates), dtype=bool), coordinate_median(updates))


class TrimmedMean:
    name = "trimmed_mean"

    def __init__(self, beta: float = 0.1):
        self.beta = beta

    def __call__(self, global_params, updates, ctx: RoundContext) -> DefenseOutcome:
        return DefenseOutcome(np.ones(len(updates), dtype=bool), trimmed_mean(updates, self.beta))


class FoolsGold:
    """Reweights client deltas by FoolsGold weights over their cumulative histories."""

    name = "foolsgold"

    def __init__(self, kappa: float = 10.0):
        self.kappa = kappa
        self.history: dict[int, np.ndarray] = {}

    def __call__(self, global_params, updates, ctx: RoundContext) -> DefenseOutcome:
        g = np.asarray(global_params, dtype=float)
        deltas = [np.asarray(u, dtype=float) - g for u in updates]
        for cid, d in zip(ctx.client_ids, deltas):
            cid = int(cid)
            self.history[cid] = self.history.get(cid, 0.0) + d
        w = foolsgold_weights([self.history[int(c)] for c in ctx.client_ids], self.kappa)
        if w.sum() <= 0:
            return DefenseOutcome(np.zeros(len(updates), dtype=bool), g.copy(), {"weights": w.tolist()})
        step = sum(wi * d for wi, d in zip(w, deltas)) / w.sum()
        return DefenseOutcome(w > 0, g + step, {"weights": w.tolist()})


class Rlr:
    name = "rlr"

    def __init__(self, threshold: float = 1.0, server_lr: float = 1.0):
        self.threshold = threshold
        self.server_lr = server_lr

    def __call__(self, global_params, updates, ctx: RoundContext) -> DefenseOutcome:
        g = np.asarray(global_params, dtype=float)
        deltas = [np.asarray(u, dtype=float) - g for u in updates]
        new = rlr_aggregate(g, deltas, self.threshold, self.server_lr)
        return DefenseOutcome(np.ones(len(updates), dtype=bool), new)
