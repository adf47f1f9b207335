"""Logic-guided client filtering.

Every round the server predicts on its validation windows with each client
model and fits one operational-range property per validation window to those
predictions. Clients are clustered by their property parameters, properties
are averaged within clusters and the coordinate-wise lower median across
clusters is the global property. A client scores the fraction of prediction
steps that satisfy the global property of their validation window, averaged
over windows; scores accumulate over rounds and clients below ``gamma`` times
the best cumulative score are dropped before aggregation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..aggregation import aggregate
from ..inference import InferredProperty, PropertyBatch, PropertyTemplate, infer_batch, instantiate
from ..models import ModelSpec, forward
from ..stl import EvaluationError, as_trace, horizon, step_satisfaction
from .finch import ClusterPartition, finch_cluster

log = logging.getLogger(__name__)


class DefenseError(ValueError):
    pass


@dataclass
class TrustState:
    """Cumulative per-client scores and participation counts."""

    scores: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def update(self, client: int, score: float) -> float:
        if not 0.0 <= score <= 1.0:
            raise DefenseError(f"round score {score} outside [0, 1]")
        f = self.counts.get(client, 0) + 1
        old = self.scores.get(client, 0.0)
        new = (f - 1) / f * old + score / f
        self.counts[client] = f
        self.scores[client] = new
        return new


def trust_update(state: TrustState, client: int, score: float) -> TrustState:
    """Running mean ``theta <- (f-1)/f * theta + score/f`` with ``f`` incremented first."""
    state.update(client, score)
    return state


@dataclass
class DefenseOutcome:
    mask: np.ndarray
    params: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _rebuild(proto, upper, lower):
    return type(proto)(proto.template, upper, lower)


def cluster_property(members: Sequence[InferredProperty]) -> InferredProperty:
    """Parameter-wise mean of the member properties (single or per-sample)."""
    if not members:
        raise DefenseError("cluster has no members")
    template = members[0].template
    if any(m.template != template for m in members):
        raise DefenseError("cluster members use different templates")
    upper = np.mean([m.upper for m in members], axis=0)
    lower = np.mean([m.lower for m in members], axis=0)
    return _rebuild(members[0], upper, lower)


def lower_median(values, axis=0):
    """Median that picks the lower middle element for even counts."""
    v = np.sort(np.asarray(values, dtype=float), axis=axis)
    k = (v.shape[axis] - 1) // 2
    return np.take(v, k, axis=axis)


def global_property(clusters: Sequence[InferredProperty]) -> InferredProperty:
    """Coordinate-wise lower median across cluster properties."""
    if not clusters:
        raise DefenseError("need at least one cluster property")
    template = clusters[0].template
    if any(c.template != template for c in clusters):
        raise DefenseError("cluster properties use different templates")
    upper = lower_median([c.upper for c in clusters])
    lower = lower_median([c.lower for c in clusters])
    return _rebuild(clusters[0], upper, lower)


def robustness_score(phi, prediction) -> float:
    """Fraction of forecast steps at which ``phi`` holds (Boolean semantics)."""
    need = horizon(phi) + 1
    if as_trace(prediction).length < need:
        raise DefenseError(f"horizon mismatch: formula needs {need} steps, prediction has {as_trace(prediction).length}")
    try:
        verdict = step_satisfaction(phi, prediction)
    except EvaluationError as exc:
        raise DefenseError(f"horizon mismatch: {exc}") from None
    return float(np.mean(verdict))


def range_scores(prop, predictions) -> np.ndarray:
    """Vectorised :func:`robustness_score` of an operational-range property.

    ``predictions`` is ``(S, tau, M)``; returns the per-sample fraction of
    steps whose channels all sit inside their window's bounds. An
    :class:`InferredProperty` applies to every sample, a
    :class:`PropertyBatch` pairs sample ``s`` with its own bounds.
    """
    t = prop.template
    y = np.asarray(predictions, dtype=float)
    if y.ndim == 2:
        y = y[None]
    if y.shape[1] < t.horizon:
        raise DefenseError(f"predictions cover {y.shape[1]} steps, property needs {t.horizon}")
    y = y[:, : t.horizon, list(t.channels)]
    win = t.window_index()
    up, lo = prop.upper, prop.lower
    if up.ndim == 2:
        up, lo = up[None], lo[None]
    elif len(up) != len(y):
        raise DefenseError(f"property covers {len(up)} samples, predictions have {len(y)}")
    inside = (y <= up[:, win]) & (y >= lo[:, win])
    return inside.all(axis=2).mean(axis=1)


def malicious_mask(scores, gamma: float):
    """Keep clients whose max-normalised score reaches ``gamma``.

    Returns ``(mask, no_signal)``; when every score is zero the mask keeps
    everyone and ``no_signal`` is True.
    """
    if not 0.0 <= gamma <= 1.0:
        raise DefenseError("gamma must lie in [0, 1]")
    s = np.asarray(scores, dtype=float)
    top = s.max()
    if top <= 0:
        log.warning("all trust scores are zero; keeping every client")
        return np.ones(len(s), dtype=bool), True
    return s / top >= gamma, False


@dataclass
class RoundContext:
    client_ids: Sequence[int]
    weights: Sequence[float]
    local_steps: Sequence[int] | None = None
    aggregator: str = "fedavg"
    round_index: int = 0
    epsilon: float = 0.0


class Floral:
    """Stateful logic-guided defense; keeps the trust state across rounds."""

    name = "floral"

    def __init__(
        self,
        spec: ModelSpec,
        validation,
        template: PropertyTemplate | None = None,
        gamma: float = 0.5,
        trust: TrustState | None = None,
    ):
        if validation.size < 1:
            raise DefenseError("server validation set is empty")
        self.spec = spec
        self.validation = validation
        self.template = template or PropertyTemplate(
            horizon=spec.horizon, window=2, channels=tuple(range(spec.n_channels))
        )
        self.gamma = gamma
        self.trust = trust if trust is not None else TrustState()

    def __call__(self, global_params, updates, ctx: RoundContext) -> DefenseOutcome:
        return floral_round(
            global_params,
            updates,
            self.validation,
            self.template,
            self.trust,
            self.gamma,
            self.spec,
            ctx,
        )


def floral_round(
    global_params,
    updates,
    validation,
    template: PropertyTemplate,
    trust: TrustState,
    gamma: float,
    spec: ModelSpec,
    ctx: RoundContext,
) -> DefenseOutcome:
    """One filtering-and-aggregation round; mutates ``trust``."""
    updates = [np.asarray(u, dtype=float) for u in updates]
    m = len(updates)
    if m < 1:
        raise DefenseError("no client updates")
    if validation.size < 1:
        raise DefenseError("server validation set is empty")

    preds = [forward(spec, u, validation.inputs) for u in updates]
    props = [infer_batch(template, p) for p in preds]

    partition = finch_cluster(np.stack([p.vector() for p in props]))
    clusters = [
        cluster_property([props[i] for i in partition.members(k)])
        for k in range(partition.n_clusters)
    ]
    g_prop = global_property(clusters)

    round_scores = np.array([range_scores(g_prop, p).mean() for p in preds])
    cumulative = np.array(
        [trust.update(int(cid), float(s)) for cid, s in zip(ctx.client_ids, round_scores)]
    )
    mask, no_signal = malicious_mask(cumulative, gamma)

    diagnostics = {
        "round_scores": round_scores.tolist(),
        "cumulative_scores": cumulative.tolist(),
        "clusters": partition.labels.tolist(),
        "n_clusters": partition.n_clusters,
        "global_property": g_prop.to_json(),
        "no_signal": no_signal,
        "all_masked": False,
    }
    if not mask.any():
        diagnostics["all_masked"] = True
        log.warning("every client masked in round %d; keeping the previous global model", ctx.round_index)
        return DefenseOutcome(mask, np.asarray(global_params, dtype=float).copy(), diagnostics)

    keep = np.flatnonzero(mask)
    steps = None if ctx.local_steps is None else [ctx.local_steps[i] for i in keep]
    new = aggregate(
        ctx.aggregator,
        global_params,
        [updates[i] for i in keep],
        [ctx.weights[i] for i in keep],
        steps,
    )
    return DefenseOutcome(mask, new, diagnostics)


def global_formulas(diagnostics: dict) -> list:
    """Per-validation-window formulas of the global property in a round's diagnostics."""
    batch = PropertyBatch.from_json(diagnostics["global_property"])
    return [instantiate(batch[s]) for s in range(batch.n_samples)]


__all__ = [
    "ClusterPartition",
    "DefenseError",
    "DefenseOutcome",
    "Floral",
    "RoundContext",
    "TrustState",
    "cluster_property",
    "floral_round",
    "global_formulas",
    "global_property",
    "lower_median",
    "malicious_mask",
    "range_scores",
    "robustness_score",
    "trust_update",
]
