"""Poisoning behaviours for malicious clients.

Byzantine clients replace their update with Gaussian noise; targeted clients
flip training targets and may wrap the resulting model with PGD projection,
constrain-and-scale training or model-replacement boosting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import ClientDataset
from .models import ModelSpec, ParamVector, local_sgd

ATTACK_KINDS = ("none", "byzantine", "flip", "pgd", "constrain_scale", "model_replacement")


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    """Adversary settings.

    ``kind`` is one of :data:`ATTACK_KINDS`. ``pgd``, ``constrain_scale`` and
    ``model_replacement`` all train on flipped targets first. ``radius=None``
    means half the median benign update norm of the previous round; ``scale=None``
    means the number of participants in the round.
    """

    kind: str = "none"
    epsilon: float = 0.0
    sigma: float = 1.0
    budget: float = 0.5
    radius: Optional[float] = None
    alpha: float = 0.5
    scale: Optional[float] = None
    colluding: bool = False

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackError(f"unknown attack {self.kind!r}; choose from {ATTACK_KINDS}")
        if not 0 <= self.epsilon <= 1:
            raise AttackError("epsilon must lie in [0, 1]")
        if self.sigma <= 0:
            raise AttackError("sigma must be > 0")
        if not 0 < self.budget <= 1:
            raise AttackError("budget must lie in (0, 1]")
        if self.radius is not None and self.radius <= 0:
            raise AttackError("radius must be > 0")
        if not 0 < self.alpha < 1 and self.kind == "constrain_scale":
            raise AttackError("alpha must lie in (0, 1)")
        if self.scale is not None and self.scale < 1:
            raise AttackError("scale must be >= 1")

    @property
    def poisons_data(self) -> bool:
        return self.kind in ("flip", "pgd", "constrain_scale", "model_replacement")


def byzantine_update(dim: int, sigma: float, rng) -> np.ndarray:
    """Gaussian noise ``N(0, sigma^2 I)`` sent in place of an honest update."""
    if dim < 1:
        raise AttackError("dim must be >= 1")
    return sigma * rng.standard_normal(dim)


def flip_targets(data: ClientDataset, budget: float, y_min: float = 0.0, y_max: float = 1.0) -> ClientDataset:
    """Move the ``budget`` fraction of targets farthest from the domain boundary to the opposite extreme.

    Distance is ``min(y - y_min, y_max - y)``; values at or below the midpoint
    go to ``y_max``, the rest to ``y_min``. Ties in distance are taken in index
    order.
    """
    if not 0 < budget <= 1:
        raise AttackError("budget must lie in (0, 1]")
    y = data.targets.ravel().copy()
    dist = np.minimum(y - y_min, y_max - y)
    n_flip = max(1, int(math.floor(budget * y.size + 0.5)))
    chosen = np.argsort(-dist, kind="stable")[:n_flip]
    low_side = (y[chosen] - y_min) <= (y_max - y[chosen])
    y[chosen] = np.where(low_side, y_max, y_min)
    return replace(data, targets=y.reshape(data.targets.shape))


def pgd_project(update, global_params, radius: float):
    """Project ``update`` onto the L2 ball of ``radius`` around ``global_params``."""
    u = _arr(update)
    g = _arr(global_params)
    diff = u - g
    norm = float(np.linalg.norm(diff))
    if norm <= radius or math.isinf(radius):
        out = u.copy()
    else:
        out = g + radius * diff / norm
    return _like(update, out)


def constrain_and_scale_train(
    spec: ModelSpec,
    global_params: ParamVector,
    data: ClientDataset,
    alpha: float,
    scale: float,
    lr: float,
    epochs: int = 3,
    batch_size: int = 128,
    rng=None,
) -> ParamVector:
    """Train on ``alpha * task_loss + (1 - alpha) * ||theta - global||^2``, then boost the delta by ``scale``."""
    if not 0 < alpha <= 1:
        raise AttackError("alpha must lie in (0, 1]")
    theta = local_sgd(
        spec,
        global_params,
        data,
        lr,
        epochs,
        batch_size,
        rng,
        mu=2.0 * (1.0 - alpha),
        ref=global_params,
        task_weight=alpha,
    )
    return global_params + scale * (theta - global_params)


def model_replacement(update, global_params, n_participants: int, scale: Optional[float] = None):
    """Boost ``update - global`` so that averaging over ``n_participants`` lands on ``update``."""
    if n_participants < 1:
        raise AttackError("n_participants must be >= 1")
    s = float(n_participants) if scale is None else float(scale)
    g = _arr(global_params)
    return _like(update, g + s * (_arr(update) - g))


def _arr(x):
    return x.values if isinstance(x, ParamVector) else np.asarray(x, dtype=float)


def _like(template, values):
    if isinstance(template, ParamVector):
        return ParamVector(values, template.tag)
    return values
