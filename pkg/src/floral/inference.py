"""Tight-bound inference of operational-range properties from predictions.

An operational-range property over horizon ``tau`` splits ``[0, tau)`` into
consecutive windows of ``window`` steps and bounds every channel in window
``k`` by ``lower[k] <= x <= upper[k]``. The tightest satisfying parameters
are the per-window extrema of the observed predictions, so inference is
closed form; :func:`tightness_gap` is the certification check used against
perturbed parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .stl import (
    Always,
    And,
    Interval,
    Predicate,
    SchemaError,
    Trace,
    conjunction,
    eval_robustness,
)

OPERATIONAL_RANGE = "operational_range"


class InferenceError(ValueError):
    pass


class ContractError(ValueError):
    """Raised when tightness_gap is called on a pair that does not bracket the boundary."""


@dataclass(frozen=True)
class PropertyTemplate:
    horizon: int
    window: int = 2
    channels: tuple = (0,)
    kind: str = OPERATIONAL_RANGE

    def __post_init__(self):
        if self.kind != OPERATIONAL_RANGE:
            raise InferenceError(f"unsupported template kind {self.kind!r}")
        if not 1 <= self.window <= self.horizon:
            raise InferenceError(
                f"need 1 <= window <= horizon, got window={self.window}, horizon={self.horizon}"
            )
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels:
            raise InferenceError("template needs at least one channel")

    @property
    def windows(self) -> list[tuple[int, int]]:
        """Closed step ranges ``(lo, hi)`` tiling ``[0, horizon)``."""
        return [
            (lo, min(lo + self.window, self.horizon) - 1)
            for lo in range(0, self.horizon, self.window)
        ]

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    @property
    def n_params(self) -> int:
        return 2 * self.n_windows * len(self.channels)

    def window_index(self) -> np.ndarray:
        """Window id of each horizon step."""
        return np.arange(self.horizon) // self.window


@dataclass(frozen=True)
class InferredProperty:
    """Template plus fitted bounds; ``upper``/``lower`` are (n_windows, n_channels)."""

    template: PropertyTemplate
    upper: np.ndarray
    lower: np.ndarray
    tightness: float = 0.0

    def __post_init__(self):
        shape = (self.template.n_windows, len(self.template.channels))
        up = np.asarray(self.upper, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        if up.shape != shape or lo.shape != shape:
            raise SchemaError(
                f"expected parameter arrays of shape {shape}, got {up.shape} and {lo.shape}"
            )
        if np.any(up < lo):
            raise InferenceError("upper bound below lower bound")
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "lower", lo)

    def vector(self) -> np.ndarray:
        """Flat parameters: per channel (in template order) all uppers then all lowers."""
        return np.concatenate(
            [np.concatenate([self.upper[:, j], self.lower[:, j]]) for j in range(self.upper.shape[1])]
        )

    @classmethod
    def from_vector(cls, template: PropertyTemplate, vec, tightness: float = 0.0):
        vec = np.asarray(vec, dtype=float)
        k, c = template.n_windows, len(template.channels)
        if vec.shape != (2 * k * c,):
            raise SchemaError(f"expected {2 * k * c} parameters, got {vec.shape}")
        blocks = vec.reshape(c, 2, k)
        return cls(template, blocks[:, 0, :].T.copy(), blocks[:, 1, :].T.copy(), tightness)

    def to_json(self) -> str:
        t = self.template
        return json.dumps(
            {
                "kind": t.kind,
                "horizon": t.horizon,
                "window": t.window,
                "channels": list(t.channels),
                "upper": self.upper.tolist(),
                "lower": self.lower.tolist(),
                "tightness": self.tightness,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "InferredProperty":
        d = json.loads(text)
        try:
            template = PropertyTemplate(
                horizon=d["horizon"], window=d["window"], channels=tuple(d["channels"]), kind=d["kind"]
            )
            return cls(template, np.array(d["upper"]), np.array(d["lower"]), d.get("tightness", 0.0))
        except KeyError as exc:
            raise SchemaError(f"property document missing field {exc.args[0]!r}") from None


def _as_stack(prediction) -> np.ndarray:
    if isinstance(prediction, Trace):
        return prediction.values[None]
    arr = np.asarray(prediction, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InferenceError(f"prediction must be (T, M) or (S, T, M), got shape {arr.shape}")
    return arr


def infer_property(template: PropertyTemplate, prediction) -> InferredProperty:
    """Fit the tightest operational-range bounds satisfied by ``prediction``.

    ``prediction`` is a single trace ``(T, M)`` or a stack ``(S, T, M)``; with
    a stack the property must hold on every member.
    """
    y = _as_stack(prediction)
    if y.shape[1] < template.horizon:
        raise InferenceError(
            f"prediction has {y.shape[1]} steps, template horizon is {template.horizon}"
        )
    if max(template.channels) >= y.shape[2]:
        raise SchemaError(f"template channel {max(template.channels)} missing from prediction")
    if not np.all(np.isfinite(y)):
        raise InferenceError("prediction contains non-finite values")
    y = y[:, : template.horizon, list(template.channels)]
    upper = np.empty((template.n_windows, len(template.channels)))
    lower = np.empty_like(upper)
    for k, (lo, hi) in enumerate(template.windows):
        block = y[:, lo : hi + 1, :]
        upper[k] = block.max(axis=(0, 1))
        lower[k] = block.min(axis=(0, 1))
    return InferredProperty(template, upper, lower, 0.0)


@dataclass(frozen=True)
class PropertyBatch:
    """One fitted property per validation sample.

    ``upper``/``lower`` are ``(S, n_windows, n_channels)``; sample ``s`` is the
    property :func:`infer_property` fits to prediction ``s`` alone.
    """

    template: PropertyTemplate
    upper: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        up = np.asarray(self.upper, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        shape = (self.template.n_windows, len(self.template.channels))
        if up.ndim != 3 or up.shape[1:] != shape or lo.shape != up.shape:
            raise SchemaError(
                f"expected parameter arrays of shape (S, {shape[0]}, {shape[1]}), got {up.shape} and {lo.shape}"
            )
        if np.any(up < lo):
            raise InferenceError("upper bound below lower bound")
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "lower", lo)

    @property
    def n_samples(self) -> int:
        return self.upper.shape[0]

    def __len__(self) -> int:
        return self.n_samples

    def __getitem__(self, s: int) -> InferredProperty:
        return InferredProperty(self.template, self.upper[s], self.lower[s])

    def vector(self) -> np.ndarray:
        """Per-sample :meth:`InferredProperty.vector` blocks, concatenated in sample order."""
        return np.concatenate([self[s].vector() for s in range(self.n_samples)])

    def to_json(self) -> str:
        t = self.template
        return json.dumps(
            {
                "kind": t.kind,
                "horizon": t.horizon,
                "window": t.window,
                "channels": list(t.channels),
                "samples": self.n_samples,
                "upper": self.upper.tolist(),
                "lower": self.lower.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "PropertyBatch":
        d = json.loads(text)
        try:
            template = PropertyTemplate(
                horizon=d["horizon"], window=d["window"], channels=tuple(d["channels"]), kind=d["kind"]
            )
            return cls(template, np.array(d["upper"]), np.array(d["lower"]))
        except KeyError as exc:
            raise SchemaError(f"property document missing field {exc.args[0]!r}") from None


def infer_batch(template: PropertyTemplate, predictions) -> PropertyBatch:
    """Tight bounds for each sample of ``predictions`` ``(S, T, M)`` separately."""
    y = _as_stack(predictions)
    if y.shape[1] < template.horizon:
        raise InferenceError(
            f"prediction has {y.shape[1]} steps, template horizon is {template.horizon}"
        )
    if max(template.channels) >= y.shape[2]:
        raise SchemaError(f"template channel {max(template.channels)} missing from prediction")
    if not np.all(np.isfinite(y)):
        raise InferenceError("prediction contains non-finite values")
    y = y[:, : template.horizon, list(template.channels)]
    shape = (len(y), template.n_windows, len(template.channels))
    upper = np.empty(shape)
    lower = np.empty(shape)
    for k, (lo, hi) in enumerate(template.windows):
        upper[:, k] = y[:, lo : hi + 1].max(axis=1)
        lower[:, k] = y[:, lo : hi + 1].min(axis=1)
    return PropertyBatch(template, upper, lower)


def range_formula(template: PropertyTemplate, upper, lower):
    """Operational-range formula for explicit bounds (need not satisfy upper >= lower)."""
    upper = np.asarray(upper, dtype=float)
    lower = np.asarray(lower, dtype=float)
    parts = []
    for j, ch in enumerate(template.channels):
        for k, (lo, hi) in enumerate(template.windows):
            body = And(Predicate(ch, "<=", float(upper[k, j])), Predicate(ch, ">=", float(lower[k, j])))
            parts.append(Always(Interval(lo, hi), body))
    return conjunction(*parts)


def instantiate(prop: InferredProperty):
    """Concrete formula ``AND_k G[window k](lower_k <= x <= upper_k)`` over all channels."""
    if prop.upper is None or prop.lower is None:
        raise SchemaError("property has no parameters")
    return range_formula(prop.template, prop.upper, prop.lower)


def _min_robustness(phi, x, t) -> float:
    if isinstance(x, Trace):
        return eval_robustness(phi, x, t)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 3:
        return min(eval_robustness(phi, sample, t) for sample in arr)
    return eval_robustness(phi, arr, t)


def tightness_gap(template, p, p_prime, x, t: int = 0) -> float:
    """Return ``max |p' - p|`` for a satisfying ``p`` and a violating ``p'``.

    ``template`` is either a callable mapping parameters to a formula or a
    :class:`PropertyTemplate`, in which case ``p`` and ``p'`` are flat
    parameter vectors in :meth:`InferredProperty.vector` layout.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(p_prime, dtype=float))
    if p.shape != q.shape:
        raise ContractError("parameter vectors differ in shape")
    if np.array_equal(p, q):
        raise ContractError("p and p' coincide; the gap is empty")
    if isinstance(template, PropertyTemplate):
        def build(vec):
            k, c = template.n_windows, len(template.channels)
            blocks = vec.reshape(c, 2, k)
            return range_formula(template, blocks[:, 0, :].T, blocks[:, 1, :].T)
    else:
        def build(vec):
            return template(vec[0] if vec.size == 1 else vec)
    if _min_robustness(build(p), x, t) < 0:
        raise ContractError("p does not satisfy the trace")
    if _min_robustness(build(q), x, t) >= 0:
        raise ContractError("p' does not violate the trace")
    return float(np.max(np.abs(q - p)))


def certify_tight(prop: InferredProperty, prediction, rel: float = 1e-9) -> bool:
    """Check that shrinking any single bound by a relative ``rel`` breaks satisfaction."""
    vec = prop.vector()
    k, c = prop.template.n_windows, len(prop.template.channels)
    for i in range(vec.size):
        is_upper = (i // k) % 2 == 0
        step = rel * max(1.0, abs(vec[i]))
        q = vec.copy()
        q[i] = vec[i] - step if is_upper else vec[i] + step
        try:
            tightness_gap(prop.template, vec, q, prediction)
        except ContractError:
            return False
    return True
