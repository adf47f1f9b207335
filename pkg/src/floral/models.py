"""Small forecasters with hand-written gradients and local SGD.

All models map an input window ``(L, M)`` to a forecast ``(tau, M)`` and keep
their weights in one flat vector so aggregation code can treat every
architecture the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

ARCHS = ("linear", "mlp", "rnn")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``hidden`` is a tuple of layer widths for ``mlp`` and a single width for
    ``rnn``; it is ignored by ``linear``. ``clip_norm`` caps the global
    gradient norm during local SGD (defaults to 5.0 for ``rnn`` only).
    """

    arch: str = "linear"
    lookback: int = 24
    horizon: int = 12
    n_channels: int = 1
    hidden: tuple = ()
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ModelError(f"unknown architecture {self.arch!r}; choose from {ARCHS}")
        hidden = self.hidden
        if isinstance(hidden, int):
            hidden = (hidden,)
        hidden = tuple(int(h) for h in hidden)
        if self.arch == "mlp" and not hidden:
            hidden = (32,)
        if self.arch == "rnn":
            hidden = hidden[:1] or (16,)
        object.__setattr__(self, "hidden", hidden if self.arch != "linear" else ())
        if self.clip_norm is None and self.arch == "rnn":
            object.__setattr__(self, "clip_norm", 5.0)

    @property
    def tag(self) -> str:
        h = "x".join(str(v) for v in self.hidden) or "0"
        return f"{self.arch}-L{self.lookback}-T{self.horizon}-M{self.n_channels}-H{h}"

    @property
    def n_in(self) -> int:
        return self.lookback * self.n_channels

    @property
    def n_out(self) -> int:
        return self.horizon * self.n_channels

    def shapes(self) -> list[tuple[str, tuple]]:
        if self.arch == "linear":
            return [("W", (self.n_out, self.n_in)), ("c", (self.n_out,))]
        if self.arch == "mlp":
            sizes = [self.n_in, *self.hidden, self.n_out]
            out = []
            for k in range(len(sizes) - 1):
                out += [(f"W{k}", (sizes[k + 1], sizes[k])), (f"b{k}", (sizes[k + 1],))]
            return out
        h = self.hidden[0]
        return [
            ("Wx", (h, self.n_channels)),
            ("Wh", (h, h)),
            ("b", (h,)),
            ("Wo", (self.n_out, h)),
            ("bo", (self.n_out,)),
        ]

    @property
    def dim(self) -> int:
        return sum(math.prod(s) for _, s in self.shapes())


@dataclass(frozen=True)
class ParamVector:
    """Flat model weights tagged with the architecture they belong to."""

    values: np.ndarray
    tag: str

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def _other(self, other):
        if isinstance(other, ParamVector):
            if other.tag != self.tag:
                raise ModelError(f"cannot combine {self.tag!r} with {other.tag!r}")
            return other.values
        return other

    def __add__(self, other):
        return ParamVector(self.values + self._other(other), self.tag)

    def __sub__(self, other):
        return ParamVector(self.values - self._other(other), self.tag)

    def __mul__(self, scalar):
        return ParamVector(self.values * scalar, self.tag)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return ParamVector(self.values / scalar, self.tag)

    def __len__(self):
        return self.values.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.tag)


def unflatten(spec: ModelSpec, values) -> dict:
    values = np.asarray(values, dtype=float)
    if values.shape != (spec.dim,):
        raise ModelError(f"{spec.tag} expects {spec.dim} parameters, got shape {values.shape}")
    out, pos = {}, 0
    for name, shape in spec.shapes():
        n = math.prod(shape)
        out[name] = values[pos : pos + n].reshape(shape)
        pos += n
    return out


def flatten(spec: ModelSpec, parts: dict) -> np.ndarray:
    return np.concatenate([np.asarray(parts[name], dtype=float).ravel() for name, _ in spec.shapes()])


def init_params(spec: ModelSpec, rng) -> ParamVector:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.

    Biases take the fan-in of the weight listed before them; the recurrent
    block of the RNN uses the hidden width, as PyTorch does.
    """
    parts = {}
    fan_in = spec.n_in
    for name, shape in spec.shapes():
        if spec.arch == "rnn" and name in ("Wx", "Wh", "b"):
            fan_in = spec.hidden[0]
        elif len(shape) == 2:
            fan_in = shape[1]
        bound = 1.0 / math.sqrt(fan_in)
        parts[name] = rng.uniform(-bound, bound, size=shape)
    return ParamVector(flatten(spec, parts), spec.tag)


def _values(spec, params):
    if isinstance(params, ParamVector):
        if params.tag != spec.tag:
            raise ModelError(f"parameters tagged {params.tag!r} do not fit {spec.tag!r}")
        return params.values
    return np.asarray(params, dtype=float)


def _batch(spec, X):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1:] != (spec.lookback, spec.n_channels):
        raise ModelError(
            f"expected input windows of shape ({spec.lookback}, {spec.n_channels}), got {X.shape[1:]}"
        )
    return X, single


def _forward(spec, p, X):
    """Forward pass on a batch; returns flat outputs ``(B, tau*M)`` and a cache."""
    B = X.shape[0]
    if spec.arch == "linear":
        z = X.reshape(B, -1)
        return z @ p["W"].T + p["c"], (z,)
    if spec.arch == "mlp":
        acts = [X.reshape(B, -1)]
        n_layers = len(spec.hidden) + 1
        for k in range(n_layers):
            z = acts[-1] @ p[f"W{k}"].T + p[f"b{k}"]
            acts.append(np.tanh(z) if k < n_layers - 1 else z)
        return acts[-1], (acts,)
    h = np.zeros((B, spec.hidden[0]))
    hs = [h]
    for t in range(spec.lookback):
        h = np.tanh(X[:, t, :] @ p["Wx"].T + h @ p["Wh"].T + p["b"])
        hs.append(h)
    return h @ p["Wo"].T + p["bo"], (hs,)


def forward(spec: ModelSpec, params, X) -> np.ndarray:
    """Predict ``(tau, M)`` for one window or ``(B, tau, M)`` for a batch."""
    X, single = _batch(spec, X)
    out, _ = _forward(spec, unflatten(spec, _values(spec, params)), X)
    out = out.reshape(-1, spec.horizon, spec.n_channels)
    return out[0] if single else out


def loss(spec: ModelSpec, params, X, Y) -> float:
    """Mean squared error over every sample, step and channel."""
    pred = forward(spec, params, X)
    return float(np.mean((pred - np.asarray(Y, dtype=float)) ** 2))


def grad(spec: ModelSpec, params, X, Y) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the flat parameters."""
    X, _ = _batch(spec, X)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    if X.shape[0] == 0:
        raise ModelError("empty batch")
    p = unflatten(spec, _values(spec, params))
    out, cache = _forward(spec, p, X)
    d_out = 2.0 * (out - Y) / out.size
    g = {}
    if spec.arch == "linear":
        (z,) = cache
        g["W"] = d_out.T @ z
        g["c"] = d_out.sum(axis=0)
    elif spec.arch == "mlp":
        (acts,) = cache
        delta = d_out
        for k in reversed(range(len(spec.hidden) + 1)):
            g[f"W{k}"] = delta.T @ acts[k]
            g[f"b{k}"] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ p[f"W{k}"]) * (1.0 - acts[k] ** 2)
    else:
        (hs,) = cache
        g["Wo"] = d_out.T @ hs[-1]
        g["bo"] = d_out.sum(axis=0)
        g["Wx"] = np.zeros_like(p["Wx"])
        g["Wh"] = np.zeros_like(p["Wh"])
        g["b"] = np.zeros_like(p["b"])
        dh = d_out @ p["Wo"]
        for t in reversed(range(spec.lookback)):
            da = dh * (1.0 - hs[t + 1] ** 2)
            g["Wx"] += da.T @ X[:, t, :]
            g["Wh"] += da.T @ hs[t]
            g["b"] += da.sum(axis=0)
            dh = da @ p["Wh"]
    return flatten(spec, g)


def local_steps(n_samples: int, batch_size: int, epochs: int) -> int:
    return epochs * int(math.ceil(n_samples / batch_size))


def local_sgd(
    spec: ModelSpec,
    start: ParamVector,
    data,
    lr: float,
    epochs: int = 3,
    batch_size: int = 128,
    rng=None,
    mu: Optional[float] = None,
    ref: Optional[ParamVector] = None,
    task_weight: float = 1.0,
) -> ParamVector:
    """Mini-batch SGD on ``data`` starting from ``start``.

    The step direction is ``task_weight * grad(loss) + mu * (theta - ref)``;
    ``ref`` defaults to ``start``. Batches are reshuffled every epoch with
    ``rng``.
    """
    if lr < 0:
        raise ModelError("learning rate must be non-negative")
    if epochs < 1:
        raise ModelError("epochs must be >= 1")
    if data.size < 1:
        raise ModelError("empty dataset")
    rng = np.random.default_rng(0) if rng is None else rng
    theta = _values(spec, start).copy()
    anchor = _values(spec, ref if ref is not None else start)
    n = data.size
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            g = task_weight * grad(spec, theta, data.inputs[idx], data.targets[idx])
            if mu:
                g = g + mu * (theta - anchor)
            if spec.clip_norm is not None:
                norm = np.linalg.norm(g)
                if norm > spec.clip_norm:
                    g = g * (spec.clip_norm / norm)
            theta -= lr * g
    return ParamVector(theta, spec.tag)


def save_params(path, params: ParamVector) -> None:
    """Write a text checkpoint: a ``# tag=... dim=...`` header, then one value per line."""
    lines = [f"# tag={params.tag} dim={params.values.size}"]
    lines += [repr(float(v)) for v in params.values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> ParamVector:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# "):
        raise ModelError(f"{path}: missing checkpoint header")
    meta = dict(item.split("=", 1) for item in text[0][2:].split())
    values = np.array([float(v) for v in text[1:] if v.strip()])
    if values.size != int(meta["dim"]):
        raise ModelError(f"{path}: header says {meta['dim']} values, found {values.size}")
    return ParamVector(values, meta["tag"])
