"""Federated time-series data: synthetic clients, CSV ingestion, windowing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    pass


class CsvParseError(DataError):
    def __init__(self, path, row, col, message):
        super().__init__(f"{path}: row {row}, column {col!r}: {message}")
        self.path, self.row, self.col = str(path), row, col


@dataclass(frozen=True)
class Normalizer:
    """Per-channel min-max scaling to ``[0, 1]``."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, series: Sequence[np.ndarray]) -> "Normalizer":
        stacked = np.concatenate([np.asarray(s, dtype=float) for s in series], axis=0)
        return cls(stacked.min(axis=0), stacked.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span > 0, span, 1.0)

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / self.span

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.span + self.lo

    def to_json(self) -> str:
        return json.dumps({"lo": np.asarray(self.lo).tolist(), "hi": np.asarray(self.hi).tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Normalizer":
        d = json.loads(text)
        return cls(np.array(d["lo"], dtype=float), np.array(d["hi"], dtype=float))


@dataclass(frozen=True)
class ClientDataset:
    """Sliding windows of one client.

    ``inputs`` is ``(N, L, M)`` and ``targets`` is ``(N, tau, M)``.
    """

    client_id: int
    inputs: np.ndarray
    targets: np.ndarray
    normalizer: Optional[Normalizer] = field(default=None, compare=False)

    def __post_init__(self):
        if self.inputs.ndim != 3 or self.targets.ndim != 3:
            raise DataError("inputs and targets must be 3-D arrays")
        if len(self.inputs) != len(self.targets) or len(self.inputs) < 1:
            raise DataError("a client needs at least one (input, target) window")
        if self.inputs.shape[2] != self.targets.shape[2]:
            raise DataError("inputs and targets disagree on channel count")

    @property
    def size(self) -> int:
        return len(self.inputs)

    @property
    def lookback(self) -> int:
        return self.inputs.shape[1]

    @property
    def horizon(self) -> int:
        return self.targets.shape[1]

    @property
    def n_channels(self) -> int:
        return self.inputs.shape[2]

    def subset(self, index) -> "ClientDataset":
        return replace(self, inputs=self.inputs[index], targets=self.targets[index])


@dataclass(frozen=True)
class ServerValidationSet:
    inputs: np.ndarray
    targets: np.ndarray

    @property
    def size(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic seasonal generator.

    Client ``i`` draws amplitude ``1 + U(-amplitude_spread, amplitude_spread)``,
    phase ``U(-phase_spread, phase_spread)`` (radians) and offset
    ``U(-offset_spread, offset_spread)``; ``noise`` is the Gaussian noise std
    in raw units before normalisation.
    """

    n_clients: int = 30
    series_length: int = 400
    lookback: int = 24
    horizon: int = 12
    n_channels: int = 1
    period: int = 24
    noise: float = 0.05
    amplitude_spread: float = 0.2
    phase_spread: float = 0.3
    offset_spread: float = 0.2
    validation_fraction: float = 0.05
    min_validation: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1:
            raise DataError("lookback and horizon must be >= 1")
        if self.noise < 0:
            raise DataError("noise must be >= 0")
        if self.n_clients < 1 or self.n_channels < 1:
            raise DataError("need at least one client and one channel")
        if self.series_length < self.lookback + self.horizon:
            raise DataError(
                f"series_length {self.series_length} shorter than lookback + horizon "
                f"({self.lookback + self.horizon})"
            )


def sliding_windows(series: np.ndarray, lookback: int, horizon: int):
    """Stride-1 windows of a ``(T, M)`` series; returns ``(inputs, targets)``."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    n = len(series) - lookback - horizon + 1
    if n < 1:
        raise DataError(
            f"series of length {len(series)} too short for lookback {lookback} + horizon {horizon}"
        )
    idx = np.arange(n)[:, None]
    inputs = series[idx + np.arange(lookback)]
    targets = series[idx + lookback + np.arange(horizon)]
    return inputs, targets


def _seasonal(t, amp, phase, offset, period, n_channels):
    cols = []
    for c in range(n_channels):
        shift = 2 * np.pi * c / max(n_channels, 1) / 3
        daily = np.sin(2 * np.pi * t / period + phase + shift)
        slow = 0.3 * np.sin(2 * np.pi * t / (7 * period) + 0.5 * phase)
        cols.append(offset + amp * (daily + slow))
    return np.stack(cols, axis=1)


def generate_series(cfg: GeneratorConfig):
    """Raw (unnormalised) series behind :func:`generate`.

    Returns ``(client_series, validation_series)``: one ``(series_length, M)``
    array per client and one ``(lookback + horizon, M)`` array per validation
    window.
    """
    rng = np.random.default_rng(cfg.seed)
    amp = 1.0 + rng.uniform(-cfg.amplitude_spread, cfg.amplitude_spread, cfg.n_clients)
    phase = rng.uniform(-cfg.phase_spread, cfg.phase_spread, cfg.n_clients)
    offset = rng.uniform(-cfg.offset_spread, cfg.offset_spread, cfg.n_clients)

    t = np.arange(cfg.series_length)
    raw = []
    for i in range(cfg.n_clients):
        clean = _seasonal(t, amp[i], phase[i], offset[i], cfg.period, cfg.n_channels)
        raw.append(clean + cfg.noise * rng.standard_normal(clean.shape))

    # validation windows continue random client regimes past the training range
    n_windows = cfg.series_length - cfg.lookback - cfg.horizon + 1
    n_val = max(cfg.min_validation, int(math.ceil(cfg.validation_fraction * n_windows)))
    span = cfg.lookback + cfg.horizon
    val_raw = []
    for _ in range(n_val):
        i = int(rng.integers(cfg.n_clients))
        start = cfg.series_length + int(rng.integers(0, 4 * cfg.period))
        tv = np.arange(start, start + span)
        clean = _seasonal(tv, amp[i], phase[i], offset[i], cfg.period, cfg.n_channels)
        val_raw.append(clean + cfg.noise * rng.standard_normal(clean.shape))
    return raw, val_raw


def generate(cfg: GeneratorConfig):
    """Build client datasets and a server validation set from ``cfg``.

    Returns ``(clients, validation)``. Values share one normaliser, fitted on
    every generated series, so targets lie in ``[0, 1]``.
    """
    raw, val_raw = generate_series(cfg)
    norm = Normalizer.fit(raw + val_raw)
    clients = []
    for i, series in enumerate(raw):
        x, y = sliding_windows(norm.normalize(series), cfg.lookback, cfg.horizon)
        clients.append(ClientDataset(i, x, y, norm))
    val = np.stack([norm.normalize(s) for s in val_raw])
    validation = ServerValidationSet(val[:, : cfg.lookback], val[:, cfg.lookback :])
    return clients, validation


def train_test_split(clients: Sequence[ClientDataset], test_fraction: float = 0.2):
    """Hold out the chronologically last ``test_fraction`` of each client's windows.

    Returns ``(train_clients, test_inputs, test_targets)``.
    """
    if not 0 <= test_fraction < 1:
        raise DataError("test_fraction must be in [0, 1)")
    train, xs, ys = [], [], []
    for c in clients:
        n_test = int(round(test_fraction * c.size))
        n_train = c.size - n_test
        if n_train < 1:
            raise DataError(f"client {c.client_id} has no training windows left")
        train.append(c.subset(slice(0, n_train)))
        xs.append(c.inputs[n_train:])
        ys.append(c.targets[n_train:])
    return train, np.concatenate(xs), np.concatenate(ys)


def validation_from_clients(clients: Sequence[ClientDataset], fraction: float = 0.05, rng=None):
    """Carve a server validation set out of client windows.

    Used for ingested data, where no separate regime generator exists. The
    chosen windows are removed from the returned clients so the two stay
    disjoint.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n_val = max(1, int(math.ceil(fraction * clients[0].size)))
    xs, ys, kept = [], [], []
    owners = rng.integers(len(clients), size=n_val)
    remove = {i: set() for i in range(len(clients))}
    for o in owners:
        c = clients[o]
        choices = [j for j in range(c.size) if j not in remove[o]]
        if len(choices) <= 1:
            continue
        j = int(rng.choice(choices))
        remove[o].add(j)
        xs.append(c.inputs[j])
        ys.append(c.targets[j])
    for i, c in enumerate(clients):
        keep = np.array([j for j in range(c.size) if j not in remove[i]])
        kept.append(c.subset(keep))
    if not xs:
        raise DataError("clients too small to carve a validation set")
    return kept, ServerValidationSet(np.stack(xs), np.stack(ys))


def _read_rows(path, channels, client_column):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in channels if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        if client_column is not None and client_column not in header:
            raise DataError(f"{path}: missing client column {client_column!r}")
        cols = [header.index(c) for c in channels]
        out = {}
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            key = row[header.index(client_column)].strip() if client_column else None
            values = []
            for name, ci in zip(channels, cols):
                cell = row[ci].strip() if ci < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvParseError(path, rowno, name, f"non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise CsvParseError(path, rowno, name, f"non-finite value {cell!r}")
                values.append(v)
            out.setdefault(key, []).append(values)
    return out


def ingest_csv(
    paths,
    channels: Sequence[str],
    lookback: int,
    horizon: int,
    client_column: Optional[str] = None,
) -> list[ClientDataset]:
    """Read time-ordered CSV files into normalised client datasets.

    Either pass one file per client, or a single file with ``client_column``
    naming the client of each row. All clients share one min-max normaliser,
    attached to every returned dataset.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    series = []
    for path in paths:
        groups = _read_rows(path, list(channels), client_column)
        if client_column is None:
            series.append(np.array(groups[None], dtype=float))
        else:
            for key in sorted(groups):
                series.append(np.array(groups[key], dtype=float))
    for s, path in zip(series, paths if client_column is None else [paths[0]] * len(series)):
        if len(s) < lookback + horizon:
            raise DataError(
                f"{path}: series of {len(s)} rows is shorter than lookback + horizon "
                f"({lookback + horizon})"
            )
    norm = Normalizer.fit(series)
    out = []
    for i, s in enumerate(series):
        x, y = sliding_windows(norm.normalize(s), lookback, horizon)
        out.append(ClientDataset(i, x, y, norm))
    return out


def sample_clients(n_clients: int, fraction: float, rng) -> np.ndarray:
    """Uniformly choose ``round(fraction * n_clients)`` distinct ids, sorted."""
    if not 0 < fraction <= 1:
        raise DataError("fraction must lie in (0, 1]")
    m = max(1, int(math.floor(fraction * n_clients + 0.5)))
    return np.sort(rng.choice(n_clients, size=m, replace=False))
