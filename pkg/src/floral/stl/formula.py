"""Abstract syntax for discrete-time signal temporal logic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


class StlError(Exception):
    """Base class for formula construction and evaluation failures."""


class EvaluationError(StlError):
    """Raised when a formula is evaluated outside the trace support."""


class SchemaError(StlError):
    """Raised when a formula refers to channels the trace does not have."""


class UnsupportedFormError(StlError):
    """Raised when a rewrite (e.g. DNF) cannot handle a node."""


COMPARATORS = (">=", "<=", ">", "<")


@dataclass(frozen=True)
class Interval:
    """Closed integer step range ``[lo, hi]`` relative to the evaluation time."""

    lo: int
    hi: int

    def __post_init__(self):
        if int(self.lo) != self.lo or int(self.hi) != self.hi:
            raise StlError(f"interval bounds must be integers, got [{self.lo}, {self.hi}]")
        if not 0 <= self.lo <= self.hi:
            raise StlError(f"interval must satisfy 0 <= lo <= hi, got [{self.lo}, {self.hi}]")

    @classmethod
    def half_open(cls, lo: int, hi: int) -> "Interval":
        """Build the interval ``[lo, hi)`` on the integer grid."""
        return cls(lo, hi - 1)


@dataclass(frozen=True)
class Predicate:
    var_index: int
    comparator: str
    threshold: float

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise StlError(f"unknown comparator {self.comparator!r}")
        if self.var_index < 0:
            raise StlError("var_index must be non-negative")

    def margin(self, value):
        # strict and non-strict comparators share the same margin
        if self.comparator in (">=", ">"):
            return value - self.threshold
        return self.threshold - value

    def holds(self, value) -> bool:
        c = self.comparator
        if c == ">=":
            return value >= self.threshold
        if c == "<=":
            return value <= self.threshold
        if c == ">":
            return value > self.threshold
        return value < self.threshold


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Always:
    interval: Interval
    arg: "Formula"


@dataclass(frozen=True)
class Eventually:
    interval: Interval
    arg: "Formula"


@dataclass(frozen=True)
class Until:
    interval: Interval
    left: "Formula"
    right: "Formula"


Formula = Union[Predicate, Not, And, Or, Implies, Always, Eventually, Until]

TEMPORAL = (Always, Eventually, Until)


def conjunction(*parts: Formula) -> Formula:
    """Left-nested ``And`` of one or more formulas."""
    if not parts:
        raise StlError("conjunction of zero formulas")
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


def disjunction(*parts: Formula) -> Formula:
    if not parts:
        raise StlError("disjunction of zero formulas")
    out = parts[0]
    for p in parts[1:]:
        out = Or(out, p)
    return out


def children(phi: Formula) -> tuple:
    if isinstance(phi, Predicate):
        return ()
    if isinstance(phi, (Not, Always, Eventually)):
        return (phi.arg,)
    return (phi.left, phi.right)


def max_channel(phi: Formula) -> int:
    """Largest channel index referenced by ``phi``."""
    if isinstance(phi, Predicate):
        return phi.var_index
    return max(max_channel(c) for c in children(phi))


def horizon(phi: Formula) -> int:
    """Furthest step offset ``phi`` looks ahead from its evaluation time."""
    kids = children(phi)
    reach = max((horizon(c) for c in kids), default=0)
    return reach + (phi.interval.hi if isinstance(phi, TEMPORAL) else 0)


def depth(phi: Formula) -> int:
    kids = children(phi)
    return 1 + (max(depth(c) for c in kids) if kids else 0)


@dataclass(frozen=True)
class Trace:
    """Finite multichannel signal sampled on the integer grid.

    ``values`` has shape ``(T, M)``; a 1-D input is read as a single channel.
    """

    values: np.ndarray
    start_time: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise StlError(f"trace must be a non-empty (T, M) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise StlError("trace contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def as_trace(x) -> Trace:
    return x if isinstance(x, Trace) else Trace(x)
