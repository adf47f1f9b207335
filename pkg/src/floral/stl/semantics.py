"""Boolean and robustness semantics over finite traces, plus DNF rewriting.

Temporal windows are clipped to the end of the trace; a window that is empty
after clipping raises :class:`EvaluationError` rather than being vacuously
satisfied.
"""

from __future__ import annotations

import numpy as np

from .formula import (
    Always,
    And,
    EvaluationError,
    Eventually,
    Formula,
    Implies,
    Not,
    Or,
    Predicate,
    SchemaError,
    TEMPORAL,
    Trace,
    UnsupportedFormError,
    Until,
    as_trace,
    max_channel,
)


def _window(interval, t, length):
    lo = t + interval.lo
    hi = min(t + interval.hi, length - 1)
    if lo > hi:
        raise EvaluationError(
            f"window [{interval.lo},{interval.hi}] at t={t} falls outside a trace of length {length}"
        )
    return lo, hi


def _check(phi, x, t):
    x = as_trace(x)
    if max_channel(phi) >= x.n_channels:
        raise SchemaError(
            f"formula uses channel {max_channel(phi)} but trace has {x.n_channels} channel(s)"
        )
    if not 0 <= t < x.length:
        raise EvaluationError(f"t={t} outside [0, {x.length})")
    return x


def _sat(phi, v, t):
    # every child is evaluated (no short-circuit) so an out-of-support window
    # raises here exactly when it raises under the robustness semantics
    if isinstance(phi, Predicate):
        return bool(phi.holds(v[t, phi.var_index]))
    if isinstance(phi, Not):
        return not _sat(phi.arg, v, t)
    if isinstance(phi, And):
        left, right = _sat(phi.left, v, t), _sat(phi.right, v, t)
        return left and right
    if isinstance(phi, Or):
        left, right = _sat(phi.left, v, t), _sat(phi.right, v, t)
        return left or right
    if isinstance(phi, Implies):
        left, right = _sat(phi.left, v, t), _sat(phi.right, v, t)
        return (not left) or right
    if isinstance(phi, Always):
        lo, hi = _window(phi.interval, t, len(v))
        return all([_sat(phi.arg, v, s) for s in range(lo, hi + 1)])
    if isinstance(phi, Eventually):
        lo, hi = _window(phi.interval, t, len(v))
        return any([_sat(phi.arg, v, s) for s in range(lo, hi + 1)])
    if isinstance(phi, Until):
        lo, hi = _window(phi.interval, t, len(v))
        left = [_sat(phi.left, v, r) for r in range(t, hi + 1)]
        right = [_sat(phi.right, v, s) for s in range(lo, hi + 1)]
        return any(right[s - lo] and all(left[: s - t + 1]) for s in range(lo, hi + 1))
    raise TypeError(f"not a formula node: {phi!r}")


def _rho(phi, v, t):
    if isinstance(phi, Predicate):
        return float(phi.margin(v[t, phi.var_index]))
    if isinstance(phi, Not):
        return -_rho(phi.arg, v, t)
    if isinstance(phi, And):
        return min(_rho(phi.left, v, t), _rho(phi.right, v, t))
    if isinstance(phi, Or):
        return max(_rho(phi.left, v, t), _rho(phi.right, v, t))
    if isinstance(phi, Implies):
        return max(-_rho(phi.left, v, t), _rho(phi.right, v, t))
    if isinstance(phi, Always):
        lo, hi = _window(phi.interval, t, len(v))
        return min(_rho(phi.arg, v, s) for s in range(lo, hi + 1))
    if isinstance(phi, Eventually):
        lo, hi = _window(phi.interval, t, len(v))
        return max(_rho(phi.arg, v, s) for s in range(lo, hi + 1))
    if isinstance(phi, Until):
        lo, hi = _window(phi.interval, t, len(v))
        left = [_rho(phi.left, v, r) for r in range(t, hi + 1)]
        best = -np.inf
        running = np.inf
        for s in range(t, hi + 1):
            running = min(running, left[s - t])
            if s >= lo:
                best = max(best, min(_rho(phi.right, v, s), running))
        return float(best)
    raise TypeError(f"not a formula node: {phi!r}")


def eval_qualitative(phi: Formula, x, t: int = 0) -> bool:
    """Return whether ``(x, t)`` satisfies ``phi``."""
    x = _check(phi, x, t)
    return _sat(phi, x.values, t)


def eval_robustness(phi: Formula, x, t: int = 0) -> float:
    """Return the robustness margin of ``phi`` on ``x`` at step ``t``.

    Positive values mean satisfaction, negative values violation.
    """
    x = _check(phi, x, t)
    return _rho(phi, x.values, t)


def _always_conjuncts(phi):
    """Split a conjunction of ``Always`` nodes; ``None`` if phi has another shape."""
    if isinstance(phi, Always):
        return [phi]
    if isinstance(phi, And):
        left = _always_conjuncts(phi.left)
        right = _always_conjuncts(phi.right)
        if left is not None and right is not None:
            return left + right
    return None


def _is_state(phi):
    if isinstance(phi, TEMPORAL):
        return False
    if isinstance(phi, Predicate):
        return True
    return all(_is_state(c) for c in (
        (phi.arg,) if isinstance(phi, Not) else (phi.left, phi.right)
    ))


def step_satisfaction(phi: Formula, x) -> np.ndarray:
    """Per-step Boolean verdicts used for fraction-of-true scoring.

    For a conjunction of ``Always(I, psi)`` blocks with state-formula bodies,
    step ``s`` is true iff every block whose window covers ``s`` has ``psi``
    true at ``s``; steps no block covers are omitted. Any other formula is
    evaluated at every step where its windows are non-empty.
    """
    x = as_trace(x)
    if max_channel(phi) >= x.n_channels:
        raise SchemaError(
            f"formula uses channel {max_channel(phi)} but trace has {x.n_channels} channel(s)"
        )
    blocks = _always_conjuncts(phi)
    v = x.values
    if blocks is not None and all(_is_state(b.arg) for b in blocks):
        verdict = {}
        for b in blocks:
            lo, hi = _window(b.interval, 0, len(v))
            for s in range(lo, hi + 1):
                verdict[s] = verdict.get(s, True) and _sat(b.arg, v, s)
        return np.array([verdict[s] for s in sorted(verdict)], dtype=bool)
    out = []
    for t in range(len(v)):
        try:
            out.append(_sat(phi, v, t))
        except EvaluationError:
            break
    if not out:
        raise EvaluationError("formula horizon exceeds the trace at every step")
    return np.array(out, dtype=bool)


def _push_negation(phi, negate):
    """Negation normal form over the Boolean layer; temporal nodes stay atomic."""
    if isinstance(phi, Predicate):
        return Not(phi) if negate else phi
    if isinstance(phi, Not):
        return _push_negation(phi.arg, not negate)
    if isinstance(phi, Implies):
        return _push_negation(Or(Not(phi.left), phi.right), negate)
    if isinstance(phi, And):
        l, r = _push_negation(phi.left, negate), _push_negation(phi.right, negate)
        return Or(l, r) if negate else And(l, r)
    if isinstance(phi, Or):
        l, r = _push_negation(phi.left, negate), _push_negation(phi.right, negate)
        return And(l, r) if negate else Or(l, r)
    if isinstance(phi, TEMPORAL):
        if negate:
            raise UnsupportedFormError(
                f"temporal operator under negation is not in negation-normal form: {type(phi).__name__}"
            )
        return phi
    raise UnsupportedFormError(f"cannot normalise node {phi!r}")


def _clauses(phi):
    if isinstance(phi, Or):
        return _clauses(phi.left) + _clauses(phi.right)
    if isinstance(phi, And):
        return [a + b for a in _clauses(phi.left) for b in _clauses(phi.right)]
    return [(phi,)]


def to_dnf_clauses(phi: Formula) -> list[tuple]:
    """Rewrite ``phi`` as a list of conjunctive clauses (tuples of literals).

    Literals are predicates, negated predicates, or temporal sub-formulas,
    which are kept atomic.
    """
    return _clauses(_push_negation(phi, False))
