"""Discrete-time signal temporal logic: syntax, semantics, text format."""

from .formula import (
    Always,
    And,
    EvaluationError,
    Eventually,
    Formula,
    Implies,
    Interval,
    Not,
    Or,
    Predicate,
    SchemaError,
    StlError,
    Trace,
    UnsupportedFormError,
    Until,
    as_trace,
    conjunction,
    depth,
    disjunction,
    horizon,
    max_channel,
)
from .grammar import ParseError, parse, to_text
from .semantics import eval_qualitative, eval_robustness, step_satisfaction, to_dnf_clauses

__all__ = [
    "Always", "And", "EvaluationError", "Eventually", "Formula", "Implies", "Interval",
    "Not", "Or", "ParseError", "Predicate", "SchemaError", "StlError", "Trace",
    "UnsupportedFormError", "Until", "as_trace", "conjunction", "depth", "disjunction",
    "eval_qualitative", "eval_robustness", "horizon", "max_channel", "parse", "step_satisfaction",
    "to_dnf_clauses", "to_text",
]
