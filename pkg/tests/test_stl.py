import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floral.stl import (
    Always,
    And,
    EvaluationError,
    Eventually,
    Implies,
    Interval,
    Not,
    Or,
    ParseError,
    Predicate,
    SchemaError,
    StlError,
    Trace,
    UnsupportedFormError,
    Until,
    conjunction,
    eval_qualitative,
    eval_robustness,
    horizon,
    parse,
    step_satisfaction,
    to_dnf_clauses,
    to_text,
)
from stl_oracle import random_formula, tables

# two-channel range formula and trace from the worked verification example
RANGE_PHI = Always(
    Interval.half_open(0, 5),
    conjunction(
        Predicate(0, ">=", 0.2),
        Predicate(0, "<=", 2.5),
        Predicate(1, ">=", 6.0),
        Predicate(1, "<=", 10.0),
    ),
)
RANGE_TRACE = np.array([(0.4, 4), (0.45, 5), (0.55, 6), (0.75, 7), (1.0, 9)], dtype=float)


def test_predicate_margin_and_strictness():
    assert Predicate(0, ">=", 1.0).margin(3.0) == 2.0
    assert Predicate(0, "<=", 1.0).margin(3.0) == -2.0
    # strict comparators share the margin but differ at equality
    assert Predicate(0, ">", 1.0).margin(1.0) == 0.0
    assert Predicate(0, ">=", 1.0).holds(1.0)
    assert not Predicate(0, ">", 1.0).holds(1.0)


def test_interval_validation():
    assert Interval.half_open(0, 5) == Interval(0, 4)
    with pytest.raises(StlError):
        Interval(3, 2)
    with pytest.raises(StlError):
        Interval(-1, 2)


def test_trace_rejects_nan_and_is_read_only():
    with pytest.raises(StlError):
        Trace(np.array([1.0, np.nan]))
    tr = Trace(np.array([1.0, 2.0]))
    assert tr.values.shape == (2, 1)
    with pytest.raises(ValueError):
        tr.values[0, 0] = 5.0


def test_range_example_step_vector():
    verdict = step_satisfaction(RANGE_PHI, RANGE_TRACE)
    assert verdict.tolist() == [False, False, True, True, True]
    assert verdict.mean() == 0.6
    assert eval_qualitative(RANGE_PHI, RANGE_TRACE) is False


def test_range_example_robustness_value():
    # worst step is t=0 where x2 = 4 sits 2 below its lower bound
    assert eval_robustness(RANGE_PHI, RANGE_TRACE) == pytest.approx(-2.0)


def test_always_eventually_on_simple_trace():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    p = Predicate(0, ">=", 1.5)
    assert eval_qualitative(Eventually(Interval(0, 3), p), x)
    assert not eval_qualitative(Always(Interval(0, 3), p), x)
    assert eval_robustness(Eventually(Interval(0, 3), p), x) == pytest.approx(1.5)
    assert eval_robustness(Always(Interval(0, 3), p), x) == pytest.approx(-1.5)


def test_window_clipped_to_trace_end():
    x = np.array([5.0, 5.0, 5.0])
    phi = Always(Interval(1, 10), Predicate(0, ">=", 1.0))
    assert eval_qualitative(phi, x)
    assert eval_robustness(phi, x) == pytest.approx(4.0)


def test_empty_window_is_an_error_not_vacuous_truth():
    x = np.array([5.0, 5.0, 5.0])
    phi = Always(Interval(3, 4), Predicate(0, ">=", 1.0))
    with pytest.raises(EvaluationError):
        eval_qualitative(phi, x)
    with pytest.raises(EvaluationError):
        eval_robustness(phi, x)


def test_boolean_evaluation_does_not_hide_out_of_support_windows():
    x = np.array([0.0, 0.0])
    phi = And(Predicate(0, ">=", 1.0), Always(Interval(5, 6), Predicate(0, ">=", 0.0)))
    with pytest.raises(EvaluationError):
        eval_qualitative(phi, x)


def test_until_requires_left_up_to_and_including_switch_step():
    p, q = Predicate(0, ">=", 0.0), Predicate(1, ">=", 0.0)
    phi = Until(Interval(0, 3), p, q)
    ok = np.array([[1, -1], [1, -1], [1, 1], [-1, -1]], dtype=float)
    assert eval_qualitative(phi, ok)
    # left fails exactly at the step where right becomes true
    bad = np.array([[1, -1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    assert not eval_qualitative(phi, bad)


def test_implies_matches_or_not():
    x = np.array([[0.3, -1.0], [0.7, 2.0]])
    a, b = Predicate(0, ">=", 0.5), Predicate(1, ">=", 0.0)
    for t in range(2):
        assert eval_robustness(Implies(a, b), x, t) == eval_robustness(Or(Not(a), b), x, t)


def test_schema_and_time_errors():
    with pytest.raises(SchemaError):
        eval_qualitative(Predicate(2, ">=", 0.0), np.zeros((3, 2)))
    with pytest.raises(EvaluationError):
        eval_qualitative(Predicate(0, ">=", 0.0), np.zeros(3), t=3)


def test_step_satisfaction_general_formula_stops_at_horizon():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    phi = Eventually(Interval(1, 1), Predicate(0, ">=", 2.0))
    # defined at t = 0..2, the window at t = 3 runs off the trace
    assert step_satisfaction(phi, x).tolist() == [False, True, True]


def test_step_satisfaction_tautology_scores_one():
    phi = Always(Interval(0, 4), Predicate(0, ">=", -math.inf))
    assert step_satisfaction(phi, np.random.default_rng(0).normal(size=5)).mean() == 1.0


# --- DNF -----------------------------------------------------------------


def test_dnf_distributes_and_pushes_negation():
    a, b, c = (Predicate(i, ">=", 0.0) for i in range(3))
    clauses = to_dnf_clauses(And(Or(a, b), Not(Or(c, Not(a)))))
    assert clauses == [(a, Not(c), a), (b, Not(c), a)]


def test_dnf_keeps_temporal_nodes_atomic():
    g = Always(Interval(0, 2), Predicate(0, ">=", 0.0))
    p = Predicate(1, "<=", 1.0)
    assert to_dnf_clauses(Or(g, p)) == [(g,), (p,)]
    with pytest.raises(UnsupportedFormError):
        to_dnf_clauses(Not(g))


def _dnf_value(clauses, x, t):
    return any(all(eval_qualitative(lit, x, t) for lit in clause) for clause in clauses)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000))
def test_dnf_is_equivalent_on_boolean_formulas(seed):
    rng = np.random.default_rng(seed)
    phi = _boolean_formula(rng, 4)
    x = rng.choice([-1.0, 0.0, 1.0], size=(1, 3))
    assert _dnf_value(to_dnf_clauses(phi), x, 0) == eval_qualitative(phi, x, 0)


def _boolean_formula(rng, d):
    if d <= 1 or rng.random() < 0.3:
        return Predicate(int(rng.integers(3)), str(rng.choice([">=", "<"])), float(rng.choice([-0.5, 0.5])))
    k = int(rng.integers(4))
    if k == 0:
        return Not(_boolean_formula(rng, d - 1))
    cls = (And, Or, Implies)[k - 1]
    return cls(_boolean_formula(rng, d - 1), _boolean_formula(rng, d - 1))


# --- parser ---------------------------------------------------------------


def test_parse_range_example_text():
    phi = parse("G[0,5)(x1 >= 0.2 and x1 <= 2.5 and x2 >= 6 and x2 <= 10)")
    assert phi == RANGE_PHI


def test_parse_precedence():
    a, b, c = Predicate(0, ">=", 1.0), Predicate(0, "<=", 2.0), Predicate(1, ">", 0.0)
    assert parse("x1 >= 1 or x1 <= 2 and x2 > 0") == Or(a, And(b, c))
    assert parse("x1 >= 1 -> x1 <= 2 -> x2 > 0") == Implies(a, Implies(b, c))
    assert parse("not x1 >= 1 and x2 > 0") == And(Not(a), c)
    assert parse("x1 >= 1 U[0,3] x2 > 0") == Until(Interval(0, 3), a, c)
    assert parse("F[1,2] G[0,1] x >= 1") == Eventually(Interval(1, 2), Always(Interval(0, 1), a))


def test_parse_infinite_thresholds():
    assert parse("x1 >= -inf") == Predicate(0, ">=", -math.inf)
    assert parse("x2 < inf") == Predicate(1, "<", math.inf)


@pytest.mark.parametrize(
    "text, position",
    [
        ("G[0,5 (x1 >= 1)", 6),
        ("x1 >= ", 6),
        ("x1 >= 1 and", 11),
        ("y1 >= 1", 0),
        ("x1 >= 1 $", 8),
        ("G[3,1] x1 >= 0", 5),
    ],
)
def test_parse_errors_report_position(text, position):
    with pytest.raises(ParseError) as info:
        parse(text)
    assert info.value.position == position


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 100_000))
def test_printer_round_trips(seed):
    rng = np.random.default_rng(seed)
    phi = random_formula(rng, 4, 3, [-1.5, 0.0, 0.25, 2.0, math.inf])
    assert parse(to_text(phi)) == phi


# --- semantics against the brute-force table ----------------------------------


def _check_against_oracle(phi, x):
    sat, rho = tables(phi, x)
    for t in range(len(x)):
        if sat[t] is None:
            with pytest.raises(EvaluationError):
                eval_robustness(phi, x, t)
            with pytest.raises(EvaluationError):
                eval_qualitative(phi, x, t)
            continue
        assert eval_qualitative(phi, x, t) == sat[t]
        assert abs(eval_robustness(phi, x, t) - rho[t]) <= 1e-9


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 1_000_000))
def test_semantics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    phi = random_formula(rng, 4, m, [-0.5, 0.0, 0.5])
    x = rng.choice([-1.0, -0.5, 0.0, 0.5, 1.0], size=(int(rng.integers(1, 17)), m))
    _check_against_oracle(phi, x)


traces = st.integers(1, 12).flatmap(
    lambda n: st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n)
)


@settings(max_examples=200, deadline=None)
@given(traces, st.integers(0, 3), st.integers(0, 4), st.floats(-5, 5))
def test_robustness_sign_is_sound(xs, lo, width, c):
    x = np.array(xs)
    phi = Always(Interval(lo, lo + width), Predicate(0, ">=", c))
    if lo >= len(x):
        return
    r = eval_robustness(phi, x)
    if r > 0:
        assert eval_qualitative(phi, x)
    if r < 0:
        assert not eval_qualitative(phi, x)


@settings(max_examples=200, deadline=None)
@given(traces, st.integers(0, 3), st.integers(0, 4), st.floats(-5, 5))
def test_always_is_dual_of_eventually(xs, lo, width, c):
    x = np.array(xs)
    if lo >= len(x):
        return
    p = Predicate(0, ">=", c)
    iv = Interval(lo, lo + width)
    assert eval_robustness(Always(iv, p), x) == -eval_robustness(Eventually(iv, Not(p)), x)
    assert eval_qualitative(Always(iv, p), x) == (not eval_qualitative(Eventually(iv, Not(p)), x))


@settings(max_examples=100, deadline=None)
@given(traces, st.floats(-5, 5), st.floats(-3, 3))
def test_robustness_shifts_with_signal(xs, c, shift):
    x = np.array(xs)
    phi = Always(Interval(0, len(x)), Predicate(0, ">=", c))
    shifted = Always(Interval(0, len(x)), Predicate(0, ">=", c + shift))
    assert eval_robustness(phi, x) == pytest.approx(eval_robustness(shifted, x + shift), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(traces, st.floats(-5, 5))
def test_double_negation(xs, c):
    x = np.array(xs)
    p = Eventually(Interval(0, 2), Predicate(0, "<", c))
    assert eval_robustness(Not(Not(p)), x) == eval_robustness(p, x)


def test_formula_horizon():
    assert horizon(parse("x1 >= 0")) == 0
    assert horizon(parse("G[0,3] (F[1,2] (x1 >= 0))")) == 5
    assert horizon(parse("(x1 >= 0) U[2,4] (G[0,1] (x2 <= 1))")) == 5
