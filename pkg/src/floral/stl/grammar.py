"""Text syntax for formulas.

Grammar, loosest binding first::

    formula  := or ('->' formula)?
    or       := and (('or' | '|') and)*
    and      := until (('and' | '&') until)*
    until    := unary ('U' interval unary)?
    unary    := ('not' | '!' | '~') unary | ('G' | 'F') interval unary | atom
    atom     := '(' formula ')' | var cmp number
    interval := '[' int ',' int (']' | ')')
    var      := 'x' | 'x' digits           (x1 is channel 0)

``[a,b)`` is normalised to the closed integer range ``[a, b-1]``.
:func:`to_text` prints the canonical fully parenthesised form, which
:func:`parse` reads back to an equal tree.
"""

from __future__ import annotations

import math
import re

from .formula import (
    COMPARATORS,
    Always,
    And,
    Eventually,
    Formula,
    Implies,
    Interval,
    Not,
    Or,
    Predicate,
    StlError,
    Until,
)


class ParseError(StlError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?|[-+]?inf\b)
  | (?P<cmp>>=|<=|>|<)
  | (?P<arrow>->)
  | (?P<punct>[()\[\],!~&|])
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


def _tokenize(text):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value:
            raise ParseError(f"expected {value!r}, found {text or 'end of input'!r}", pos)

    def formula(self):
        left = self.or_()
        if self.peek()[0] == "arrow":
            self.take()
            return Implies(left, self.formula())
        return left

    def or_(self):
        left = self.and_()
        while self.peek()[1] in ("or", "|"):
            self.take()
            left = Or(left, self.and_())
        return left

    def and_(self):
        left = self.until()
        while self.peek()[1] in ("and", "&"):
            self.take()
            left = And(left, self.until())
        return left

    def until(self):
        left = self.unary()
        if self.peek()[1] == "U":
            self.take()
            iv = self.interval()
            return Until(iv, left, self.unary())
        return left

    def unary(self):
        kind, text, pos = self.peek()
        if text in ("not", "!", "~"):
            self.take()
            return Not(self.unary())
        if text in ("G", "F"):
            self.take()
            iv = self.interval()
            arg = self.unary()
            return Always(iv, arg) if text == "G" else Eventually(iv, arg)
        return self.atom()

    def interval(self):
        self.expect("[")
        lo = self.integer()
        self.expect(",")
        hi = self.integer()
        kind, text, pos = self.take()
        if text not in ("]", ")"):
            raise ParseError("interval must close with ']' or ')'", pos)
        if text == ")":
            hi -= 1
        try:
            return Interval(lo, hi)
        except StlError as exc:
            raise ParseError(str(exc), pos) from None

    def integer(self):
        kind, text, pos = self.take()
        if kind != "num" or not re.fullmatch(r"\+?\d+", text):
            raise ParseError(f"expected a non-negative integer, found {text!r}", pos)
        return int(text)

    def atom(self):
        kind, text, pos = self.peek()
        if text == "(":
            self.take()
            inner = self.formula()
            self.expect(")")
            return inner
        if kind == "word":
            m = re.fullmatch(r"x(\d*)", text)
            if m is None:
                raise ParseError(f"unknown identifier {text!r}", pos)
            self.take()
            index = int(m.group(1)) - 1 if m.group(1) else 0
            if index < 0:
                raise ParseError("channels are numbered from x1", pos)
            ckind, ctext, cpos = self.take()
            if ckind != "cmp":
                raise ParseError(f"expected a comparator after {text!r}", cpos)
            nkind, ntext, npos = self.take()
            if nkind != "num":
                raise ParseError(f"expected a number, found {ntext or 'end of input'!r}", npos)
            return Predicate(index, ctext, float(ntext))
        raise ParseError(f"unexpected token {text or 'end of input'!r}", pos)


def parse(text: str) -> Formula:
    """Parse a formula from its text form."""
    p = _Parser(text)
    phi = p.formula()
    kind, rest, pos = p.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing input {rest!r}", pos)
    return phi


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def to_text(phi: Formula) -> str:
    """Canonical text form of ``phi``."""
    if isinstance(phi, Predicate):
        assert phi.comparator in COMPARATORS
        return f"x{phi.var_index + 1} {phi.comparator} {_num(phi.threshold)}"
    if isinstance(phi, Not):
        return f"not {to_text(phi.arg)}"
    if isinstance(phi, And):
        return f"({to_text(phi.left)} and {to_text(phi.right)})"
    if isinstance(phi, Or):
        return f"({to_text(phi.left)} or {to_text(phi.right)})"
    if isinstance(phi, Implies):
        return f"({to_text(phi.left)} -> {to_text(phi.right)})"
    if isinstance(phi, Always):
        return f"G[{phi.interval.lo},{phi.interval.hi}] {to_text(phi.arg)}"
    if isinstance(phi, Eventually):
        return f"F[{phi.interval.lo},{phi.interval.hi}] {to_text(phi.arg)}"
    if isinstance(phi, Until):
        return (
            f"({to_text(phi.left)} U[{phi.interval.lo},{phi.interval.hi}] "
            f"{to_text(phi.right)})"
        )
    raise TypeError(f"not a formula node: {phi!r}")
