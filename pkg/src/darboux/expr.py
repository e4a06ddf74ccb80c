"""Exact symbolic expression core.

Expressions are immutable trees built from exact rational constants,
variables, parameters, sums, products, rational powers, log, exp and
unevaluated univariate integrals.  ``simplify`` rewrites any tree into a
canonical sum-of-terms form (flattened, sorted, constants folded), which is
what makes structural equality a usable zero test for the expression class
handled here.  Anything canonicalization cannot decide is settled by seeded
random sampling (`is_zero` / `is_nonvanishing`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np


class ExprError(Exception):
    """Invalid symbolic operation."""


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(ExprError):
    """Numeric evaluation hit a pole, domain violation or non-convergence."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class Expr:
    __slots__ = ()

    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(MINUS_ONE, _coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), mul(MINUS_ONE, self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return mul(MINUS_ONE, self)

    def __pow__(self, q):
        return pow_(self, q)


@dataclass(frozen=True, slots=True)
class Rat(Expr):
    value: Fraction


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Param(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Add(Expr):
    terms: tuple


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    factors: tuple


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: Fraction


@dataclass(frozen=True, slots=True)
class Log(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class Exp(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class Integral(Expr):
    """Unevaluated antiderivative of a univariate integrand in ``var``."""

    integrand: Expr
    var: str


ZERO = Rat(Fraction(0))
ONE = Rat(Fraction(1))
MINUS_ONE = Rat(Fraction(-1))


def rat(p, q=1) -> Rat:
    return Rat(Fraction(p, q))


def _coerce(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return Rat(Fraction(x))
    raise TypeError(f"cannot coerce {x!r} to Expr")


# ---------------------------------------------------------------------------
# Canonicalization
# ---------------------------------------------------------------------------
#
# Internally a simplified expression is a mapping
#     {factor-tuple: coefficient}
# where each factor-tuple is a sorted tuple of (base, exponent) pairs and the
# coefficient is an exact Fraction.  The empty factor-tuple is the constant
# term.

_MAX_EXPANSION_POWER = 8

_simplify_cache: dict = {}


def _ckey(e: Expr) -> str:
    """Deterministic total-order key used for sorting factors and terms."""
    if isinstance(e, Rat):
        return f"A{e.value}"
    if isinstance(e, Var):
        return f"B{e.name}"
    if isinstance(e, Param):
        return f"C{e.name}"
    if isinstance(e, Log):
        return f"D({_ckey(e.arg)})"
    if isinstance(e, Exp):
        return f"E({_ckey(e.arg)})"
    if isinstance(e, Integral):
        return f"F({e.var},{_ckey(e.integrand)})"
    if isinstance(e, Pow):
        return f"G({_ckey(e.base)},{e.exponent})"
    if isinstance(e, Mul):
        return "H(" + ",".join(_ckey(f) for f in e.factors) + ")"
    if isinstance(e, Add):
        return "I(" + ",".join(_ckey(t) for t in e.terms) + ")"
    raise TypeError(type(e))


def _accumulate(out: dict, terms: dict, scale: Fraction = Fraction(1)) -> None:
    for fs, c in terms.items():
        new = out.get(fs, Fraction(0)) + c * scale
        if new:
            out[fs] = new
        elif fs in out:
            del out[fs]


def _normal_factors(items: Iterable[tuple]) -> tuple[Fraction, tuple]:
    """Merge duplicate bases, fold rational bases, renormalize exp factors."""
    coeff = Fraction(1)
    merged: dict = {}
    for base, q in items:
        merged[base] = merged.get(base, Fraction(0)) + q
    exp_arg_terms: dict = {}
    out: dict = {}
    for base, q in merged.items():
        if not q:
            continue
        if isinstance(base, Rat):
            if q.denominator == 1:
                coeff *= base.value ** int(q)
                continue
            root = _exact_root(base.value, q)
            if root is not None:
                coeff *= root
                continue
            out[base] = out.get(base, Fraction(0)) + q
        elif isinstance(base, Exp):
            # exp(a)^q -> exp(q*a); all exp factors merge into one.
            _accumulate(exp_arg_terms, _terms(base.arg), q)
        else:
            out[base] = out.get(base, Fraction(0)) + q
    if exp_arg_terms:
        arg = _build(exp_arg_terms)
        if arg != ZERO:
            e = Exp(arg)
            out[e] = out.get(e, Fraction(0)) + 1
    factors = tuple(sorted(((b, q) for b, q in out.items() if q),
                           key=lambda bq: _ckey(bq[0])))
    return coeff, factors


def _exact_root(value: Fraction, q: Fraction) -> Fraction | None:
    """value**q as an exact Fraction, or None."""
    if value == 1:
        return Fraction(1)
    if value <= 0:
        return None
    k = q.denominator

    def iroot(n: int) -> int | None:
        r = round(n ** (1.0 / k))
        for cand in (r - 1, r, r + 1):
            if cand > 0 and cand ** k == n:
                return cand
        return None

    rn, rd = iroot(value.numerator), iroot(value.denominator)
    if rn is None or rd is None:
        return None
    return Fraction(rn, rd) ** q.numerator


def _mul_terms(d1: dict, d2: dict) -> dict:
    out: dict = {}
    for f1, c1 in d1.items():
        for f2, c2 in d2.items():
            extra, fs = _normal_factors(list(f1) + list(f2))
            c = c1 * c2 * extra
            if c:
                new = out.get(fs, Fraction(0)) + c
                if new:
                    out[fs] = new
                elif fs in out:
                    del out[fs]
    return out


def _pow_terms(d: dict, q: Fraction) -> dict:
    if q == 0:
        return {(): Fraction(1)}
    if q == 1:
        return dict(d)
    if not d:
        if q < 0:
            raise ExprError("zero raised to a negative power")
        return {}
    if len(d) == 1:
        (fs, c), = d.items()
        if q.denominator == 1:
            coeff = c ** int(q)
            extra, nfs = _normal_factors([(b, e * q) for b, e in fs])
            return {nfs: coeff * extra}
        # Non-integer exponent: only safe without sign knowledge when the
        # term is a bare base (coefficient 1, single factor, exponent 1).
        if c == 1 and len(fs) == 1 and fs[0][1] == 1:
            extra, nfs = _normal_factors([(fs[0][0], q)])
            return {nfs: extra}
        root = _exact_root(c, q) if not fs else None
        if root is not None:
            return {(): root}
        base = _build(d)
        extra, nfs = _normal_factors([(base, q)])
        return {nfs: extra}
    # Sum base.
    if q.denominator == 1:
        n = int(q)
        if 0 < n <= _MAX_EXPANSION_POWER:
            out = {(): Fraction(1)}
            for _ in range(n):
                out = _mul_terms(out, d)
            return out
        if -_MAX_EXPANSION_POWER <= n < 0:
            expanded = {(): Fraction(1)}
            for _ in range(-n):
                expanded = _mul_terms(expanded, d)
            base = _build(expanded)
            extra, nfs = _normal_factors([(base, Fraction(-1))])
            return {nfs: extra}
    base = _build(d)
    extra, nfs = _normal_factors([(base, q)])
    return {nfs: extra}


def _terms(e: Expr) -> dict:
    if isinstance(e, Rat):
        return {(): e.value} if e.value else {}
    if isinstance(e, (Var, Param)):
        return {((e, Fraction(1)),): Fraction(1)}
    if isinstance(e, Add):
        out: dict = {}
        for t in e.terms:
            _accumulate(out, _terms(t))
        return out
    if isinstance(e, Mul):
        cur = {(): Fraction(1)}
        for f in e.factors:
            cur = _mul_terms(cur, _terms(f))
        return cur
    if isinstance(e, Pow):
        return _pow_terms(_terms(e.base), Fraction(e.exponent))
    if isinstance(e, Log):
        a = _build(_terms(e.arg))
        if a == ONE:
            return {}
        return {((Log(a), Fraction(1)),): Fraction(1)}
    if isinstance(e, Exp):
        a = _build(_terms(e.arg))
        if a == ZERO:
            return {(): Fraction(1)}
        return {((Exp(a), Fraction(1)),): Fraction(1)}
    if isinstance(e, Integral):
        f = _build(_terms(e.integrand))
        if f == ZERO:
            return {}
        return {((Integral(f, e.var), Fraction(1)),): Fraction(1)}
    raise TypeError(type(e))


def _build_term(fs: tuple, c: Fraction) -> Expr:
    parts = []
    for b, q in fs:
        parts.append(b if q == 1 else Pow(b, q))
    if not parts:
        return Rat(c)
    if c != 1:
        parts = [Rat(c)] + parts
    return parts[0] if len(parts) == 1 else Mul(tuple(parts))


def _build(d: dict) -> Expr:
    if not d:
        return ZERO
    items = sorted(d.items(), key=lambda kv: tuple(
        f"{_ckey(b)}^{q}" for b, q in kv[0]))
    terms = tuple(_build_term(fs, c) for fs, c in items)
    return terms[0] if len(terms) == 1 else Add(terms)


def simplify(e: Expr) -> Expr:
    cached = _simplify_cache.get(e)
    if cached is None:
        cached = _build(_terms(e))
        _simplify_cache[e] = cached
        _simplify_cache[cached] = cached
    return cached


# Convenience constructors; results are canonical.

def add(*es) -> Expr:
    return simplify(Add(tuple(_coerce(e) for e in es)))


def mul(*es) -> Expr:
    return simplify(Mul(tuple(_coerce(e) for e in es)))


def pow_(e: Expr, q) -> Expr:
    return simplify(Pow(_coerce(e), Fraction(q)))


def div(a, b) -> Expr:
    return simplify(Mul((_coerce(a), Pow(_coerce(b), Fraction(-1)))))


def log(e) -> Expr:
    return simplify(Log(_coerce(e)))


def exp(e) -> Expr:
    return simplify(Exp(_coerce(e)))


def is_constant(e: Expr) -> bool:
    return isinstance(simplify(e), Rat)


def ast_size(e: Expr) -> int:
    if isinstance(e, (Rat, Var, Param)):
        return 1
    if isinstance(e, (Log, Exp)):
        return 1 + ast_size(e.arg)
    if isinstance(e, Integral):
        return 2 + ast_size(e.integrand)
    if isinstance(e, Pow):
        return 1 + ast_size(e.base)
    if isinstance(e, Add):
        return 1 + sum(ast_size(t) for t in e.terms)
    if isinstance(e, Mul):
        return 1 + sum(ast_size(f) for f in e.factors)
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# Dependency analysis
# ---------------------------------------------------------------------------

def free_variables(e: Expr) -> frozenset[str]:
    """Names of variables appearing in the canonical form of ``e``."""
    out: set[str] = set()
    _collect_vars(simplify(e), out)
    return frozenset(out)


def _collect_vars(e: Expr, out: set) -> None:
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, (Log, Exp)):
        _collect_vars(e.arg, out)
    elif isinstance(e, Integral):
        out.add(e.var)
        _collect_vars(e.integrand, out)
    elif isinstance(e, Pow):
        _collect_vars(e.base, out)
    elif isinstance(e, Add):
        for t in e.terms:
            _collect_vars(t, out)
    elif isinstance(e, Mul):
        for f in e.factors:
            _collect_vars(f, out)


def free_parameters(e: Expr) -> frozenset[str]:
    out: set[str] = set()

    def walk(x):
        if isinstance(x, Param):
            out.add(x.name)
        elif isinstance(x, (Log, Exp)):
            walk(x.arg)
        elif isinstance(x, Integral):
            walk(x.integrand)
        elif isinstance(x, Pow):
            walk(x.base)
        elif isinstance(x, Add):
            for t in x.terms:
                walk(t)
        elif isinstance(x, Mul):
            for f in x.factors:
                walk(f)

    walk(simplify(e))
    return frozenset(out)


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

def differentiate(e: Expr, v: str) -> Expr:
    """Exact partial derivative with respect to variable ``v``, simplified."""
    return simplify(_diff(simplify(e), v, strict_integral=True))


def _diff(e: Expr, v: str, strict_integral: bool = True) -> Expr:
    if isinstance(e, (Rat, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Add):
        return Add(tuple(_diff(t, v, strict_integral) for t in e.terms))
    if isinstance(e, Mul):
        parts = []
        fs = e.factors
        for i, f in enumerate(fs):
            parts.append(Mul(tuple(
                _diff(f, v, strict_integral) if j == i else g
                for j, g in enumerate(fs))))
        return Add(tuple(parts))
    if isinstance(e, Pow):
        return Mul((Rat(e.exponent), Pow(e.base, e.exponent - 1),
                    _diff(e.base, v, strict_integral)))
    if isinstance(e, Log):
        return Mul((_diff(e.arg, v, strict_integral), Pow(e.arg, Fraction(-1))))
    if isinstance(e, Exp):
        return Mul((_diff(e.arg, v, strict_integral), e))
    if isinstance(e, Integral):
        if e.var == v:
            return e.integrand
        if strict_integral:
            raise ExprError(
                f"cannot differentiate integral in {e.var} with respect to {v}")
        return ZERO
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------

SIGNS = ("positive", "negative", "nonzero", "unrestricted")


@dataclass(frozen=True)
class Domain:
    """Ordered variables plus sign assumptions for variables and parameters.

    Sign assumptions carve out the open orthant/box the reduction works on.
    """

    variables: tuple[str, ...]
    var_signs: tuple[tuple[str, str], ...] = ()
    param_signs: tuple[tuple[str, str], ...] = ()

    @staticmethod
    def make(variables, signs: Mapping[str, str] | None = None,
             parameters: Mapping[str, str] | None = None) -> "Domain":
        variables = tuple(variables)
        if len(set(variables)) != len(variables):
            raise ValueError("duplicate variable names")
        signs = dict(signs or {})
        parameters = dict(parameters or {})
        for name, s in list(signs.items()) + list(parameters.items()):
            if s not in SIGNS:
                raise ValueError(f"unknown sign assumption {s!r} for {name}")
        for name in signs:
            if name not in variables:
                raise ValueError(f"sign given for undeclared variable {name}")
        return Domain(
            variables,
            tuple((v, signs.get(v, "unrestricted")) for v in variables),
            tuple(sorted(parameters.items())),
        )

    @property
    def parameters(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.param_signs)

    def sign_of(self, name: str) -> str:
        for n, s in self.var_signs + self.param_signs:
            if n == name:
                return s
        return "unrestricted"

    def is_variable(self, name: str) -> bool:
        return name in self.variables

    def is_parameter(self, name: str) -> bool:
        return name in self.parameters

    def sample(self, rng: np.random.Generator) -> tuple[dict, dict]:
        """Draw an interior point and parameter values respecting signs."""
        def draw(sign: str) -> float:
            mag = float(rng.uniform(0.2, 2.5))
            if sign == "positive":
                return mag
            if sign == "negative":
                return -mag
            if sign == "nonzero":
                return mag if rng.uniform() < 0.5 else -mag
            return float(rng.uniform(-2.5, 2.5))

        point = {v: draw(s) for v, s in self.var_signs}
        params = {p: draw(s) for p, s in self.param_signs}
        return point, params

    def anchor(self, var: str) -> float:
        s = self.sign_of(var)
        if s == "positive":
            return 1.0
        if s == "negative":
            return -1.0
        return 0.0


# ---------------------------------------------------------------------------
# Parsing and printing
# ---------------------------------------------------------------------------

_FUNCTIONS = ("log", "exp", "sqrt", "integral")


def parse(text: str, domain: Domain) -> Expr:
    """Parse an expression string; all identifiers must be declared."""
    tokens = _tokenize(text)
    parser = _Parser(tokens, domain, text)
    e = parser.parse_expr()
    parser.expect_end()
    return simplify(e)


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(("num", int(text[i:j]), i))
            i = j
            continue
        if c.isalpha():
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        if c in "+-*/^(),":
            tokens.append(("op", c, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, domain: Domain, text: str):
        self.tokens = tokens
        self.pos = 0
        self.domain = domain
        self.text = text

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val, at = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, found {val!r}", at)

    def expect_end(self):
        kind, val, at = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {val!r}", at)

    def parse_expr(self) -> Expr:
        e = self.parse_term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.parse_term()
                e = Add((e, rhs)) if val == "+" else Add((e, Mul((MINUS_ONE, rhs))))
            else:
                return e

    def parse_term(self) -> Expr:
        e = self.parse_unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.parse_unary()
                e = Mul((e, rhs)) if val == "*" else Mul((e, Pow(rhs, Fraction(-1))))
            else:
                return e

    def parse_unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return Mul((MINUS_ONE, self.parse_unary()))
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_primary()
        kind, val, at = self.peek()
        if kind == "op" and val == "^":
            self.next()
            exponent = self.parse_unary()  # right-associative
            q = simplify(exponent)
            if not isinstance(q, Rat):
                raise ParseError("exponent must be rational", at)
            return Pow(base, q.value)
        return base

    def parse_primary(self) -> Expr:
        kind, val, at = self.next()
        if kind == "num":
            return Rat(Fraction(val))
        if kind == "op" and val == "(":
            e = self.parse_expr()
            self.expect_op(")")
            return e
        if kind == "ident":
            nkind, nval, _ = self.peek()
            if val in _FUNCTIONS and nkind == "op" and nval == "(":
                self.next()
                arg = self.parse_expr()
                if val == "integral":
                    self.expect_op(",")
                    vkind, vname, vat = self.next()
                    if vkind != "ident" or not self.domain.is_variable(vname):
                        raise ParseError("integral variable must be declared", vat)
                    self.expect_op(")")
                    return Integral(arg, vname)
                self.expect_op(")")
                if val == "log":
                    return Log(arg)
                if val == "exp":
                    return Exp(arg)
                return Pow(arg, Fraction(1, 2))
            if self.domain.is_variable(val):
                return Var(val)
            if self.domain.is_parameter(val):
                return Param(val)
            raise ParseError(f"undeclared identifier {val!r}", at)
        raise ParseError(f"unexpected token {val!r}", at)


def to_text(e: Expr) -> str:
    """Print in the input grammar; parse(to_text(e)) == simplify(e)."""
    e = simplify(e)
    if isinstance(e, Add):
        out = _print_term(e.terms[0])
        for t in e.terms[1:]:
            s = _print_term(t)
            if s.startswith("-"):
                out += " - " + s[1:]
            else:
                out += " + " + s
        return out
    return _print_term(e)


def _print_term(e: Expr) -> str:
    if isinstance(e, Mul):
        parts = [_print_factor(f) for f in e.factors]
        if parts[0] == "-1" and len(parts) > 1:
            return "-" + "*".join(parts[1:])
        return "*".join(parts)
    return _print_factor(e)


def _print_factor(e: Expr) -> str:
    if isinstance(e, Rat):
        v = e.value
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Log):
        return f"log({to_text(e.arg)})"
    if isinstance(e, Exp):
        return f"exp({to_text(e.arg)})"
    if isinstance(e, Integral):
        return f"integral({to_text(e.integrand)}, {e.var})"
    if isinstance(e, Pow):
        base = _print_factor(e.base) if isinstance(e.base, (Var, Param, Log, Exp, Integral)) \
            else f"({to_text(e.base)})"
        q = e.exponent
        if q.denominator == 1 and q >= 0:
            return f"{base}^{q.numerator}"
        qs = str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"
        return f"{base}^({qs})"
    if isinstance(e, Add):
        return f"({to_text(e)})"
    if isinstance(e, Mul):
        return f"({_print_term(e)})"
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# Substitution
# ---------------------------------------------------------------------------

def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions; result is simplified."""
    def walk(x: Expr) -> Expr:
        if isinstance(x, Var):
            return mapping.get(x.name, x)
        if isinstance(x, (Rat, Param)):
            return x
        if isinstance(x, Add):
            return Add(tuple(walk(t) for t in x.terms))
        if isinstance(x, Mul):
            return Mul(tuple(walk(f) for f in x.factors))
        if isinstance(x, Pow):
            return Pow(walk(x.base), x.exponent)
        if isinstance(x, Log):
            return Log(walk(x.arg))
        if isinstance(x, Exp):
            return Exp(walk(x.arg))
        if isinstance(x, Integral):
            if x.var in mapping:
                raise ExprError("cannot substitute the variable of an integral")
            return Integral(walk(x.integrand), x.var)
        raise TypeError(type(x))

    return simplify(walk(simplify(e)))


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def integrate_univariate(e: Expr, v: str, domain: Domain | None = None) -> Expr:
    """Closed-form antiderivative in ``v`` when the term table applies.

    The integrand may contain parameters but no variable other than ``v``.
    Terms outside the table come back as unevaluated ``Integral`` nodes; the
    constant of integration is fixed to zero.
    """
    others = free_variables(e) - {v}
    if others:
        raise ExprError(f"integrand depends on other variables: {sorted(others)}")
    return integrate_in(e, v, domain)


def integrate_in(e: Expr, v: str, domain: Domain | None = None) -> Expr:
    """Antiderivative in ``v`` treating every other symbol as constant."""
    s = simplify(e)
    terms = s.terms if isinstance(s, Add) else (s,)
    parts = [_integrate_term(t, v, domain) for t in terms]
    return simplify(Add(tuple(parts)))


def is_closed_form(e: Expr) -> bool:
    """True when no unevaluated integral node remains."""
    if isinstance(e, Integral):
        return False
    if isinstance(e, (Log, Exp)):
        return is_closed_form(e.arg)
    if isinstance(e, Pow):
        return is_closed_form(e.base)
    if isinstance(e, Add):
        return all(is_closed_form(t) for t in e.terms)
    if isinstance(e, Mul):
        return all(is_closed_form(f) for f in e.factors)
    return True


def _integrate_term(t: Expr, v: str, domain: Domain | None) -> Expr:
    factors = t.factors if isinstance(t, Mul) else (t,)
    dep, rest = [], []
    for f in factors:
        (dep if v in free_variables(f) else rest).append(f)
    if not dep:
        return Mul(tuple(rest) + (Var(v),))
    if len(dep) == 1:
        f = dep[0]
        base, q = (f.base, f.exponent) if isinstance(f, Pow) else (f, Fraction(1))
        if isinstance(base, Var) and base.name == v:
            if q != -1:
                return Mul(tuple(rest) + (Rat(Fraction(1) / (q + 1)), Pow(base, q + 1)))
            sign = domain.sign_of(v) if domain is not None else "unrestricted"
            if sign == "positive":
                return Mul(tuple(rest) + (Log(base),))
            if sign == "negative":
                return Mul(tuple(rest) + (Log(Mul((MINUS_ONE, base))),))
            return Integral(simplify(t), v)
        if isinstance(base, Exp) and q == 1:
            slope = differentiate(base.arg, v)
            if isinstance(slope, Rat) and slope.value:
                return Mul(tuple(rest) + (Rat(Fraction(1) / slope.value), base))
    return Integral(simplify(t), v)


# ---------------------------------------------------------------------------
# Numeric evaluation
# ---------------------------------------------------------------------------

_POLE_EPS = 1e-300


def evaluate(e: Expr, point: Mapping[str, float],
             params: Mapping[str, float] | None = None,
             domain: Domain | None = None) -> float:
    """IEEE-double value of ``e``; integral nodes go through quadrature."""
    params = params or {}
    return _eval(simplify(e), dict(point), params, domain)


def _eval(e: Expr, point: dict, params: Mapping[str, float],
          domain: Domain | None) -> float:
    if isinstance(e, Rat):
        return float(e.value)
    if isinstance(e, Var):
        try:
            return float(point[e.name])
        except KeyError:
            raise EvaluationError(f"unbound variable {e.name}") from None
    if isinstance(e, Param):
        try:
            return float(params[e.name])
        except KeyError:
            raise EvaluationError(f"unbound parameter {e.name}") from None
    if isinstance(e, Add):
        return math.fsum(_eval(t, point, params, domain) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= _eval(f, point, params, domain)
        return out
    if isinstance(e, Pow):
        b = _eval(e.base, point, params, domain)
        q = e.exponent
        if q < 0 and abs(b) < _POLE_EPS:
            raise EvaluationError("pole: division by (near-)zero")
        if q.denominator == 1:
            return b ** int(q)
        if b < 0:
            raise EvaluationError("fractional power of a negative value")
        return b ** float(q)
    if isinstance(e, Log):
        a = _eval(e.arg, point, params, domain)
        if a <= 0:
            raise EvaluationError("log of a non-positive value")
        return math.log(a)
    if isinstance(e, Exp):
        a = _eval(e.arg, point, params, domain)
        try:
            return math.exp(a)
        except OverflowError:
            raise EvaluationError("exp overflow") from None
    if isinstance(e, Integral):
        from scipy.integrate import quad

        try:
            upper = float(point[e.var])
        except KeyError:
            raise EvaluationError(f"unbound variable {e.var}") from None
        anchor = domain.anchor(e.var) if domain is not None else 0.0

        def f(t: float) -> float:
            inner = dict(point)
            inner[e.var] = t
            return _eval(e.integrand, inner, params, domain)

        value, err = quad(f, anchor, upper, limit=200)
        if not math.isfinite(value) or err > 1e-6 * (1 + abs(value)):
            raise EvaluationError("quadrature did not converge")
        return value
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# Compilation (fast repeated evaluation, used by the simulator)
# ---------------------------------------------------------------------------

def compile_functions(exprs, domain: Domain, params: Mapping[str, float]):
    """Compile expressions to one callable f(x: sequence) -> list[float]."""
    names = {}
    body = []
    for i, e in enumerate(exprs):
        body.append(_codegen(simplify(e), domain, params, names, f"_int{i}"))
    args = ", ".join(domain.variables) if domain.variables else "_unused=0"
    src = f"def _f({args}):\n    return [" + ", ".join(body) + "]\n"
    ns: dict = {"_log": math.log, "_exp": math.exp, **names}
    exec(src, ns)  # generated from a closed expression grammar only
    f = ns["_f"]
    return lambda x: f(*x)


def _codegen(e: Expr, domain, params, names: dict, tag: str) -> str:
    if isinstance(e, Rat):
        return f"({e.value.numerator}/{e.value.denominator})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Param):
        return repr(float(params[e.name]))
    if isinstance(e, Add):
        return "(" + "+".join(_codegen(t, domain, params, names, tag + "a")
                              for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(" + "*".join(_codegen(f, domain, params, names, tag + "m")
                              for f in e.factors) + ")"
    if isinstance(e, Pow):
        base = _codegen(e.base, domain, params, names, tag + "p")
        q = e.exponent
        expo = f"({q.numerator}/{q.denominator})" if q.denominator != 1 else str(int(q))
        return f"({base}**{expo})"
    if isinstance(e, Log):
        return f"_log({_codegen(e.arg, domain, params, names, tag + 'l')})"
    if isinstance(e, Exp):
        return f"_exp({_codegen(e.arg, domain, params, names, tag + 'e')})"
    if isinstance(e, Integral):
        # Slow path: fall back to interpreted quadrature.
        fname = f"_quad{len(names)}{tag}"
        var_order = domain.variables

        def call(*vals, _e=e, _order=var_order):
            return evaluate(_e, dict(zip(_order, vals)), params, domain)

        names[fname] = call
        return f"{fname}(" + ", ".join(var_order) + ")"
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# Probabilistic zero / nonvanishing testing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    samples: int = 64
    tolerance: float = 1e-9


DEFAULT_SAMPLER = SamplerConfig()


@dataclass(frozen=True)
class ZeroVerdict:
    outcome: str  # zero | nonzero | nonvanishing | undetermined
    method: str   # symbolic-canonical | sampled
    samples: int = 0
    seed: int = 0
    max_residual: float = 0.0
    witness: tuple | None = None  # (point-dict, params-dict, value)

    def __bool__(self) -> bool:
        raise TypeError("inspect ZeroVerdict.outcome explicitly")


def _sample_values(e: Expr, domain: Domain, cfg: SamplerConfig):
    """Yield (point, params, value, scale) at cfg.samples interior points."""
    rng = np.random.default_rng(cfg.seed)
    s = simplify(e)
    terms = s.terms if isinstance(s, Add) else (s,)
    produced = 0
    attempts = 0
    max_attempts = cfg.samples * 20
    while produced < cfg.samples and attempts < max_attempts:
        attempts += 1
        point, params = domain.sample(rng)
        try:
            vals = [evaluate(t, point, params, domain) for t in terms]
        except EvaluationError:
            continue
        value = math.fsum(vals)
        scale = math.fsum(abs(v) for v in vals)
        produced += 1
        yield point, params, value, scale


def is_zero(e: Expr, domain: Domain, cfg: SamplerConfig = DEFAULT_SAMPLER) -> ZeroVerdict:
    """Zero test: canonical simplification first, then seeded sampling."""
    s = simplify(e)
    if s == ZERO:
        return ZeroVerdict("zero", "symbolic-canonical")
    worst = 0.0
    witness = None
    count = 0
    for point, params, value, scale in _sample_values(s, domain, cfg):
        count += 1
        resid = abs(value) / (1.0 + scale)
        if resid > worst:
            worst, witness = resid, (point, params, value)
        if abs(value) > cfg.tolerance * (1.0 + scale):
            return ZeroVerdict("nonzero", "sampled", count, cfg.seed, worst, witness)
    if count == 0:
        return ZeroVerdict("undetermined", "sampled", 0, cfg.seed)
    return ZeroVerdict("zero", "sampled", count, cfg.seed, worst, witness)


def _definite_sign(e: Expr, domain: Domain) -> int | None:
    """+1/-1 when the canonical form is structurally sign-definite."""
    if isinstance(e, Rat):
        if e.value > 0:
            return 1
        if e.value < 0:
            return -1
        return None
    if isinstance(e, (Var, Param)):
        s = domain.sign_of(e.name)
        return {"positive": 1, "negative": -1}.get(s)
    if isinstance(e, Exp):
        return 1
    if isinstance(e, Pow):
        bs = _definite_sign(e.base, domain)
        q = e.exponent
        if bs == 1:
            return 1
        if bs == -1 and q.denominator == 1:
            return 1 if q.numerator % 2 == 0 else -1
        nz = isinstance(e.base, (Var, Param)) and domain.sign_of(e.base.name) == "nonzero"
        if nz and q.denominator == 1 and q.numerator % 2 == 0:
            return 1
        return None
    if isinstance(e, Mul):
        sign = 1
        for f in e.factors:
            fs = _definite_sign(f, domain)
            if fs is None:
                return None
            sign *= fs
        return sign
    if isinstance(e, Add):
        signs = {_definite_sign(t, domain) for t in e.terms}
        if signs == {1}:
            return 1
        if signs == {-1}:
            return -1
        return None
    return None


def is_nonvanishing(e: Expr, domain: Domain,
                    cfg: SamplerConfig = DEFAULT_SAMPLER) -> ZeroVerdict:
    """Smooth-nonvanishing test on the domain's open orthant."""
    s = simplify(e)
    if s == ZERO:
        return ZeroVerdict("zero", "symbolic-canonical")
    if isinstance(s, Rat):
        return ZeroVerdict("nonvanishing", "symbolic-canonical")
    if _definite_sign(s, domain) is not None:
        return ZeroVerdict("nonvanishing", "symbolic-canonical")
    worst_small = math.inf
    witness = None
    signs = set()
    count = 0
    for point, params, value, scale in _sample_values(s, domain, cfg):
        count += 1
        if abs(value) <= cfg.tolerance * (1.0 + scale):
            return ZeroVerdict("undetermined", "sampled", count, cfg.seed,
                               abs(value), (point, params, value))
        signs.add(1 if value > 0 else -1)
        if abs(value) < worst_small:
            worst_small, witness = abs(value), (point, params, value)
    if count == 0 or len(signs) != 1:
        return ZeroVerdict("undetermined", "sampled", count, cfg.seed)
    return ZeroVerdict("nonvanishing", "sampled", count, cfg.seed,
                       worst_small, witness)
