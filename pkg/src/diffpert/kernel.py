"""Symbolic kernel: parsing, canonical forms, calculus and numeric evaluation.

Expressions are plain sympy trees. Every symbol the kernel creates is declared
positive, which lets radicals such as ``sqrt(v/u)`` split into ``sqrt(v)/sqrt(u)``
and keeps ``ln`` on its real branch. Numeric evaluation does not rely on that
assumption and will happily evaluate at negative points.

The canonical form produced by :func:`simplify` is

* expanded, with sin/cos products and positive integer powers rewritten as sums
  of sin/cos of integer linear combinations of the original angles,
* brought over a common denominator with ``cancel`` and then distributed term
  by term over that denominator.

Radicals and ``ln`` arguments are canonicalized recursively but are otherwise
treated as opaque atoms.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Union

import numpy as np
import sympy as sp

Expr = sp.Expr
Binding = Mapping[Union[str, sp.Symbol], Union[Expr, str, int, float]]

__all__ = [
    "Expr",
    "Binding",
    "ParseError",
    "EvaluationError",
    "PoleError",
    "BranchError",
    "UnsupportedIntegrand",
    "NotPolynomialError",
    "Equivalence",
    "symbol",
    "function",
    "parse",
    "pretty",
    "simplify",
    "is_zero",
    "differentiate",
    "substitute",
    "series_truncate",
    "equivalent",
    "eval_numeric",
    "compile_numeric",
    "antiderivative",
    "fourier",
    "free_names",
]


class ParseError(ValueError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.text = text
        self.position = position


class EvaluationError(ArithmeticError):
    """Numeric evaluation failed; ``subexpr`` is the offending node."""

    def __init__(self, message: str, subexpr: Expr):
        super().__init__(f"{message}: {pretty(subexpr)}")
        self.subexpr = subexpr


class PoleError(EvaluationError):
    pass


class BranchError(EvaluationError):
    pass


class UnsupportedIntegrand(ValueError):
    def __init__(self, term: Expr, var: sp.Symbol):
        super().__init__(f"cannot integrate term {pretty(term)} with respect to {var}")
        self.term = term


class NotPolynomialError(ValueError):
    pass


# -- symbols -----------------------------------------------------------------


@lru_cache(maxsize=None)
def symbol(name: str) -> sp.Symbol:
    """Interned positive symbol. Safe for concurrent reads (lru_cache is locked)."""
    return sp.Symbol(name, positive=True)


@lru_cache(maxsize=None)
def function(name: str):
    return sp.Function(name, positive=True)


def _as_symbol(s: Union[str, sp.Symbol]) -> sp.Symbol:
    return symbol(s) if isinstance(s, str) else s


def free_names(e: Expr) -> set[str]:
    return {s.name for s in e.free_symbols}


# -- parser ------------------------------------------------------------------

_FUNCTIONS: dict[str, Callable[..., Expr]] = {
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "ln": sp.log,
    "sqrt": sp.sqrt,
}
_CONSTANTS = {"i": sp.I, "pi": sp.pi}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch.isspace():
            pos += 1
            continue
        if ch.isdigit() or (ch == "." and pos + 1 < n and text[pos + 1].isdigit()):
            start = pos
            while pos < n and (text[pos].isdigit() or text[pos] == "."):
                pos += 1
            tokens.append(("num", text[start:pos], start))
            continue
        if ch.isalpha() or ch == "_":
            start = pos
            while pos < n and (text[pos].isalnum() or text[pos] == "_"):
                pos += 1
            while pos < n and text[pos] == "'":
                pos += 1
            tokens.append(("name", text[start:pos], start))
            continue
        if ch in "+-*/^(),":
            tokens.append(("op", ch, pos))
            pos += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", text, pos)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, functions: Mapping[str, Callable[..., Expr]]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.functions = functions

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind != "op":
            raise ParseError(f"expected {value!r}", self.text, pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", self.text, pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = e * rhs if op == "*" else e / rhs
        return e

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            e = self.unary()
            return -e if val == "-" else e
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return base ** self.unary()
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            try:
                return sp.Rational(val)
            except (TypeError, ValueError):
                raise ParseError(f"bad number {val!r}", self.text, pos) from None
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                self.take()
                args = [self.expr()]
                while self.peek()[1] == "," and self.peek()[0] == "op":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                return self.call(val, args, pos)
            if val in _CONSTANTS:
                return _CONSTANTS[val]
            return symbol(val)
        raise ParseError(f"unexpected token {val!r}", self.text, pos)

    def call(self, name: str, args: list[Expr], pos: int) -> Expr:
        if name in ("diff", "integral"):
            if len(args) != 2 or not isinstance(args[1], sp.Symbol):
                raise ParseError(f"{name} takes (expression, symbol)", self.text, pos)
            if name == "diff":
                return sp.Derivative(args[0], args[1])
            return sp.Integral(args[0], args[1])
        fn = self.functions.get(name)
        if fn is None:
            raise ParseError(f"unknown function {name!r}", self.text, pos)
        if name in _FUNCTIONS and len(args) != 1:
            raise ParseError(f"{name} takes one argument", self.text, pos)
        return fn(*args)


def parse(text: str, functions: Iterable[str] = (), canonical: bool = True) -> Expr:
    """Parse an infix expression (grammar in docs/grammar.md).

    ``functions`` names additional undefined functions such as ``Omega`` that
    may be applied to arguments.
    """
    table = dict(_FUNCTIONS)
    for name in functions:
        table[name] = function(name)
    e = _Parser(text, table).parse()
    return simplify(e) if canonical else e


class _Printer(sp.printing.str.StrPrinter):
    def _print_Pow(self, expr, rational=False):
        return super()._print_Pow(expr, rational).replace("**", "^")

    def _print_log(self, expr):
        return f"ln({self._print(expr.args[0])})"

    def _print_ImaginaryUnit(self, expr):
        return "i"

    def _print_Exp1(self, expr):
        return "exp(1)"

    def _print_Derivative(self, expr):
        (var, count), = expr.variable_count
        inner = self._print(expr.expr)
        for _ in range(count):
            inner = f"diff({inner}, {self._print(var)})"
        return inner

    def _print_Integral(self, expr):
        (var,) = expr.variables
        return f"integral({self._print(expr.function)}, {self._print(var)})"

    def _print_Mul(self, expr):
        return super()._print_Mul(expr).replace("**", "^")


def pretty(e) -> str:
    """Deterministic infix printer; its output re-parses to the same tree."""
    return _Printer().doprint(e)


# -- canonical form ----------------------------------------------------------

_TRIG = (sp.sin, sp.cos)


def _split_trig(h: Expr) -> tuple[Expr, Expr | None]:
    if h.is_number:
        return h, None
    coeff, rest = h.as_coeff_Mul()
    return coeff, rest


def _trig_product(g: Expr, f: Expr) -> list[tuple[Expr, Expr | None]]:
    a, b = g.args[0], f.args[0]
    half = sp.Rational(1, 2)
    if isinstance(g, sp.sin) and isinstance(f, sp.sin):
        parts = [(half, sp.cos(a - b)), (-half, sp.cos(a + b))]
    elif isinstance(g, sp.cos) and isinstance(f, sp.cos):
        parts = [(half, sp.cos(a - b)), (half, sp.cos(a + b))]
    elif isinstance(g, sp.sin):
        parts = [(half, sp.sin(a + b)), (half, sp.sin(a - b))]
    else:
        parts = [(half, sp.sin(a + b)), (-half, sp.sin(a - b))]
    out = []
    for c, h in parts:
        k, trig = _split_trig(h)
        out.append((c * k, trig))
    return out


def _fourier_term(term: Expr) -> Expr:
    trig: list[Expr] = []
    rest: list[Expr] = []
    for f in sp.Mul.make_args(term):
        base, ex = f.as_base_exp()
        if isinstance(base, _TRIG) and ex.is_Integer and ex > 0:
            trig.extend([base] * int(ex))
        else:
            rest.append(f)
    if len(trig) < 2:
        return term
    acc: list[tuple[Expr, Expr | None]] = [(sp.Integer(1), None)]
    for f in trig:
        nxt = []
        for c, g in acc:
            if c == 0:
                continue
            if g is None:
                nxt.append((c, f))
            else:
                nxt.extend((c * k, h) for k, h in _trig_product(g, f))
        acc = nxt
    total = sp.Add(*[c * (1 if g is None else g) for c, g in acc])
    return sp.expand(sp.Mul(*rest) * total)


def fourier(e: Expr) -> Expr:
    """Rewrite products and positive powers of sin/cos as linear Fourier sums."""
    e = sp.expand(e)
    return sp.Add(*[_fourier_term(t) for t in sp.Add.make_args(e)])


def _canon_args(e: Expr) -> Expr:
    """Canonicalize the arguments of functions and fractional powers."""
    if e.is_Atom or isinstance(e, (sp.Derivative, sp.Integral)):
        return e
    if isinstance(e, sp.Function):
        return e.func(*[_canon_step(a) for a in e.args])
    if isinstance(e, sp.Pow) and not e.exp.is_Integer:
        return e.func(_canon_step(e.base), e.exp)
    return e.func(*[_canon_args(a) for a in e.args])


@lru_cache(maxsize=65536)
def _canon_step(e: Expr) -> Expr:
    e = _canon_args(e)
    e = fourier(e)
    if e.has(sp.Derivative, sp.Integral):
        return sp.expand(e)
    return sp.expand(_cancel(e))


def _cancel(e: Expr) -> Expr:
    # Cancelling the (numerator, denominator) pair directly avoids the
    # factor_terms pass sp.cancel makes over the whole expanded sum; terms
    # already over a common denominator are regrouped by as_numer_denom.
    p, q = e.as_numer_denom()
    if q.is_Number:
        return p / q
    c, p, q = sp.cancel((sp.expand(p), sp.expand(q)))
    return c * p / q


@lru_cache(maxsize=65536)
def _simplify(e: Expr) -> Expr:
    prev = None
    for _ in range(5):
        prev, e = e, _canon_step(e)
        if e == prev:
            break
    return e


def simplify(e) -> Expr:
    """Canonical form. Idempotent by construction (iterated to a fixed point).

    Results are memoized; expressions are immutable so sharing is safe.
    """
    return _simplify(sp.sympify(e))


def is_zero(e: Expr) -> bool:
    return simplify(e) == 0


def differentiate(e: Expr, var: Union[str, sp.Symbol]) -> Expr:
    return simplify(sp.diff(e, _as_symbol(var)))


def _normalize_binding(b: Binding, functions: Iterable[str] = ()) -> dict:
    out = {}
    for k, v in b.items():
        key = _as_symbol(k)
        val = parse(v, functions, canonical=False) if isinstance(v, str) else sp.sympify(v)
        if key in out:
            raise ValueError(f"symbol {key} bound twice")
        out[key] = val
    return out


def substitute(e: Expr, b: Binding, functions: Iterable[str] = ()) -> Expr:
    """Simultaneous substitution followed by canonicalization.

    Keys may also name undefined functions (``"Omega"``); their values are
    then expressions in the function's argument symbol ``x`` unless given as a
    ``sympy.Lambda``.
    """
    plain = {}
    for k, v in b.items():
        if isinstance(k, str) and (k in functions or isinstance(v, sp.Lambda)):
            lam = v if isinstance(v, sp.Lambda) else sp.Lambda(symbol("x"), parse(v, canonical=False))
            e = e.replace(function(k), lam).doit()
        else:
            plain[k] = v
    if plain:
        e = e.subs(_normalize_binding(plain, functions), simultaneous=True)
    return simplify(e)


def series_truncate(e: Expr, eps: Union[str, sp.Symbol], order: int) -> Expr:
    """Drop every monomial whose degree in ``eps`` exceeds ``order``."""
    eps = _as_symbol(eps)
    e = sp.expand(e)
    kept = []
    for term in sp.Add.make_args(e):
        deg = sp.Integer(0)
        for f in sp.Mul.make_args(term):
            base, ex = f.as_base_exp()
            if base == eps:
                deg += ex
            elif f.has(eps):
                raise NotPolynomialError(f"{pretty(term)} is not polynomial in {eps}")
        if not (deg.is_Integer and deg >= 0):
            raise NotPolynomialError(f"{pretty(term)} has degree {deg} in {eps}")
        if deg <= order:
            kept.append(term)
    return simplify(sp.Add(*kept))


# -- numeric evaluation ------------------------------------------------------


def _compile(e: Expr) -> Callable[[Mapping[str, complex]], complex]:
    if e.is_Number or e in (sp.pi, sp.E, sp.I) or isinstance(e, sp.NumberSymbol):
        val = complex(e)
        return lambda p: val
    if isinstance(e, sp.Symbol):
        name = e.name

        def sym(p):
            try:
                return complex(p[name])
            except KeyError:
                raise EvaluationError("unbound symbol", e) from None

        return sym
    if isinstance(e, sp.Add):
        parts = [_compile(a) for a in e.args]
        return lambda p: sum(f(p) for f in parts)
    if isinstance(e, sp.Mul):
        parts = [_compile(a) for a in e.args]

        def mul(p):
            acc = 1 + 0j
            for f in parts:
                acc *= f(p)
            return acc

        return mul
    if isinstance(e, sp.Pow):
        base = _compile(e.base)
        ex = e.exp
        if ex.is_Integer:
            n = int(ex)

            def ipow(p):
                b = base(p)
                if b == 0 and n < 0:
                    raise PoleError("division by zero", e)
                return b**n

            return ipow
        exf = _compile(ex)

        def cpow(p):
            b = base(p)
            x = exf(p)
            if b == 0:
                if x.real < 0:
                    raise PoleError("division by zero", e)
                return 0j
            if b.imag == 0 and b.real > 0 and x.imag == 0:
                return complex(b.real**x.real)
            return b**x

        return cpow
    if isinstance(e, sp.log):
        arg = _compile(e.args[0])

        def log(p):
            a = arg(p)
            if a.imag != 0 or a.real <= 0:
                raise BranchError("ln of non-positive or complex argument", e)
            return complex(math.log(a.real))

        return log
    simple = {sp.sin: cmath.sin, sp.cos: cmath.cos, sp.exp: cmath.exp}
    if e.func in simple:
        fn = simple[e.func]
        arg = _compile(e.args[0])
        return lambda p: fn(arg(p))
    raise EvaluationError("cannot evaluate node numerically", e)


def compile_numeric(e: Expr) -> Callable[[Mapping[str, complex]], complex]:
    """Compile ``e`` once into a closure evaluating it at name->value points."""
    return _compile(sp.sympify(e))


def eval_numeric(e: Expr, point: Binding) -> complex:
    p = {(k if isinstance(k, str) else k.name): v for k, v in point.items()}
    return compile_numeric(e)(p)


# -- equivalence -------------------------------------------------------------

SAMPLE_INTERVAL = (0.5, 1.5)


@dataclass(frozen=True)
class Equivalence:
    equal: bool
    probabilistic: bool = False
    max_difference: float = 0.0

    def __bool__(self) -> bool:
        return self.equal


def _generic_functions(e: Expr) -> Expr:
    """Replace undefined functions by a fixed, generic smooth stand-in."""
    for f in {a.func for a in e.atoms(sp.Function) if isinstance(a.func, sp.core.function.UndefinedFunction)}:
        t = sp.Dummy("t")
        e = e.replace(f, sp.Lambda(t, 1 + t / 3 + sp.exp(t) / 7))
    return e.doit() if e.has(sp.Derivative) else e


def equivalent(a, b, n_points: int = 64, seed: int = 0, atol: float = 1e-10) -> Equivalence:
    """Exact check on canonical forms, then a numeric fallback.

    The fallback samples every free symbol uniformly from ``SAMPLE_INTERVAL``;
    a positive answer from it is flagged ``probabilistic``.
    """
    diff = simplify(sp.sympify(a) - sp.sympify(b))
    if diff == 0:
        return Equivalence(True)
    diff = _generic_functions(diff)
    names = sorted(free_names(diff))
    f = compile_numeric(diff)
    rng = np.random.default_rng(seed)
    worst = 0.0
    good = 0
    for _ in range(n_points):
        point = {n: rng.uniform(*SAMPLE_INTERVAL) for n in names}
        try:
            val = abs(f(point))
        except EvaluationError:
            continue
        good += 1
        worst = max(worst, val)
    if good == 0:
        raise EvaluationError("every sample point is singular", diff)
    return Equivalence(worst < atol, probabilistic=worst < atol, max_difference=worst)


# -- restricted antiderivative -----------------------------------------------


def _linear_in(arg: Expr, var: sp.Symbol):
    slope = sp.diff(arg, var)
    if slope.has(var) or slope == 0:
        return None
    return slope


def _integrate_kernel(k: int, kind, arg: Expr, slope: Expr, var: sp.Symbol) -> Expr:
    """Antiderivative of var**k * kind(arg), arg = slope*var + phase."""
    if kind is sp.sin:
        base = -sp.cos(arg) / slope
        nxt = (-1, sp.cos)
    elif kind is sp.cos:
        base = sp.sin(arg) / slope
        nxt = (1, sp.sin)
    else:
        base = sp.exp(arg) / slope
        nxt = (1, sp.exp)
    if k == 0:
        return base
    sign, kind2 = nxt
    # integration by parts: x^k F - k * int x^(k-1) F, with F = base
    return var**k * base - k * sign / slope * _integrate_kernel(k - 1, kind2, arg, slope, var)


MAX_POWER = 3


def antiderivative(e: Expr, var: Union[str, sp.Symbol]) -> Expr:
    """Antiderivative with zero constant for sums of c*var^k*{1, sin, cos, exp}(linear)."""
    var = _as_symbol(var)
    e = fourier(sp.sympify(e))
    out = []
    for term in sp.Add.make_args(e):
        if not term.has(var):
            out.append(term * var)
            continue
        coeff, k, kern = [], 0, None
        for f in sp.Mul.make_args(term):
            base, ex = f.as_base_exp()
            if not f.has(var):
                coeff.append(f)
            elif base == var and ex.is_Integer and ex >= 0:
                k += int(ex)
            elif kern is None and isinstance(f, (sp.sin, sp.cos, sp.exp)):
                kern = f
            else:
                raise UnsupportedIntegrand(term, var)
        if k > MAX_POWER:
            raise UnsupportedIntegrand(term, var)
        c = sp.Mul(*coeff)
        if kern is None:
            out.append(c * var ** (k + 1) / (k + 1))
            continue
        slope = _linear_in(kern.args[0], var)
        if slope is None:
            raise UnsupportedIntegrand(term, var)
        out.append(c * _integrate_kernel(k, kern.func, kern.args[0], slope, var))
    return simplify(sp.Add(*out))
