"""Differential forms of degree 0-2 on a coordinate chart.

Coefficients are stored on strictly increasing index tuples, so antisymmetry
is structural. Every constructor canonicalizes its coefficients and drops
zeros, which makes ``==`` an exact test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence, Union

import sympy as sp

from .kernel import _FUNCTIONS, Expr, ParseError, _Parser, function, pretty, simplify, symbol

__all__ = [
    "Chart",
    "KForm",
    "VectorField",
    "ODESystem",
    "DegenerateBasis",
    "exterior_derivative",
    "wedge",
    "interior_product",
    "lie_derivative",
    "lie_derivative_leibniz",
    "ode_to_forms",
    "in_span",
    "annihilator",
    "pullback",
    "parse_form",
    "form_matrix",
]


class DegenerateBasis(ValueError):
    """The basis forms are linearly dependent at generic points."""


@dataclass(frozen=True)
class Chart:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate coordinate names in {self.names}")

    @property
    def symbols(self) -> tuple[sp.Symbol, ...]:
        return tuple(symbol(n) for n in self.names)

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __iter__(self):
        return iter(self.names)


def _clean(coeffs: Mapping[tuple[int, ...], Expr], canonical: bool) -> tuple:
    items = []
    for idx, c in coeffs.items():
        c = simplify(c) if canonical else sp.sympify(c)
        if c != 0:
            items.append((tuple(idx), c))
    return tuple(sorted(items))


@dataclass(frozen=True)
class KForm:
    chart: Chart
    degree: int
    terms: tuple = field(default=())

    @classmethod
    def from_dict(cls, chart: Chart, degree: int, coeffs: Mapping, canonical: bool = True) -> "KForm":
        if degree not in (0, 1, 2):
            raise ValueError("only 0-, 1- and 2-forms are supported")
        for idx in coeffs:
            if len(idx) != degree or list(idx) != sorted(set(idx)):
                raise ValueError(f"index {idx} is not strictly increasing of length {degree}")
        return cls(chart, degree, _clean(coeffs, canonical))

    @classmethod
    def zero(cls, chart: Chart, degree: int) -> "KForm":
        return cls(chart, degree, ())

    @classmethod
    def function(cls, chart: Chart, f) -> "KForm":
        return cls.from_dict(chart, 0, {(): sp.sympify(f)})

    @classmethod
    def one_form(cls, chart: Chart, components: Sequence) -> "KForm":
        return cls.from_dict(chart, 1, {(k,): sp.sympify(c) for k, c in enumerate(components)})

    @classmethod
    def basis(cls, chart: Chart, name: str) -> "KForm":
        return cls.from_dict(chart, 1, {(chart.index(name),): sp.Integer(1)})

    @property
    def coeffs(self) -> dict[tuple[int, ...], Expr]:
        return dict(self.terms)

    def coeff(self, idx) -> Expr:
        if isinstance(idx, int):
            idx = (idx,)
        return self.coeffs.get(tuple(idx), sp.Integer(0))

    @property
    def components(self) -> list[Expr]:
        """Dense coefficient list of a 1-form, one entry per coordinate."""
        if self.degree != 1:
            raise ValueError("components are defined for 1-forms only")
        return [self.coeff(k) for k in range(self.chart.dim)]

    @property
    def scalar(self) -> Expr:
        if self.degree != 0:
            raise ValueError("not a 0-form")
        return self.coeff(())

    def is_zero(self) -> bool:
        return not self.terms

    def map(self, fn, canonical: bool = True) -> "KForm":
        return KForm.from_dict(self.chart, self.degree, {i: fn(c) for i, c in self.terms}, canonical)

    def _check(self, other: "KForm"):
        if self.chart != other.chart:
            raise ValueError("forms live on different charts")
        if self.degree != other.degree:
            raise ValueError("degree mismatch")

    def __add__(self, other: "KForm") -> "KForm":
        self._check(other)
        out = dict(self.terms)
        for idx, c in other.terms:
            out[idx] = out.get(idx, 0) + c
        return KForm.from_dict(self.chart, self.degree, out)

    def __neg__(self) -> "KForm":
        return self.map(lambda c: -c, canonical=False)

    def __sub__(self, other: "KForm") -> "KForm":
        return self + (-other)

    def __mul__(self, f) -> "KForm":
        f = sp.sympify(f)
        return self.map(lambda c: c * f)

    __rmul__ = __mul__

    def __str__(self) -> str:
        return format_form(self)


def format_form(w: KForm) -> str:
    if w.is_zero():
        return "0"
    if w.degree == 0:
        return pretty(w.scalar)
    parts = []
    for idx, c in w.terms:
        basis = "∧".join("d" + w.chart.names[i] for i in idx)
        if c == 1:
            parts.append(basis)
        elif c == -1:
            parts.append("-" + basis)
        else:
            parts.append(f"({pretty(c)})*{basis}")
    return " + ".join(parts).replace("+ -", "- ")


@dataclass(frozen=True)
class VectorField:
    chart: Chart
    components: tuple

    def __post_init__(self):
        comps = tuple(simplify(c) for c in self.components)
        if len(comps) != self.chart.dim:
            raise ValueError("one component per coordinate is required")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_mapping(cls, chart: Chart, comps: Mapping[str, Expr]) -> "VectorField":
        return cls(chart, tuple(sp.sympify(comps.get(n, 0)) for n in chart.names))

    def __getitem__(self, name: str) -> Expr:
        return self.components[self.chart.index(name)]

    def apply(self, f: Expr) -> Expr:
        """Directional derivative X(f)."""
        return simplify(sum(c * sp.diff(f, s) for c, s in zip(self.components, self.chart.symbols)))

    def __str__(self) -> str:
        parts = [f"({pretty(c)})*d/d{n}" for c, n in zip(self.components, self.chart.names) if c != 0]
        return " + ".join(parts) if parts else "0"


@dataclass(frozen=True)
class ODESystem:
    """Autonomous system dx_i/ds = F_i(x) on a chart."""

    chart: Chart
    rhs: tuple
    parameter: str = "s"

    def __post_init__(self):
        rhs = tuple(simplify(f) for f in self.rhs)
        if len(rhs) != self.chart.dim:
            raise ValueError("one right-hand side per coordinate is required")
        object.__setattr__(self, "rhs", rhs)


# -- operators ---------------------------------------------------------------


def exterior_derivative(w: KForm) -> KForm:
    if w.degree >= 2:
        raise ValueError("exterior derivative of a 2-form would be a 3-form (unsupported)")
    syms = w.chart.symbols
    out: dict[tuple[int, ...], Expr] = {}
    for idx, c in w.terms:
        for k, s in enumerate(syms):
            if k in idx:
                continue
            dc = sp.diff(c, s)
            if dc == 0:
                continue
            new = (k,) + idx
            order = sorted(new)
            sign = _perm_sign(new, order)
            key = tuple(order)
            out[key] = out.get(key, 0) + sign * dc
    return KForm.from_dict(w.chart, w.degree + 1, out)


def _perm_sign(seq: Sequence[int], order: Sequence[int]) -> int:
    pos = [order.index(v) for v in seq]
    sign = 1
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            if pos[i] > pos[j]:
                sign = -sign
    return sign


def wedge(a: KForm, b: KForm) -> KForm:
    if a.chart != b.chart:
        raise ValueError("forms live on different charts")
    if a.degree + b.degree > 2:
        raise ValueError("wedge product would exceed degree 2")
    out: dict[tuple[int, ...], Expr] = {}
    for ia, ca in a.terms:
        for ib, cb in b.terms:
            seq = ia + ib
            if len(set(seq)) < len(seq):
                continue
            order = sorted(seq)
            key = tuple(order)
            out[key] = out.get(key, 0) + _perm_sign(seq, order) * ca * cb
    return KForm.from_dict(a.chart, a.degree + b.degree, out)


def interior_product(X: VectorField, w: KForm) -> KForm:
    if w.degree == 0:
        raise ValueError("interior product of a 0-form is undefined")
    if X.chart != w.chart:
        raise ValueError("vector field and form live on different charts")
    out: dict[tuple[int, ...], Expr] = {}
    for idx, c in w.terms:
        for pos, k in enumerate(idx):
            rest = idx[:pos] + idx[pos + 1:]
            out[rest] = out.get(rest, 0) + (-1) ** pos * X.components[k] * c
    return KForm.from_dict(w.chart, w.degree - 1, out)


def lie_derivative(X: VectorField, w: KForm) -> KForm:
    """Cartan formula: L_X w = i_X dw + d(i_X w)."""
    if w.degree == 0:
        return KForm.function(w.chart, X.apply(w.scalar))
    if w.degree > 1:
        raise ValueError("Lie derivative implemented for degree <= 1")
    return interior_product(X, exterior_derivative(w)) + exterior_derivative(interior_product(X, w))


def lie_derivative_leibniz(X: VectorField, w: KForm) -> KForm:
    """Independent route: L_X(sum f_k dx_k) = sum (X f_k) dx_k + f_k d(X_k)."""
    if w.degree == 0:
        return KForm.function(w.chart, X.apply(w.scalar))
    out: dict[tuple[int, ...], Expr] = {}
    syms = w.chart.symbols
    for (k,), f in w.terms:
        out[(k,)] = out.get((k,), 0) + sum(X.components[j] * sp.diff(f, s) for j, s in enumerate(syms))
        for j, s in enumerate(syms):
            out[(j,)] = out.get((j,), 0) + f * sp.diff(X.components[k], s)
    return KForm.from_dict(w.chart, 1, out)


def ode_to_forms(sys: ODESystem) -> list[KForm]:
    """The forms F_i dx_j - F_j dx_i (i < j) annihilated by solution curves."""
    n = sys.chart.dim
    if n < 2:
        raise ValueError("need at least two coordinates")
    out = []
    for i, j in combinations(range(n), 2):
        out.append(KForm.from_dict(sys.chart, 1, {(j,): sys.rhs[i], (i,): -sys.rhs[j]}))
    return out


def form_matrix(basis: Sequence[KForm]) -> list[list[Expr]]:
    """Rows are forms, columns are coordinates."""
    return [b.components for b in basis]


# -- symbolic linear algebra over the expression field -----------------------


def _row_reduce(rows: list[list[Expr]], ncols: int) -> tuple[list[list[Expr]], list[int]]:
    """Fraction-free (cross-multiplying) Gauss-Jordan on expression rows.

    Only the first ``ncols`` columns are eligible as pivots.
    """
    rows = [[simplify(c) for c in r] for r in rows]
    pivots: list[int] = []
    r = 0
    for col in range(ncols):
        piv = next((i for i in range(r, len(rows)) if rows[i][col] != 0), None)
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        p = rows[r][col]
        for i in range(len(rows)):
            if i == r or rows[i][col] == 0:
                continue
            a = rows[i][col]
            rows[i] = [simplify(p * x - a * y) for x, y in zip(rows[i], rows[r])]
        pivots.append(col)
        r += 1
        if r == len(rows):
            break
    return rows, pivots


def in_span(w: KForm, basis: Sequence[KForm]) -> list[Expr] | None:
    """Coefficients c with w = sum c_j basis_j, or None when w is not in the span.

    Raises DegenerateBasis if the basis has symbolic rank below its length.
    """
    m = len(basis)
    n = w.chart.dim
    if m == 0:
        return [] if w.is_zero() else None
    for b in basis:
        if b.chart != w.chart or b.degree != 1:
            raise ValueError("in_span expects 1-forms on a common chart")
    cols = [b.components for b in basis]
    target = w.components
    rows = [[cols[j][k] for j in range(m)] + [target[k]] for k in range(n)]
    red, pivots = _row_reduce(rows, m)
    if len(pivots) < m:
        raise DegenerateBasis("basis forms are linearly dependent")
    if any(red[i][m] != 0 for i in range(len(pivots), n)):
        return None
    coeffs: list[Expr] = [sp.Integer(0)] * m
    for i, col in enumerate(pivots):
        coeffs[col] = simplify(red[i][m] / red[i][col])
    check = w
    for c, b in zip(coeffs, basis):
        check = check - b * c
    return coeffs if check.is_zero() else None


def annihilator(basis: Sequence[KForm]) -> list[VectorField]:
    """Vector fields spanning the common kernel of the basis forms.

    A 1-form lies in span(basis) exactly when it vanishes on every returned field.
    """
    if not basis:
        raise ValueError("empty basis")
    chart = basis[0].chart
    n = chart.dim
    red, pivots = _row_reduce(form_matrix(basis), n)
    if len(pivots) < len(basis):
        raise DegenerateBasis("basis forms are linearly dependent")
    fields = []
    for free in (k for k in range(n) if k not in pivots):
        comps: list[Expr] = [sp.Integer(0)] * n
        comps[free] = sp.Integer(1)
        for i, col in enumerate(pivots):
            comps[col] = -red[i][free] / red[i][col]
        fields.append(VectorField(chart, tuple(comps)))
    return fields


def pullback(w: KForm, new_chart: Chart, old_in_new: Mapping[str, Expr]) -> KForm:
    """Pull a 1-form back along old coordinates expressed in new ones.

    Coordinates missing from ``old_in_new`` must be shared by both charts.
    """
    if w.degree != 1:
        raise ValueError("pullback implemented for 1-forms")
    subs = {}
    for name in w.chart.names:
        if name in old_in_new:
            subs[symbol(name)] = sp.sympify(old_in_new[name])
        elif name not in new_chart.names:
            raise ValueError(f"coordinate {name} has no expression in the new chart")
    comps: list[Expr] = [sp.Integer(0)] * new_chart.dim
    for (k,), c in w.terms:
        name = w.chart.names[k]
        c_new = c.subs(subs, simultaneous=True)
        g = subs.get(symbol(name), symbol(name))
        for j, s in enumerate(new_chart.symbols):
            comps[j] += c_new * sp.diff(g, s)
    return KForm.one_form(new_chart, comps)


def parse_form(text: str, chart: Chart, functions: Iterable[str] = ()) -> KForm:
    """Parse a 1-form such as ``"dy - z*dx"`` or ``"d(y^2) + eps*dz"``.

    ``d<coord>`` is the coordinate differential and ``d(expr)`` the exterior
    derivative of a function; the result must be linear in differentials.
    """
    diffs = {n: sp.Dummy("d" + n) for n in chart.names}

    def d(arg):
        return sum(sp.diff(arg, s) * diffs[n] for n, s in zip(chart.names, chart.symbols))

    table = {**_FUNCTIONS, "d": d, **{fn: function(fn) for fn in functions}}
    parser = _Parser(text, table)
    original_atom = parser.atom

    def atom():
        kind, val, pos = parser.peek()
        if kind == "name" and val.startswith("d") and val[1:] in diffs and parser.tokens[parser.i + 1][1] != "(":
            parser.take()
            return diffs[val[1:]]
        return original_atom()

    parser.atom = atom
    expr = sp.expand(parser.parse())
    dsyms = list(diffs.values())
    comps = []
    for n in chart.names:
        c = sp.diff(expr, diffs[n])
        if any(c.has(ds) for ds in dsyms):
            raise ParseError("form is not linear in differentials", text, 0)
        comps.append(c)
    rest = sp.expand(expr - sum(c * diffs[n] for c, n in zip(comps, chart.names)))
    if rest != 0:
        raise ParseError("form has a term without a differential", text, 0)
    return KForm.one_form(chart, comps)
