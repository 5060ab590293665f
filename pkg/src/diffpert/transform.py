"""Push zero-order invariants through the near-identity map 1 + eps*L.

A zero-order solution curve is a level set ``f = 0`` of invariants such as
``x - x0``. With the sign convention of :class:`PerturbedSystem` the
perturbed curve is the level set of ``f + eps * X(f)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import sympy as sp

from . import kernel as K
from .forms import VectorField
from .homological import HomologicalSolution

__all__ = [
    "Relation",
    "Invariant",
    "AsymptoticSolution",
    "NotSolvable",
    "UnsupportedResonance",
    "push_function",
    "isolate",
    "transform_invariant",
    "secular_limit",
    "solve_linear_first_order",
    "linear_first_order_form",
    "name_amplitudes",
    "amplitude_law",
    "WKBResult",
    "wkb_phase",
]


class NotSolvable(ValueError):
    pass


class UnsupportedResonance(ValueError):
    pass


@dataclass(frozen=True)
class Relation:
    lhs: sp.Expr
    rhs: sp.Expr

    def __str__(self) -> str:
        return f"{K.pretty(self.lhs)} = {K.pretty(self.rhs)}"

    def residual(self) -> sp.Expr:
        return K.simplify(self.lhs - self.rhs)


@dataclass(frozen=True)
class Invariant:
    """A zero-order invariant and what to do with its pushed relation.

    ``constant`` is the integration constant in ``expr``; ``define`` names a
    new constant as a function of it (e.g. ``A = exp(x0/eps)``); ``solve_for``
    is the symbol the final relation is solved for.
    """

    expr: sp.Expr
    constant: str | None = None
    define: tuple[str, sp.Expr] | None = None
    solve_for: str | None = None


@dataclass
class AsymptoticSolution:
    relations: list[Relation]
    explicit: sp.Expr | None = None
    notes: list[str] = field(default_factory=list)


def push_function(X: VectorField, eps, f, first_order: Mapping[str, sp.Expr] | None = None) -> sp.Expr:
    """f + eps * X(f); ``first_order`` substitutions apply inside the O(eps) term only."""
    eps = K.symbol(eps) if isinstance(eps, str) else sp.sympify(eps)
    correction = X.apply(f)
    if first_order:
        correction = correction.subs({K.symbol(k): v for k, v in first_order.items()}, simultaneous=True)
    return K.simplify(f + eps * correction)


def isolate(expr: sp.Expr, target) -> list[sp.Expr]:
    """Solve ``expr = 0`` for ``target``.

    Handles affine occurrence, pure quadratics ``a*t^2 + b`` (two branches) and
    a single occurrence under +, *, powers, exp and ln. All symbols are
    positive, so the positive real root is used for other powers.
    """
    t = K.symbol(target) if isinstance(target, str) else target
    expr = K.simplify(expr)
    if not expr.has(t):
        raise NotSolvable(f"{t} does not occur in {K.pretty(expr)}")
    a = K.simplify(sp.diff(expr, t))
    if not a.has(t):
        return [K.simplify(-(expr - a * t) / a)]
    a2 = K.simplify(sp.diff(expr, t, 2) / 2)
    if not a2.has(t) and K.simplify(sp.diff(expr, t).subs(t, 0)) == 0:
        rest = K.simplify(expr - a2 * t**2)
        if not rest.has(t):
            root = K.simplify(sp.sqrt(sp.factor(K.simplify(-rest / a2))))
            return [root, K.simplify(-root)]
    return [K.simplify(_peel(sp.Integer(0), expr, t))]


def _peel(lhs: sp.Expr, rhs: sp.Expr, t: sp.Symbol) -> sp.Expr:
    """Invert ``rhs(t) = lhs`` when t occurs in exactly one branch at each level."""
    while rhs != t:
        if isinstance(rhs, (sp.Add, sp.Mul)):
            inner = [a for a in rhs.args if a.has(t)]
            if len(inner) != 1:
                raise NotSolvable(f"{t} occurs more than once in {K.pretty(rhs)}")
            others = rhs.func(*[a for a in rhs.args if not a.has(t)])
            lhs = lhs - others if isinstance(rhs, sp.Add) else lhs / others
            rhs = inner[0]
        elif isinstance(rhs, sp.Pow) and not rhs.exp.has(t):
            lhs = lhs ** (1 / rhs.exp)
            rhs = rhs.base
        elif isinstance(rhs, sp.exp):
            lhs = sp.log(lhs)
            rhs = rhs.args[0]
        elif isinstance(rhs, sp.log):
            lhs = sp.exp(lhs)
            rhs = rhs.args[0]
        else:
            raise NotSolvable(f"cannot invert {K.pretty(rhs)} for {t}")
    return lhs


def transform_invariant(
    sol: HomologicalSolution,
    eps,
    invariants: Sequence[Invariant],
    substitutions: Mapping[str, sp.Expr] | None = None,
    first_order: Mapping[str, sp.Expr] | None = None,
) -> AsymptoticSolution:
    """Push each invariant and rewrite the resulting relation.

    A relation that cannot be solved as requested is kept implicit (``g = 0``)
    and a note records why.
    """
    relations = []
    notes = []
    subs = {K.symbol(k): v for k, v in (substitutions or {}).items()}
    for inv in invariants:
        g = push_function(sol.X, eps, inv.expr, first_order)
        if subs:
            g = K.simplify(g.subs(subs, simultaneous=True))
        notes.append(f"pushed {K.pretty(inv.expr)}")
        try:
            rel = _finish(g, inv)
        except NotSolvable as exc:
            notes.append(f"kept implicit: {exc}")
            rel = Relation(g, sp.Integer(0))
        relations.append(rel)
    return AsymptoticSolution(relations, notes=notes)


def _finish(g: sp.Expr, inv: Invariant) -> Relation:
    if inv.define is not None:
        if inv.constant is None:
            raise NotSolvable("a constant definition needs the original constant")
        c = K.symbol(inv.constant)
        (value,) = isolate(g, c)
        name, definition = inv.define
        new = K.symbol(name)
        defined = K.simplify(sp.expand(sp.sympify(definition).subs(c, value)))
        g = K.simplify(new - defined)
        if inv.solve_for is None:
            return Relation(new, defined)
    if inv.solve_for is not None:
        roots = isolate(g, inv.solve_for)
        return Relation(K.symbol(inv.solve_for), roots[0])
    if inv.constant is not None:
        (value,) = isolate(g, inv.constant)
        return Relation(K.symbol(inv.constant), value)
    return Relation(g, sp.Integer(0))


def secular_limit(e: sp.Expr, var) -> sp.Expr:
    """Drop additive terms carrying sin/cos of arguments that grow with ``var``."""
    v = K.symbol(var) if isinstance(var, str) else var
    kept = []
    for term in sp.Add.make_args(sp.expand(e)):
        if any(f.args[0].has(v) for f in term.atoms(sp.sin, sp.cos)):
            continue
        kept.append(term)
    return K.simplify(sp.Add(*kept))


def linear_first_order_form(rhs: sp.Expr, y, indep) -> tuple[sp.Expr, sp.Expr]:
    """Write ``y' = rhs`` as ``y' + coeff*y = forcing``."""
    y = K.symbol(y) if isinstance(y, str) else y
    coeff = K.simplify(-sp.diff(rhs, y))
    if coeff.has(y):
        raise NotSolvable(f"{K.pretty(rhs)} is not linear in {y}")
    forcing = K.simplify(rhs + coeff * y)
    return coeff, forcing


def _exp_terms(forcing: sp.Expr, x: sp.Symbol) -> list[tuple[sp.Expr, sp.Expr, sp.Expr]]:
    """Split a sum of exponential modes into (amplitude, rate, exp(rate*x)).

    Works on any arrangement of the sum, including a single canonical
    fraction: numerator terms are divided by the denominator one at a time
    and grouped by their logarithmic derivative.
    """
    num, den = sp.fraction(sp.together(forcing))
    modes: dict[sp.Expr, sp.Expr] = {}
    for part in sp.Add.make_args(sp.expand(num)):
        term = part / den
        rate = K.simplify(sp.diff(term, x) / term)
        if rate.has(x):
            raise NotSolvable(f"term {K.pretty(term)} is not an exponential in {x}")
        modes[rate] = modes.get(rate, sp.Integer(0)) + term * sp.exp(-rate * x)
    out = []
    for rate in sorted(modes, key=K.pretty):
        amp = K.simplify(modes[rate])
        if amp.has(x):
            raise NotSolvable(f"amplitude {K.pretty(amp)} depends on {x}")
        if amp != 0:
            out.append((amp, rate, sp.exp(K.simplify(rate * x))))
    return out


def solve_linear_first_order(coeff, forcing, indep, constant: str = "B") -> sp.Expr:
    """General solution of y' + coeff*y = forcing with exponential forcing."""
    x = K.symbol(indep) if isinstance(indep, str) else indep
    coeff = sp.sympify(coeff)
    if coeff.has(x):
        raise NotSolvable("coefficient must not depend on the independent variable")
    # modes are summed without a common denominator so each stays readable
    terms = []
    if K.simplify(forcing) != 0:
        for amp, rate, expo in _exp_terms(forcing, x):
            denom = K.simplify(rate + coeff)
            if denom == 0:
                raise UnsupportedResonance(f"forcing rate {K.pretty(rate)} is resonant with the homogeneous solution")
            terms.append(K.simplify(amp / denom) * expo)
    terms.append(K.symbol(constant) * sp.exp(K.simplify(-coeff * x)))
    return sp.Add(*terms)


def name_amplitudes(expr: sp.Expr, indep, names: Mapping[str, str]) -> tuple[sp.Expr, dict[str, sp.Expr]]:
    """Replace the amplitude of each exponential mode by a named constant.

    ``names`` maps a forcing constant (e.g. ``A``) to the new name (``Abar``);
    any mode whose amplitude contains that constant gets renamed.
    """
    x = K.symbol(indep) if isinstance(indep, str) else indep
    out = sp.Integer(0)
    defs = {}
    for amp, rate, expo in _exp_terms(expr, x):
        amp = K.simplify(amp)
        for old, new in names.items():
            if amp.has(K.symbol(old)) and new not in defs:
                defs[new] = amp
                amp = K.symbol(new)
                break
        out += amp * expo
    return out, defs


def amplitude_law(
    relation: Relation,
    change: tuple[str, sp.Expr],
    target: str,
    constants: Mapping[str, sp.Expr] | None = None,
    reference: str | None = None,
) -> sp.Expr:
    """Back-substitute a declared change of variables and solve for ``target``.

    ``relation`` reads ``u = P``; ``change`` is ``(u, g(target))``. With
    ``reference`` set, the result is written as
    ``reference * (reference^2 * P)^(-1/2)`` whenever that form is equivalent.
    """
    name, g = change
    P = sp.sympify(relation.rhs)
    if constants:
        P = P.subs({K.symbol(k): v for k, v in constants.items()}, simultaneous=True)
    P = K.simplify(P)
    roots = isolate(sp.sympify(g) - P, target)
    R = roots[0]
    if reference is not None:
        ref = K.symbol(reference)
        candidate = ref * sp.Pow(sp.expand(ref**2 * P), sp.Rational(-1, 2))
        if K.equivalent(candidate, R).equal:
            return candidate
    return R


@dataclass
class WKBResult:
    relations: list[Relation]
    modes: list[sp.Expr]


def wkb_phase(
    sol: HomologicalSolution,
    omega: sp.Expr | None,
    *,
    eps_parameter,
    invariant: sp.Expr,
    back: Mapping[str, sp.Expr],
    derivative: tuple[str, str],
    y: str = "y",
    x: str = "x",
    function: str = "Omega",
) -> WKBResult:
    """First-order relations y' = k(x) y and their exponential modes.

    ``invariant`` is pushed with parameter ``eps_parameter``, expressed in the
    original variables via ``back`` (e.g. u = y^2, v = z^2), and the
    derivative symbol is isolated with ``derivative = (z, "y'")``. With
    ``omega`` given, the generic frequency function is replaced by it and the
    phase is integrated in closed form; otherwise, or when integration is not
    supported, the phase is left as an unevaluated integral.
    """
    X = sol.X
    fn = K.function(function)
    xs = K.symbol(x)
    if omega is not None:
        lam = sp.Lambda(xs, sp.sympify(omega))
        X = VectorField(X.chart, tuple(c.replace(fn, lam).doit() for c in X.components))
    g = push_function(X, eps_parameter, invariant)
    g = g.subs({K.symbol(k): v for k, v in back.items()}, simultaneous=True)
    zname, ypname = derivative
    g = K.simplify(g.subs(K.symbol(zname), K.symbol(ypname)))
    ys = K.symbol(y)
    relations, modes = [], []
    for branch in isolate(g, ypname):
        k = K.simplify(branch / ys)
        if k.has(ys):
            raise NotSolvable(f"relation {K.pretty(branch)} is not linear in {y}")
        relations.append(Relation(K.symbol(ypname), branch))
        try:
            phase = K.antiderivative(k, xs)
        except K.UnsupportedIntegrand:
            target = sp.sympify(omega) if omega is not None else fn(xs)
            scale = K.simplify(k / target)
            phase = scale * sp.Integral(target, xs)
        modes.append(sp.exp(phase))
    return WKBResult(relations, modes)
