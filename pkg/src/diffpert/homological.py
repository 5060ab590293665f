"""First-order homological equation  w1 + L_X w0 = sum_j lam_ij w0_j.

The generator X is sought as a linear combination of ansatz functions with
unknown rational coefficients. Two reductions to exact linear algebra are
available:

* ``"annihilator"`` (default): the right-hand side lies in span(w0) exactly
  when it vanishes on every vector field in the common kernel of the w0. The
  multipliers drop out and are recovered afterwards with ``in_span``.
* ``"multipliers"``: multipliers get their own ansatz and every component of
  the residual must vanish.

Either way each condition is cleared of denominators, expanded into
monomials over the kernel's atoms (trig already in Fourier form) and every
monomial coefficient is equated to zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

from . import kernel as K
from .forms import (
    Chart,
    KForm,
    VectorField,
    annihilator,
    in_span,
    interior_product,
    lie_derivative,
    lie_derivative_leibniz,
)
from .linsolve import CONST, InconsistentSystem, solve_min_support

__all__ = [
    "PerturbedSystem",
    "Ansatz",
    "HomologicalSolution",
    "AnsatzInsufficient",
    "DegenerateAnsatz",
    "NonlinearAnsatz",
    "build_residual",
    "solve",
    "extend_ansatz",
    "residual_norm_numeric",
    "term_key",
]

COND_THRESHOLD = 1e8


class AnsatzInsufficient(ValueError):
    def __init__(self, residual_terms: list[str]):
        super().__init__("ansatz insufficient; irreducible residual terms: " + ", ".join(residual_terms))
        self.residual_terms = residual_terms


class DegenerateAnsatz(ValueError):
    pass


class NonlinearAnsatz(ValueError):
    pass


@dataclass(frozen=True)
class PerturbedSystem:
    """Zero-order basis w0 and perturbation w1.

    Convention: along perturbed solutions w0 = eps * w1, i.e. the perturbed
    forms read ``w0 - eps*w1``. ``eps`` may be any expression (``eps^2`` for
    WKB problems).
    """

    chart: Chart
    zero_order: tuple
    perturbation: tuple
    eps: sp.Expr = field(default_factory=lambda: K.symbol("eps"))

    def __post_init__(self):
        object.__setattr__(self, "zero_order", tuple(self.zero_order))
        object.__setattr__(self, "perturbation", tuple(self.perturbation))
        if len(self.zero_order) != len(self.perturbation):
            raise ValueError("zero-order and perturbation bases differ in length")
        for w in self.zero_order + self.perturbation:
            if w.chart != self.chart or w.degree != 1:
                raise ValueError("all basis elements must be 1-forms on the system chart")

    def perturbed_forms(self, eps_value=None) -> list[KForm]:
        e = self.eps if eps_value is None else eps_value
        return [w0 - w1 * e for w0, w1 in zip(self.zero_order, self.perturbation)]

    def coefficient_functions(self) -> list[sp.Expr]:
        out = []
        for w in self.zero_order + self.perturbation:
            for _, c in w.terms:
                out.extend(split_terms(c))
        return _unique(t for t in out if not t.is_number)


def term_key(e: sp.Expr):
    """Deterministic ordering of ansatz functions: simpler first, then by text."""
    return (sp.count_ops(e), len(K.pretty(e)), K.pretty(e))


def _unique(terms: Iterable[sp.Expr]) -> list[sp.Expr]:
    seen = {}
    for t in terms:
        seen.setdefault(t, None)
    return sorted(seen, key=term_key)


def split_terms(e: sp.Expr) -> list[sp.Expr]:
    """Canonical additive terms of ``e`` with their rational coefficients removed."""
    out = []
    for t in sp.Add.make_args(K.simplify(e)):
        c, rest = t.as_coeff_Mul()
        out.append(sp.Integer(1) if t.is_number else rest)
    return out


@dataclass(frozen=True)
class Ansatz:
    terms: tuple = ()
    components: tuple | None = None  # coordinate names X may use; None = all
    multipliers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(_unique(K.simplify(t) for t in self.terms)))
        object.__setattr__(self, "multipliers", tuple(_unique(K.simplify(t) for t in self.multipliers)))
        if self.components is not None:
            object.__setattr__(self, "components", tuple(self.components))

    def mask(self, chart: Chart) -> tuple[bool, ...]:
        if self.components is None:
            return (True,) * chart.dim
        unknown = set(self.components) - set(chart.names)
        if unknown:
            raise ValueError(f"ansatz components {sorted(unknown)} are not chart coordinates")
        return tuple(n in self.components for n in chart.names)

    def check_independent(self, box: Mapping[str, tuple[float, float]] | None = None, seed: int = 0):
        """Numerical linear-independence check of both term lists."""
        for name, terms in (("vector-field", self.terms), ("multiplier", self.multipliers)):
            if len(terms) < 2:
                continue
            cond = _condition_number(terms, box or {}, seed)
            if not cond < COND_THRESHOLD:
                raise DegenerateAnsatz(f"{name} ansatz functions are linearly dependent (condition {cond:.3g})")


def _condition_number(terms, box, seed) -> float:
    funcs = [K.compile_numeric(K._generic_functions(t)) for t in terms]
    names = sorted(set().union(*(K.free_names(K._generic_functions(t)) for t in terms)))
    rng = np.random.default_rng(seed)
    rows = []
    attempts = 0
    while len(rows) < 3 * len(terms) and attempts < 30 * len(terms):
        attempts += 1
        p = {n: rng.uniform(*box.get(n, K.SAMPLE_INTERVAL)) for n in names}
        try:
            rows.append([f(p) for f in funcs])
        except K.EvaluationError:
            continue
    m = np.array(rows, dtype=complex)
    if m.shape[0] < len(terms):
        return float("inf")
    m = m / np.maximum(np.linalg.norm(m, axis=0), 1e-300)
    s = np.linalg.svd(m, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


@dataclass(frozen=True)
class HomologicalSolution:
    X: VectorField
    multipliers: tuple  # multipliers[i][j] = lam_ij
    diagnostics: dict = field(default_factory=dict, compare=False)

    def residual(self, sys: PerturbedSystem) -> list[KForm]:
        return build_residual(sys, self.X, self.multipliers)


def build_residual(sys: PerturbedSystem, X: VectorField, lam: Sequence[Sequence], unknowns: Iterable[sp.Symbol] = ()) -> list[KForm]:
    """Residual forms w1_i + L_X w0_i - sum_j lam_ij w0_j.

    With ``unknowns`` given, every coefficient is checked to be affine in them.
    """
    unknowns = list(unknowns)
    out = []
    for i, (w0, w1) in enumerate(zip(sys.zero_order, sys.perturbation)):
        r = w1 + lie_derivative(X, w0)
        for j, b in enumerate(sys.zero_order):
            lam_ij = sp.sympify(lam[i][j]) if lam else sp.Integer(0)
            if lam_ij != 0:
                r = r - b * lam_ij
        out.append(r)
    if unknowns:
        for r in out:
            for _, c in r.terms:
                _check_affine(c, unknowns)
    return out


def _check_affine(c: sp.Expr, unknowns: Sequence[sp.Symbol]):
    for a in unknowns:
        da = sp.diff(c, a)
        if any(da.has(b) for b in unknowns):
            raise NonlinearAnsatz(f"residual coefficient is nonlinear in unknowns: {K.pretty(c)}")


# -- reduction to a linear system --------------------------------------------


def _collect(expr: sp.Expr, unknowns: Sequence[sp.Symbol], equations: dict):
    """Split a condition (affine in unknowns) into per-monomial linear equations.

    Rows are keyed by (condition number, monomial).
    """
    tag = len({k[0] for k in equations})
    index = {u: i for i, u in enumerate(unknowns)}
    num, _ = sp.fraction(sp.together(expr))
    num = K.fourier(sp.expand(num))
    for term in sp.Add.make_args(sp.expand(num)):
        if term == 0:
            continue
        indep, dep = term.as_independent(*unknowns, as_Add=False)
        if dep == 1:
            col = CONST
        elif dep in index:
            col = index[dep]
        else:
            raise NonlinearAnsatz(f"condition is not affine in the unknowns: {K.pretty(term)}")
        coeff, mono = indep.as_coeff_Mul()
        if not coeff.is_Rational:
            raise NonlinearAnsatz(f"non-rational coefficient {coeff} in {K.pretty(term)}")
        if mono.is_number and mono != 1:
            raise NonlinearAnsatz(f"irrational constant {K.pretty(mono)} in a condition")
        row = equations.setdefault((tag, mono), {})
        row[col] = row.get(col, Fraction(0)) + Fraction(int(coeff.p), int(coeff.q))


def _scalar(w: KForm) -> sp.Expr:
    return w.scalar if w.degree == 0 else sp.Integer(0)


def solve(sys: PerturbedSystem, ansatz: Ansatz, *, budget: int = 20000) -> HomologicalSolution:
    """Solve the homological equation within the span of the ansatz.

    Unknowns are ordered by coordinate (chart order) and then by
    :func:`term_key` of the ansatz function, so the result does not depend on
    the order in which terms were supplied. Among all solutions the one with
    fewest nonzero coefficients is returned when the search fits ``budget``,
    otherwise the basic solution with free unknowns at zero.
    """
    chart = sys.chart
    mask = ansatz.mask(chart)
    pairs = [(k, b) for k in range(chart.dim) if mask[k] for b in ansatz.terms]
    cs = [sp.Dummy(f"c{n}") for n in range(len(pairs))]
    route = "multipliers" if ansatz.multipliers else "annihilator"
    n = len(sys.zero_order)
    lam_pairs = [(i, j, b) for i in range(n) for j in range(n) for b in ansatz.multipliers]
    ls = [sp.Dummy(f"l{n}") for n in range(len(lam_pairs))]
    unknowns = cs + ls

    equations: dict = {}
    generators = [VectorField(chart, tuple(b if k == kk else 0 for kk in range(chart.dim))) for k, b in pairs]
    if route == "annihilator":
        kernel = annihilator(list(sys.zero_order))
        for w0, w1 in zip(sys.zero_order, sys.perturbation):
            lies = [lie_derivative(Y, w0) for Y in generators]
            for V in kernel:
                expr = _scalar(interior_product(V, w1))
                expr += sum((c * _scalar(interior_product(V, L)) for c, L in zip(cs, lies)), sp.Integer(0))
                _collect(expr, unknowns, equations)
    else:
        for i, (w0, w1) in enumerate(zip(sys.zero_order, sys.perturbation)):
            lies = [lie_derivative(Y, w0) for Y in generators]
            for k in range(chart.dim):
                expr = w1.coeff(k) + sum((c * L.coeff(k) for c, L in zip(cs, lies)), sp.Integer(0))
                for l, (ii, j, b) in zip(ls, lam_pairs):
                    if ii == i:
                        expr -= l * b * sys.zero_order[j].coeff(k)
                _collect(expr, unknowns, equations)

    monomials = list(equations)
    rows = [equations[m] for m in monomials]
    try:
        values, exhaustive = solve_min_support(rows, len(unknowns), budget=budget)
    except InconsistentSystem as exc:
        residual = []
        for o in sorted(exc.origins):
            const = rows[o].get(CONST, 0)
            if const:
                residual.append(K.pretty(sp.Rational(const.numerator, const.denominator) * monomials[o][1]))
        raise AnsatzInsufficient(residual or [K.pretty(monomials[o][1]) for o in sorted(exc.origins)]) from None

    comps = [sp.Integer(0)] * chart.dim
    for (k, b), v in zip(pairs, values[: len(cs)]):
        if v:
            comps[k] += sp.Rational(v.numerator, v.denominator) * b
    X = VectorField(chart, tuple(comps))

    lam = []
    for w0, w1 in zip(sys.zero_order, sys.perturbation):
        coeffs = in_span(w1 + lie_derivative(X, w0), list(sys.zero_order))
        if coeffs is None:
            raise RuntimeError("internal error: solved generator leaves a residual outside span(w0)")
        lam.append(tuple(coeffs))

    diagnostics = {
        "route": route,
        "ansatz_size": len(ansatz.terms),
        "unknowns": len(unknowns),
        "equations": len(rows),
        "nonzero": sum(1 for v in values if v),
        "minimal_support_exhaustive": exhaustive,
    }
    return HomologicalSolution(X, tuple(lam), diagnostics)


def extend_ansatz(a: Ansatz, sys: PerturbedSystem, depth: int, independent: str) -> Ansatz:
    """Close the ansatz ``depth`` times under products with the system's
    coefficient functions, antiderivatives in ``independent`` and partial
    derivatives. Terms are deduplicated by canonical form.
    """
    if not 0 <= depth <= 3:
        raise ValueError("depth must be between 0 and 3")
    coeffs = sys.coefficient_functions()
    current = list(a.terms)
    for _ in range(depth):
        new = list(current)
        for b in current:
            for c in coeffs:
                new.extend(split_terms(b * c))
            try:
                new.extend(split_terms(K.antiderivative(b, independent)))
            except K.UnsupportedIntegrand as exc:
                warnings.warn(f"ansatz extension skipped: {exc}", stacklevel=2)
            for s in sys.chart.symbols:
                new.extend(split_terms(sp.diff(b, s)))
        current = _unique(t for t in new if t != 0)
    return Ansatz(tuple(current), a.components, a.multipliers)


def residual_norm_numeric(
    sol: HomologicalSolution,
    sys: PerturbedSystem,
    n_points: int = 100,
    box: Mapping[str, tuple[float, float]] | None = None,
    functions: Mapping[str, str] | None = None,
    seed: int = 0,
) -> float:
    """Max |residual coefficient| over random points in ``box``.

    The Lie derivative is recomputed with the Leibniz rule and compared against
    the multiplier combination without any symbolic cancellation between them.
    """
    box = box or {}
    functions = functions or {}

    def concrete(e):
        for name, val in functions.items():
            lam = sp.Lambda(K.symbol("x"), K.parse(val, canonical=False))
            e = e.replace(K.function(name), lam)
        return e.doit() if e.has(sp.Derivative) else e

    checks = []
    for i, (w0, w1) in enumerate(zip(sys.zero_order, sys.perturbation)):
        lhs = w1 + lie_derivative_leibniz(sol.X, w0)
        for k in range(sys.chart.dim):
            rhs = sum((sp.sympify(sol.multipliers[i][j]) * b.coeff(k) for j, b in enumerate(sys.zero_order)), sp.Integer(0))
            checks.append((K.compile_numeric(concrete(lhs.coeff(k))), K.compile_numeric(concrete(rhs))))
    rng = np.random.default_rng(seed)
    worst = 0.0
    good = 0
    names = sys.chart.names
    for _ in range(n_points):
        p = {n: rng.uniform(*box.get(n, K.SAMPLE_INTERVAL)) for n in names}
        try:
            vals = [abs(f(p) - g(p)) for f, g in checks]
        except K.EvaluationError:
            continue
        good += 1
        worst = max([worst, *vals])
    if good == 0:
        raise K.EvaluationError("every sample point is singular", sp.Integer(0))
    return worst
