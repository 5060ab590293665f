"""Exact sparse linear systems over the rationals.

Rows are kept integral and primitive (content divided out) throughout the
elimination, so no fractions appear until back substitution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from itertools import combinations
from math import comb, gcd, lcm
from typing import Mapping, Sequence

CONST = -1  # key of the constant term in a row


class InconsistentSystem(ValueError):
    def __init__(self, origins: frozenset[int]):
        super().__init__(f"inconsistent linear system (equations {sorted(origins)})")
        self.origins = origins


@dataclass
class _Row:
    coeffs: dict[int, int]
    origins: frozenset[int] = field(default_factory=frozenset)


def _primitive(coeffs: dict[int, int]) -> dict[int, int]:
    coeffs = {k: v for k, v in coeffs.items() if v}
    if not coeffs:
        return coeffs
    g = reduce(gcd, (abs(v) for v in coeffs.values()))
    lead = min(k for k in coeffs if k != CONST) if any(k != CONST for k in coeffs) else CONST
    if coeffs[lead] < 0:
        g = -g
    return {k: v // g for k, v in coeffs.items()}


def _integral(row: Mapping[int, Fraction]) -> dict[int, int]:
    den = reduce(lcm, (Fraction(v).denominator for v in row.values()), 1)
    return _primitive({k: int(Fraction(v) * den) for k, v in row.items()})


@dataclass
class Reduced:
    pivots: dict[int, _Row]  # pivot column -> row
    nvars: int

    @property
    def free(self) -> list[int]:
        return [j for j in range(self.nvars) if j not in self.pivots]

    def solution(self, free_values: Mapping[int, Fraction] | None = None) -> list[Fraction]:
        free_values = free_values or {}
        x = [Fraction(0)] * self.nvars
        for j, v in free_values.items():
            x[j] = Fraction(v)
        for col, row in self.pivots.items():
            acc = Fraction(-row.coeffs.get(CONST, 0))
            for k, v in row.coeffs.items():
                if k not in (col, CONST):
                    acc -= v * x[k]
            x[col] = acc / row.coeffs[col]
        return x


def reduce_system(equations: Sequence[Mapping[int, Fraction]], nvars: int) -> Reduced:
    """Fraction-free Gauss-Jordan elimination.

    Each equation maps unknown index -> coefficient, with ``CONST`` holding
    the constant term (equation reads sum a_j x_j + const = 0). Columns are
    pivoted in increasing index order, so later unknowns become free first.
    """
    rows = [_Row(_integral(eq), frozenset([i])) for i, eq in enumerate(equations)]
    rows = [r for r in rows if r.coeffs]
    pivots: dict[int, _Row] = {}
    for col in range(nvars):
        piv = next((r for r in rows if r.coeffs.get(col)), None)
        if piv is None:
            continue
        rows.remove(piv)
        p = piv.coeffs[col]
        for target in list(pivots.values()) + rows:
            a = target.coeffs.get(col)
            if not a:
                continue
            new = {k: p * target.coeffs.get(k, 0) - a * piv.coeffs.get(k, 0) for k in set(target.coeffs) | set(piv.coeffs)}
            target.coeffs = _primitive(new)
            target.origins = target.origins | piv.origins
        pivots[col] = piv
        rows = [r for r in rows if r.coeffs]
    for r in rows:
        if r.coeffs:  # only a nonzero constant can remain
            raise InconsistentSystem(r.origins)
    return Reduced(pivots, nvars)


def _consistent_on(equations, support: Sequence[int]) -> list[Fraction] | None:
    allowed = set(support) | {CONST}
    index = {j: i for i, j in enumerate(support)}
    restricted = []
    for eq in equations:
        if any(v and k not in allowed for k, v in eq.items()):
            # unknowns outside the support are fixed at zero
            eq = {k: v for k, v in eq.items() if k in allowed}
        restricted.append({(index[k] if k != CONST else CONST): v for k, v in eq.items()})
    try:
        red = reduce_system(restricted, len(support))
    except InconsistentSystem:
        return None
    return red.solution()


def solve_min_support(equations: Sequence[Mapping[int, Fraction]], nvars: int, budget: int = 20000) -> tuple[list[Fraction], bool]:
    """Solve exactly, preferring the solution with fewest nonzero unknowns.

    Returns ``(x, exhaustive)``. The basic solution (free unknowns at zero) is
    the fallback; subsets of smaller size are searched in lexicographic order
    while the number of candidate supports stays within ``budget``.
    """
    red = reduce_system(equations, nvars)
    x = red.solution()
    support = [j for j, v in enumerate(x) if v != 0]
    if not red.free:
        return x, True
    active = sorted({k for eq in equations for k, v in eq.items() if v and k != CONST})
    size = len(support)
    if sum(comb(len(active), k) for k in range(size)) > budget:
        return x, False
    for k in range(size):
        for cand in combinations(active, k):
            sol = _consistent_on(equations, cand)
            if sol is None:
                continue
            full = [Fraction(0)] * nvars
            for j, v in zip(cand, sol):
                full[j] = v
            return full, True
    return x, True
