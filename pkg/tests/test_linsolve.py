from fractions import Fraction

import numpy as np
import pytest

from diffpert.linsolve import CONST, InconsistentSystem, reduce_system, solve_min_support


def residuals(eqs, x):
    return [sum(Fraction(v) * (1 if k == CONST else x[k]) for k, v in eq.items()) for eq in eqs]


def test_unique_solution():
    # x0 + x1 = 3, x0 - x1 = 1
    eqs = [{0: 1, 1: 1, CONST: -3}, {0: 1, 1: -1, CONST: -1}]
    x, exhaustive = solve_min_support(eqs, 2)
    assert x == [2, 1] and exhaustive


def test_fractions_stay_exact():
    eqs = [{0: Fraction(1, 3), CONST: Fraction(-1, 7)}]
    assert solve_min_support(eqs, 1)[0] == [Fraction(3, 7)]


def test_inconsistent_system_reports_origins():
    eqs = [{0: 1, CONST: -1}, {1: 1}, {0: 2, CONST: -3}]
    with pytest.raises(InconsistentSystem) as info:
        reduce_system(eqs, 2)
    assert info.value.origins == frozenset({0, 2})


def test_minimal_support_prefers_sparse_solution():
    # x0 + x1 = 1 and x1 + x2 = 1: basic solution uses x0, x1 ... sparsest is x1 = 1
    eqs = [{0: 1, 1: 1, CONST: -1}, {1: 1, 2: 1, CONST: -1}]
    x, exhaustive = solve_min_support(eqs, 3)
    assert x == [0, 1, 0] and exhaustive


def test_budget_falls_back_to_basic_solution():
    eqs = [{0: 1, 1: 1, CONST: -1}, {1: 1, 2: 1, CONST: -1}]
    x, exhaustive = solve_min_support(eqs, 3, budget=0)
    assert not exhaustive
    assert all(r == 0 for r in residuals(eqs, x))


def test_random_systems_are_solved_exactly():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        truth = [Fraction(int(rng.integers(-4, 5)), int(rng.integers(1, 4))) for _ in range(n)]
        eqs = []
        for _ in range(n + 2):
            eq = {j: Fraction(int(rng.integers(-3, 4))) for j in range(n)}
            eq[CONST] = -sum(eq[j] * truth[j] for j in range(n))
            eqs.append(eq)
        x, _ = solve_min_support(eqs, n)
        assert all(r == 0 for r in residuals(eqs, x))
