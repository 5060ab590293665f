"""One pass/fail test per acceptance criterion."""

import time

import numpy as np
import pytest
import sympy as sp

from diffpert import kernel as K
from diffpert.forms import (
    Chart,
    KForm,
    ODESystem,
    VectorField,
    exterior_derivative,
    interior_product,
    lie_derivative,
    lie_derivative_leibniz,
    ode_to_forms,
    parse_form,
    wedge,
)
from diffpert.homological import Ansatz, PerturbedSystem, residual_norm_numeric, solve
from diffpert.kernel import parse, simplify
from diffpert.pipeline import run_builtin
from diffpert.problem import BUILTINS, builtin
from diffpert.validate import (
    characteristic_oracle,
    curve_annihilation,
    error_scaling,
    fit_constants,
    integrate_reference,
    sample_asymptotic,
)

from gen import CHART, random_expr, random_field, random_one_form, rngs

LADDER = (0.1, 0.05, 0.025)


@pytest.fixture(scope="module")
def reports():
    return {name: run_builtin(name) for name in BUILTINS}


def vector(chart, mapping):
    return VectorField.from_mapping(chart, {k: parse(v, ["Omega"]) for k, v in mapping.items()})


# 1


def test_c1_boundary_layer_lie_derivative():
    start = time.perf_counter()
    C = Chart(("x", "y", "z"))
    sys = PerturbedSystem(
        C,
        [parse_form("dy - z*dx", C), parse_form("dy + y*dx", C)],
        [KForm.zero(C, 1), parse_form("-dz", C)],
    )
    terms = tuple(parse(t) for t in ("ln(y+z)", "y*ln(y+z)", "z", "y"))
    sol = solve(sys, Ansatz(terms, ("x", "y")))
    elapsed = time.perf_counter() - start
    assert sol.X == vector(C, {"x": "ln(y+z)", "y": "z - y*ln(y+z)"})
    assert elapsed < 5.0


# 2


def test_c2_boundary_layer_uniform_solution(reports):
    r = reports["boundary_layer"]
    lhs, rhs = r.explicit.split(" = ")
    assert lhs == "y"
    y = parse(rhs)
    assert y == parse("Abar*exp(-x/eps) + B*exp(-x)")
    grid = np.linspace(0.0, 1.0, 400)
    table = []
    for eps in LADDER:
        c = fit_constants(y, "x", ["Abar", "B"], [(0, 0.0, 0.0), (1, 0.0, 1.0)], {"eps": eps})
        approx = sample_asymptotic(y, grid, {**c, "eps": eps})
        exact = characteristic_oracle((eps, 1.0, 1.0), (0.0, 1.0), grid).column("y")
        table.append((eps, float(np.max(np.abs(approx - exact)))))
    errors = [e for _, e in table]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert error_scaling(table) >= 0.8
    assert r.check("scaling_exponent").passed and r.check("error_decreases").passed


# 3


def test_c3_multiple_scales_lie_derivative(solutions):
    # compared term by term with the reference generator
    p = builtin("nonlinear_damping")
    assert p.ansatz.depth <= 2
    X = solutions["nonlinear_damping"].X
    C = X.chart
    reference = vector(C, {
        "u": "-(3/4*t - 1/2*sin(2*(t+th)) + 1/16*sin(4*(t+th)))",
        "th": "1/u*(1/8*cos(2*(t+th)) - 1/32*cos(4*(t+th)))",
    })
    assert X["t"] == reference["t"]
    assert X["u"] == reference["u"]
    assert X["th"] == reference["th"]


# 4


def test_c4_amplitude_law(reports):
    r = reports["nonlinear_damping"]
    lhs, rhs = r.explicit.split(" = ")
    law = parse(rhs)
    assert lhs == "R"
    assert K.equivalent(law, parse("R0/sqrt(1 + 3/4*R0^2*eps*t)"))
    ode = ODESystem(Chart(("t", "y", "z")), (1, parse("z"), parse("-y - eps*z^3")))
    traj = integrate_reference(ode, {"t": 0, "y": 1, "z": 0}, (0.0, 100.0), 1e-10, {"eps": 0.05})
    ts = np.linspace(10.0, 100.0, 400)
    st = traj.at(ts)
    env = np.hypot(st[:, 1], st[:, 2])
    approx = sample_asymptotic(law, ts, {"R0": 1, "eps": 0.05}, "t")
    assert np.max(np.abs(approx - env) / env) <= 0.03


# 5


def test_c5_wkb(solutions, reports):
    X = solutions["wkb"].X
    assert X == vector(X.chart, {"x": "1/Omega(x)^2*sqrt(v/u)", "u": "1/Omega(x)^2*v"})
    r = reports["wkb"]
    tol = r.validation["tol"]
    c = r.check("reconstruction_matches_exact")
    assert c.threshold == pytest.approx(10 * tol) and c.passed
    x, eps = K.symbol("x"), K.symbol("eps")
    want = {simplify(sp.exp(s * sp.I * (x + x**2 / 2) / eps)) for s in (1, -1)}
    assert {parse(m) for m in r.modes["1+x"]} == want
    assert r.validation["eps_ladder"] == list(LADDER)
    errors = [e for _, e in sorted(r.validation["error_table"], key=lambda p: -p[0])]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert r.check("phase_error_decreases").passed


# 6


def test_c6_homological_residual(solutions, systems):
    for name in BUILTINS:
        sol, sys = solutions[name], systems[name]
        assert all(w.is_zero() for w in sol.residual(sys)), name
        p = builtin(name)
        box = {k: tuple(v) for k, v in p.sampling.box.items()}
        assert residual_norm_numeric(sol, sys, 100, box, p.sampling.functions) <= 1e-9, name


# 7


def test_c7_exterior_calculus_properties():
    for rng in rngs(200, 101):
        f = KForm.function(CHART, random_expr(rng))
        assert exterior_derivative(exterior_derivative(f)).is_zero()
    for rng in rngs(200, 103):
        X, w = random_field(rng), random_one_form(rng)
        assert (lie_derivative(X, w) - lie_derivative_leibniz(X, w)).is_zero()
    for rng in rngs(200, 104):
        X = random_field(rng)
        a, b = random_one_form(rng), random_one_form(rng)
        lhs = interior_product(X, wedge(a, b))
        rhs = b * interior_product(X, a).scalar - a * interior_product(X, b).scalar
        assert (lhs - rhs).is_zero()


# 8


def test_c8_curve_annihilation(reports):
    tol = 1e-10
    ode = ODESystem(Chart(("t", "y", "z")), (1, parse("z"), parse("-y - eps*z^3")))
    for eps in LADDER:
        traj = integrate_reference(ode, {"t": 0, "y": 1, "z": 0}, (0.0, 100.0), tol, {"eps": eps})
        for w in ode_to_forms(ode):
            assert curve_annihilation(traj, w, {"eps": eps}) <= 10 * tol
    for name in ("nonlinear_damping", "wkb"):
        c = reports[name].check("ode_forms_annihilate_reference")
        assert c.threshold == pytest.approx(10 * reports[name].validation["tol"]) and c.passed, name
