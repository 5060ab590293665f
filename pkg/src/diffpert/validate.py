"""Numerical verification of the symbolic results.

Reference trajectories come from an adaptive Runge-Kutta 5(4) integrator
(scipy's ``RK45`` with dense output) or, for the stiff boundary-layer
problem, from the closed-form two-exponential solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp

from . import kernel as K
from .forms import KForm, ODESystem

__all__ = [
    "Trajectory",
    "StiffnessError",
    "Check",
    "ErrorRow",
    "ValidationReport",
    "bind",
    "integrate_reference",
    "characteristic_oracle",
    "curve_annihilation",
    "sample_asymptotic",
    "error_scaling",
    "fit_constants",
    "validate_boundary_layer",
    "validate_envelope",
    "validate_wkb_constant",
    "validate_wkb_phase",
]

MIN_TOL = 1e-13
IMAG_CUTOFF = 1e-10


class StiffnessError(RuntimeError):
    pass


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # (n, dim)
    derivatives: np.ndarray  # (n, dim), tangent d(state)/dt at each sample
    names: tuple[str, ...]
    method: str
    tol: float
    nsteps: int
    dense: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trajectory samples must be strictly increasing")

    def at(self, t) -> np.ndarray:
        """States at ``t`` (shape (len(t), dim)) from the dense interpolant."""
        if self.dense is None:
            raise ValueError("trajectory has no dense output")
        return np.asarray(self.dense(np.asarray(t, dtype=float))).T

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.names.index(name)]


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class ErrorRow:
    case: str
    epsilon: float
    x_or_t: float
    reference: float
    asymptotic: float
    abs_error: float


@dataclass
class ValidationReport:
    case: str
    checks: list[Check] = field(default_factory=list)
    error_table: list[tuple[float, float]] = field(default_factory=list)  # (eps, max error)
    exponent: float | None = None
    metrics: dict[str, float] = field(default_factory=dict)
    rows: list[ErrorRow] = field(default_factory=list)

    @property
    def max_abs_error(self) -> float:
        return max((e for _, e in self.error_table), default=0.0)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, value: float, threshold: float, passed: bool, detail: str = "") -> Check:
        c = Check(name, float(value), float(threshold), bool(passed), detail)
        self.checks.append(c)
        return c


# -- helpers -----------------------------------------------------------------


def bind(e, params: Mapping[str, object] | None = None, functions: Mapping[str, object] | None = None) -> sp.Expr:
    """Substitute parameter values and concrete functions of one variable."""
    e = sp.sympify(e)
    if functions:
        x = K.symbol("x")
        for name, body in functions.items():
            body = K.parse(body) if isinstance(body, str) else sp.sympify(body)
            e = e.replace(K.function(name), sp.Lambda(x, body))
        if e.has(sp.Derivative):
            e = e.doit()
    if params:
        e = e.subs({K.symbol(k): sp.sympify(v) for k, v in params.items()}, simultaneous=True)
    return e


def _lambdify(exprs: Sequence[sp.Expr], names: Sequence[str]):
    syms = [K.symbol(n) for n in names]
    leftover = set().union(*(sp.sympify(e).free_symbols for e in exprs)) - set(syms) if exprs else set()
    if leftover:
        raise K.EvaluationError(f"unbound symbols {sorted(s.name for s in leftover)}", exprs[0])
    return sp.lambdify(syms, list(exprs), modules="numpy")


# -- reference integration ---------------------------------------------------


def integrate_reference(
    sys: ODESystem,
    ic: Mapping[str, complex],
    span: tuple[float, float],
    tol: float = 1e-10,
    params: Mapping[str, object] | None = None,
    functions: Mapping[str, object] | None = None,
    max_step: float | None = None,
) -> Trajectory:
    """Integrate d(state)/ds = F(state) with RK45, local error held to ``tol``.

    scipy scales the error by atol + rtol*|y|, so splitting ``tol`` evenly
    keeps the per-step error below ``tol`` for states of order one.

    The chart usually contains the independent variable as a coordinate with
    right-hand side 1, in which case ``s`` and that coordinate coincide.
    """
    if tol < MIN_TOL:
        raise ValueError(f"tolerance {tol} is below {MIN_TOL}")
    names = sys.chart.names
    rhs = [bind(f, params, functions) for f in sys.rhs]
    fn = _lambdify(rhs, names)

    def f(_s, y):
        out = np.array(fn(*y), dtype=complex if np.iscomplexobj(y) else float)
        return np.broadcast_to(out, y.shape).copy() if out.shape != y.shape else out

    y0 = np.array([complex(ic[n]) for n in names])
    if np.all(y0.imag == 0):
        y0 = y0.real
    a, b = map(float, span)
    max_step = max_step if max_step is not None else (b - a) / 200
    res = solve_ivp(f, (a, b), y0, method="RK45", rtol=tol / 2, atol=tol / 2, dense_output=True, max_step=max_step)
    if res.status != 0:
        raise StiffnessError(
            f"reference integration failed ({res.message}); the problem is likely stiff, "
            "use the closed-form oracle for this case"
        )
    states = res.y.T
    derivs = np.array([f(s, y) for s, y in zip(res.t, states)])
    return Trajectory(res.t, states, derivs, tuple(names), "RK45", tol, len(res.t) - 1, res.sol)


def characteristic_oracle(
    coeffs: tuple[float, float, float],
    ic: tuple[float, float],
    grid: Sequence[float],
    names: tuple[str, str, str] = ("x", "y", "z"),
) -> Trajectory:
    """Exact solution of a2*y'' + a1*y' + a0*y = 0 from its characteristic roots."""
    a2, a1, a0 = map(float, coeffs)
    r1, r2 = np.roots([a2, a1, a0])
    if abs(r1 - r2) < 1e-12:
        raise ValueError("repeated characteristic root")
    M = np.array([[1.0, 1.0], [r1, r2]])
    c1, c2 = np.linalg.solve(M, np.array(ic, dtype=complex if np.iscomplexobj(r1) else float))
    x = np.asarray(grid, dtype=float)

    def at(xs):
        xs = np.atleast_1d(xs)
        e1, e2 = np.exp(r1 * xs), np.exp(r2 * xs)
        y = c1 * e1 + c2 * e2
        yp = c1 * r1 * e1 + c2 * r2 * e2
        return np.vstack([xs, np.real_if_close(y), np.real_if_close(yp)])

    def deriv(xs):
        e1, e2 = np.exp(r1 * xs), np.exp(r2 * xs)
        yp = c1 * r1 * e1 + c2 * r2 * e2
        ypp = c1 * r1**2 * e1 + c2 * r2**2 * e2
        return np.vstack([np.ones_like(xs), np.real_if_close(yp), np.real_if_close(ypp)]).T

    return Trajectory(x, at(x).T, deriv(x), tuple(names), "closed-form", 0.0, 0, at)


def curve_annihilation(
    traj: Trajectory,
    w: KForm,
    params: Mapping[str, object] | None = None,
    functions: Mapping[str, object] | None = None,
    relative: bool = False,
) -> float:
    """max over samples of |w(tangent)|; tangents come with the trajectory.

    With ``relative`` each sample is divided by sum_k |w_k * tangent_k|, which
    makes the number comparable across forms with large coefficients.
    """
    if tuple(w.chart.names) != tuple(traj.names):
        raise ValueError("form and trajectory live on different charts")
    comps = [bind(c, params, functions) for c in w.components]
    fn = _lambdify(comps, traj.names)
    worst = 0.0
    for state, tangent in zip(traj.states, traj.derivatives):
        with np.errstate(all="ignore"):
            vals = np.broadcast_to(np.array(fn(*state), dtype=complex), tangent.shape)
        if not np.all(np.isfinite(vals)):
            raise K.PoleError("form coefficient is singular on the trajectory", comps[0])
        value = abs(np.dot(vals, tangent))
        if relative:
            scale = float(np.sum(np.abs(vals * tangent)))
            value = value / scale if scale > 0 else 0.0
        worst = max(worst, value)
    return float(worst)


def sample_asymptotic(e, grid: Sequence[float], params: Mapping[str, object] | None = None, var: str = "x") -> np.ndarray:
    """Evaluate ``e`` on the grid; real output when every imaginary part is negligible."""
    f = K.compile_numeric(bind(e, params))
    vals = np.array([f({var: float(g)}) for g in grid], dtype=complex)
    if np.all(np.abs(vals.imag) < IMAG_CUTOFF):
        return vals.real
    return vals


def error_scaling(errors: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of log(error) against log(eps)."""
    if len(errors) < 3:
        raise ValueError("need at least three (eps, error) pairs")
    eps = np.array([e for e, _ in errors], dtype=float)
    err = np.array([v for _, v in errors], dtype=float)
    if np.any(err <= 0) or np.any(eps <= 0):
        raise ValueError("errors and eps values must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(eps), np.log(err), 1)
    return float(slope)


def fit_constants(
    e,
    var: str,
    constants: Sequence[str],
    conditions: Sequence[tuple[int, float, complex]],
    params: Mapping[str, object] | None = None,
) -> dict[str, complex]:
    """Solve for constants entering ``e`` linearly from (derivative order, point, value) conditions."""
    e = bind(e, params)
    v = K.symbol(var)
    cs = [K.symbol(c) for c in constants]
    A = np.zeros((len(conditions), len(cs)), dtype=complex)
    rhs = np.zeros(len(conditions), dtype=complex)
    for i, (order, point, value) in enumerate(conditions):
        d = sp.diff(e, v, order) if order else e
        d = d.subs(v, point)
        base = complex(K.eval_numeric(d.subs({c: 0 for c in cs}), {}))
        for j, c in enumerate(cs):
            A[i, j] = complex(K.eval_numeric(sp.diff(d, c).subs({c2: 0 for c2 in cs}), {}))
        rhs[i] = complex(value) - base
    sol = np.linalg.solve(A, rhs)
    return {c: complex(s) if abs(s.imag) > IMAG_CUTOFF else float(s.real) for c, s in zip(constants, sol)}


def _monotone_decreasing(table: Sequence[tuple[float, float]]) -> bool:
    ordered = sorted(table, key=lambda p: -p[0])
    return all(b[1] < a[1] for a, b in zip(ordered, ordered[1:]))


def _grid(span, n) -> np.ndarray:
    return np.linspace(float(span[0]), float(span[1]), int(n))


# -- per-case validators -------------------------------------------------------


def validate_boundary_layer(
    case: str,
    explicit,
    *,
    coeffs: tuple,
    ic: tuple[float, float],
    constants: Sequence[str],
    span=(0.0, 1.0),
    eps_ladder=(0.1, 0.05, 0.025),
    grid_points: int = 400,
    min_exponent: float = 0.8,
    var: str = "x",
    eps: str = "eps",
    forms: Sequence[KForm] = (),
) -> ValidationReport:
    """Compare the uniform approximation with the characteristic-root oracle.

    ``coeffs`` are the (a2, a1, a0) expressions of a2*y'' + a1*y' + a0*y = 0 in
    ``eps``; ``forms`` (optional, with ``eps`` free) are checked to annihilate
    the oracle trajectory at the smallest eps.
    """
    rep = ValidationReport(case)
    x = _grid(span, grid_points)
    for e in eps_ladder:
        p = {eps: e}
        co = tuple(float(K.eval_numeric(bind(c, p), {}).real) for c in coeffs)
        oracle = characteristic_oracle(co, ic, x)
        conds = [(0, float(span[0]), ic[0]), (1, float(span[0]), ic[1])]
        vals = fit_constants(explicit, var, constants, conds, p)
        approx = sample_asymptotic(explicit, x, {**p, **vals}, var)
        ref = oracle.column("y")
        err = np.abs(approx - ref)
        rep.error_table.append((e, float(err.max())))
        rep.rows.extend(ErrorRow(case, e, float(xi), float(r), float(np.real(a)), float(d)) for xi, r, a, d in zip(x, ref, approx, err))
    rep.exponent = error_scaling(rep.error_table)
    rep.add("error_decreases", rep.error_table[-1][1], rep.error_table[0][1], _monotone_decreasing(rep.error_table))
    rep.add("scaling_exponent", rep.exponent, min_exponent, rep.exponent >= min_exponent)
    if forms:
        e = min(eps_ladder)
        co = tuple(float(K.eval_numeric(bind(c, {eps: e}), {}).real) for c in coeffs)
        oracle = characteristic_oracle(co, ic, x)
        worst = max(curve_annihilation(oracle, w, {eps: e}) for w in forms)
        rep.metrics["declared_forms_annihilation"] = worst
        rep.add("declared_forms_annihilate_oracle", worst, 1e-8, worst <= 1e-8)
    return rep


def validate_envelope(
    case: str,
    law,
    sys: ODESystem,
    *,
    ic: Mapping[str, float],
    law_params: Mapping[str, object],
    window=(10.0, 100.0),
    eps_ladder=(0.1, 0.05, 0.025),
    check_eps: float = 0.05,
    rel_tol: float = 0.03,
    tol: float = 1e-10,
    grid_points: int = 400,
    var: str = "t",
    eps: str = "eps",
    coords: tuple[str, str] = ("y", "z"),
    theta=None,
    theta_params: Mapping[str, object] | None = None,
    theta_window=(0.0, 2 * np.pi),
) -> tuple[ValidationReport, dict[float, Trajectory]]:
    """Relative error of the amplitude law against the envelope sqrt(y^2 + y'^2).

    With ``theta`` (the first-order phase relation, right-hand side in
    ``t``, ``th0`` and the law parameters), the phase drift of the reference
    solution relative to its starting value is compared with the prediction.
    """
    rep = ValidationReport(case)
    x = _grid(window, grid_points)
    trajs = {}
    if check_eps not in eps_ladder:
        eps_ladder = tuple(eps_ladder) + (check_eps,)
    for e in eps_ladder:
        traj = integrate_reference(sys, ic, (0.0, float(window[1])), tol, {eps: e})
        trajs[e] = traj
        st = traj.at(x)
        i, j = traj.names.index(coords[0]), traj.names.index(coords[1])
        env = np.hypot(st[:, i], st[:, j])
        approx = sample_asymptotic(law, x, {**law_params, eps: e}, var)
        rel = np.abs(approx - env) / env
        rep.error_table.append((e, float(rel.max())))
        rep.rows.extend(ErrorRow(case, e, float(ti), float(r), float(a), float(abs(a - r))) for ti, r, a in zip(x, env, approx))
        if e == check_eps:
            rep.add("envelope_relative_error", rel.max(), rel_tol, rel.max() <= rel_tol, f"eps={e}, t in [{window[0]}, {window[1]}]")
        if theta is not None and e == check_eps:
            rep.metrics["theta_drift_error"] = _theta_error(traj, theta, {**(theta_params or {}), eps: e}, theta_window, coords, var)
    return rep, trajs


def _theta_error(traj, theta, params, window, coords, var) -> float:
    ts = np.linspace(window[0], window[1], 200)
    st = traj.at(ts)
    i, j = traj.names.index(coords[0]), traj.names.index(coords[1])
    # y = R cos(t + th), y' = -R sin(t + th)
    phase = np.unwrap(np.arctan2(-st[:, j], st[:, i])) - ts
    ref = phase - phase[0]
    th0 = K.symbol("th0")
    rhs = bind(theta, params)
    # th0 is fixed so that the prediction starts at the reference phase
    start = float(phase[0])
    g = K.compile_numeric(rhs - th0)
    th0_value = start - float(np.real(g({var: 0.0, "th0": start})))
    pred = sample_asymptotic(rhs.subs(th0, th0_value), ts, None, var)
    pred = np.real(pred) - float(np.real(pred[0]))
    return float(np.max(np.abs(pred - ref)))


def validate_wkb_constant(
    case: str,
    modes: Sequence,
    sys: ODESystem,
    *,
    exact,
    ic: tuple[float, float],
    span=(0.0, 1.0),
    eps_ladder=(0.1, 0.05, 0.025),
    tol: float = 1e-10,
    grid_points: int = 400,
    functions: Mapping[str, object] | None = None,
    var: str = "x",
    eps: str = "eps",
) -> tuple[ValidationReport, dict[float, Trajectory]]:
    """Combine the two modes to match real initial data and compare with ``exact``."""
    rep = ValidationReport(case)
    x = _grid(span, grid_points)
    combo = sp.Add(*[K.symbol(f"c{k}") * m for k, m in enumerate(modes)])
    names = [f"c{k}" for k in range(len(modes))]
    trajs = {}
    worst_ref = 0.0
    for e in eps_ladder:
        p = {eps: e}
        vals = fit_constants(combo, var, names, [(0, float(span[0]), ic[0]), (1, float(span[0]), ic[1])], p)
        approx = np.real(sample_asymptotic(combo, x, {**p, **vals}, var))
        target = np.real(sample_asymptotic(exact, x, p, var))
        err = np.abs(approx - target)
        rep.error_table.append((e, float(err.max())))
        rep.rows.extend(ErrorRow(case, e, float(xi), float(r), float(a), float(d)) for xi, r, a, d in zip(x, target, approx, err))
        y0 = {var: float(span[0]), "y": ic[0], "z": ic[1]}
        traj = integrate_reference(sys, y0, span, tol, p, functions)
        trajs[e] = traj
        worst_ref = max(worst_ref, float(np.max(np.abs(traj.at(x)[:, traj.names.index("y")] - target))))
    worst = rep.max_abs_error
    rep.metrics["reference_vs_exact"] = worst_ref
    rep.add("reconstruction_matches_exact", worst, 10 * tol, worst <= 10 * tol)
    return rep, trajs


def validate_wkb_phase(
    case: str,
    mode,
    sys: ODESystem,
    *,
    span=(0.0, 1.0),
    eps_ladder=(0.1, 0.05, 0.025),
    tol: float = 1e-10,
    grid_points: int = 400,
    functions: Mapping[str, object] | None = None,
    var: str = "x",
    eps: str = "eps",
) -> tuple[ValidationReport, dict[float, Trajectory]]:
    """Phase of a single complex mode against reference integration.

    The reference starts from the mode's own value and slope at the left end.
    Only the phase is compared: the first-order relation carries no amplitude
    variation.
    """
    rep = ValidationReport(case)
    x = _grid(span, grid_points)
    v = K.symbol(var)
    trajs = {}
    for e in eps_ladder:
        p = {eps: e}
        m = bind(mode, p, functions)
        y0 = complex(K.eval_numeric(m.subs(v, span[0]), {}))
        yp0 = complex(K.eval_numeric(sp.diff(m, v).subs(v, span[0]), {}))
        traj = integrate_reference(sys, {var: float(span[0]), "y": y0, "z": yp0}, span, tol, p, functions)
        trajs[e] = traj
        ref = np.unwrap(np.angle(traj.at(x)[:, traj.names.index("y")]))
        approx = np.unwrap(np.angle(np.asarray(sample_asymptotic(m, x, None, var), dtype=complex)))
        err = np.abs(approx - ref)
        rep.error_table.append((e, float(err.max())))
        rep.rows.extend(ErrorRow(case, e, float(xi), float(r), float(a), float(d)) for xi, r, a, d in zip(x, ref, approx, err))
    rep.exponent = error_scaling(rep.error_table)
    rep.add("phase_error_decreases", rep.error_table[-1][1], rep.error_table[0][1], _monotone_decreasing(rep.error_table))
    return rep, trajs
