"""Problem file -> forms -> homological solve -> transform -> validation -> report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import sympy as sp

from . import kernel as K
from .forms import Chart, ODESystem, KForm, ode_to_forms, parse_form, pullback
from .homological import Ansatz, HomologicalSolution, PerturbedSystem, extend_ansatz, residual_norm_numeric, solve
from .problem import ProblemFile, builtin, load
from .transform import (
    Invariant,
    Relation,
    amplitude_law,
    linear_first_order_form,
    name_amplitudes,
    secular_limit,
    solve_linear_first_order,
    transform_invariant,
    wkb_phase,
)
from .validate import (
    Check,
    ErrorRow,
    ValidationReport,
    curve_annihilation,
    validate_boundary_layer,
    validate_envelope,
    validate_wkb_constant,
    validate_wkb_phase,
)

REPORT_SCHEMA = "v1"
REPORT_FIELDS = (
    "schema", "case", "passed", "system", "solution", "relations", "explicit",
    "modes", "notes", "checks", "validation",
)
CSV_COLUMNS = ("case", "epsilon", "x_or_t", "reference", "asymptotic", "abs_error")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class Report:
    case: str
    system: dict
    solution: dict
    relations: list[str] = field(default_factory=list)
    explicit: str | None = None
    modes: dict[str, list[str]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    validation: dict | None = None
    rows: list[ErrorRow] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "case": self.case,
            "passed": self.passed,
            "system": self.system,
            "solution": self.solution,
            "relations": list(self.relations),
            "explicit": self.explicit,
            "modes": dict(self.modes),
            "notes": list(self.notes),
            "checks": [vars(c).copy() for c in self.checks],
            "validation": self.validation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        unknown = set(d) - set(REPORT_FIELDS)
        if unknown:
            raise ValueError(f"report: unknown field(s) {sorted(unknown)}")
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"report: unsupported schema {d.get('schema')!r}")
        checks = []
        for c in d.get("checks", []):
            extra = set(c) - {"name", "value", "threshold", "passed", "detail"}
            if extra:
                raise ValueError(f"report check: unknown field(s) {sorted(extra)}")
            checks.append(Check(**c))
        r = cls(
            d["case"], d["system"], d["solution"], list(d.get("relations", [])), d.get("explicit"),
            dict(d.get("modes", {})), list(d.get("notes", [])), checks, d.get("validation"),
        )
        if r.passed != d.get("passed"):
            raise ValueError("report: stored pass flag disagrees with the checks")
        return r

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def solution_text(self) -> str:
        lines = [f"case: {self.case}", ""]
        lines.append("generator:")
        for name, comp in self.solution["X"].items():
            lines.append(f"  X[{name}] = {comp}")
        lines.append("multipliers:")
        for row in self.solution["multipliers"]:
            lines.append("  [" + ", ".join(row) + "]")
        if self.relations:
            lines += ["", "relations:"] + [f"  {r}" for r in self.relations]
        if self.explicit is not None:
            lines += ["", f"solution: {self.explicit}"]
        for label, ms in self.modes.items():
            lines += ["", f"modes for Omega = {label}:"] + [f"  {m}" for m in ms]
        if self.checks:
            lines += ["", "checks:"]
            for c in self.checks:
                flag = "PASS" if c.passed else "FAIL"
                lines.append(f"  {flag} {c.name}: {c.value:.6g} (threshold {c.threshold:.6g})")
        return "\n".join(lines) + "\n"

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.case, repr(r.epsilon), repr(r.x_or_t), repr(r.reference), repr(r.asymptotic), repr(r.abs_error)])
        return buf.getvalue()


def emit_report(r: Report, directory) -> list[Path]:
    """Write report.json, solution.txt and (with validation rows) errors.csv."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = [d / "report.json", d / "solution.txt"]
    written[0].write_text(r.to_json())
    written[1].write_text(r.solution_text())
    if r.rows:
        p = d / "errors.csv"
        p.write_text(r.csv_text())
        written.append(p)
    return written


def load_report(directory) -> Report:
    return Report.from_dict(json.loads((Path(directory) / "report.json").read_text()))


# -- stages ------------------------------------------------------------------


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as exc:  # surfaced with the stage name
                detail = getattr(exc, "subexpr", None)
                msg = f"{type(exc).__name__}: {exc}"
                if detail is not None:
                    msg += f" (at {K.pretty(detail)})"
                raise PipelineError(name, msg) from exc

        return inner

    return wrap


def _expr(text, p: ProblemFile) -> sp.Expr:
    return K.parse(str(text), p.functions)


@_stage("forms")
def build_system(p: ProblemFile) -> tuple[PerturbedSystem, list[KForm]]:
    """The system to solve, plus the declared perturbed forms in the original chart."""
    chart = Chart(tuple(p.chart))
    w0 = [parse_form(t, chart, p.functions) for t in p.zero_order]
    w1 = [parse_form(t, chart, p.functions) for t in p.perturbation]
    order = _expr(p.order_parameter or p.epsilon, p)
    declared = PerturbedSystem(chart, w0, w1, order).perturbed_forms()
    if p.change_of_variables:
        new = Chart(tuple(p.change_of_variables.chart))
        m = {k: _expr(v, p) for k, v in p.change_of_variables.map.items()}
        w0 = [pullback(w, new, m) for w in w0]
        w1 = [pullback(w, new, m) for w in w1]
        chart = new
    return PerturbedSystem(chart, w0, w1, order), declared


@_stage("homological")
def solve_system(p: ProblemFile, sys: PerturbedSystem) -> HomologicalSolution:
    a = Ansatz(
        tuple(_expr(t, p) for t in p.ansatz.terms),
        None if p.ansatz.components is None else tuple(p.ansatz.components),
        tuple(_expr(t, p) for t in p.ansatz.multipliers),
    )
    box = {k: tuple(v) for k, v in p.sampling.box.items()}
    a.check_independent(box)
    if p.ansatz.depth:
        a = extend_ansatz(a, sys, p.ansatz.depth, p.independent)
    return solve(sys, a, budget=p.ansatz.budget)


def _residual_checks(p: ProblemFile, sys: PerturbedSystem, sol: HomologicalSolution) -> list[Check]:
    sym = all(w.is_zero() for w in sol.residual(sys))
    box = {k: tuple(v) for k, v in p.sampling.box.items()}
    num = residual_norm_numeric(sol, sys, p.sampling.points, box, p.sampling.functions or None)
    return [
        Check("homological_residual_symbolic", 0.0 if sym else 1.0, 0.0, sym),
        Check("homological_residual_numeric", num, p.sampling.tolerance, num <= p.sampling.tolerance),
    ]


@dataclass
class _Transformed:
    relations: list[Relation]
    explicit: sp.Expr | None = None
    explicit_target: str | None = None
    modes: dict[str, list[sp.Expr]] = field(default_factory=dict)
    mode_relations: dict[str, list[Relation]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


@_stage("transform")
def transform(p: ProblemFile, sys: PerturbedSystem, sol: HomologicalSolution) -> _Transformed:
    invs = []
    for spec in p.invariants:
        define = None
        if spec.define:
            define = (spec.define["name"], _expr(spec.define["value"], p))
        invs.append(Invariant(_expr(spec.expr, p), spec.constant, define, spec.solve_for))
    subs = {k: _expr(v, p) for k, v in p.substitutions.items()}
    first = {k: _expr(v, p) for k, v in p.first_order.items()}
    asym = transform_invariant(sol, sys.eps, invs, subs, first)
    out = _Transformed(list(asym.relations), notes=list(asym.notes))
    opts = p.postprocess.options
    kind = p.postprocess.kind
    if kind == "linear_first_order":
        idx = int(opts.get("relation", 0))
        y = str(opts.get("y", "y"))
        rel = out.relations[idx]
        coeff, forcing = linear_first_order_form(rel.rhs, y, p.independent)
        out.relations[idx] = Relation(K.symbol(y + "'") + coeff * K.symbol(y), forcing)
        explicit = solve_linear_first_order(coeff, forcing, p.independent, str(opts.get("constant", "B")))
        explicit, defs = name_amplitudes(explicit, p.independent, {str(k): str(v) for k, v in (opts.get("rename") or {}).items()})
        out.relations += [Relation(K.symbol(k), v) for k, v in defs.items()]
        out.explicit, out.explicit_target = explicit, y
    elif kind == "amplitude_law":
        idx = int(opts.get("relation", 0))
        rel = out.relations[idx]
        var = str(opts.get("var", p.independent))
        sec = Relation(rel.lhs, secular_limit(rel.rhs, var))
        out.notes.append(f"secular limit: {sec}")
        name, g = opts["change"]
        consts = {str(k): _expr(v, p) for k, v in (opts.get("constants") or {}).items()}
        out.explicit = amplitude_law(sec, (str(name), _expr(g, p)), str(opts["target"]), consts, opts.get("reference"))
        out.explicit_target = str(opts["target"])
    elif kind == "wkb":
        back = {k: _expr(v, p) for k, v in opts["back"].items()}
        z, yp = opts["derivative"]
        for omega in opts.get("omegas") or [None]:
            label = "Omega(x)" if omega is None else str(omega)
            res = wkb_phase(
                sol, None if omega is None else _expr(omega, p), eps_parameter=sys.eps,
                invariant=_expr(opts.get("invariant", "u"), p), back=back, derivative=(str(z), str(yp)),
                y=str(opts.get("y", "y")), x=p.independent,
            )
            out.modes[label] = res.modes
            out.mode_relations[label] = res.relations
            if omega is None:
                out.relations += res.relations
    return out


def _match(name: str, actual, expected, p: ProblemFile) -> Check:
    exp = _expr(expected, p)
    eq = K.equivalent(actual, exp)
    exact = eq.equal and not eq.probabilistic
    return Check(name, eq.max_difference, 0.0, exact, f"got {K.pretty(actual)}")


def _relation_residual(text: str, p: ProblemFile) -> sp.Expr:
    if text.count("=") != 1:
        raise PipelineError("expect", f"relation {text!r} needs exactly one '='")
    lhs, rhs = text.split("=")
    return _expr(lhs, p) - _expr(rhs, p)


@_stage("expect")
def expectation_checks(p: ProblemFile, sys: PerturbedSystem, sol: HomologicalSolution, tr: _Transformed) -> list[Check]:
    e = p.expect
    out = []
    if e.X is not None:
        unknown = set(e.X) - set(sys.chart.names)
        if unknown:
            raise PipelineError("expect", f"X components {sorted(unknown)} are not coordinates of the solve chart")
        for n in sys.chart.names:
            out.append(_match(f"X[{n}]", sol.X[n], e.X.get(n, "0"), p))
    for i, text in enumerate(e.relations):
        if i >= len(tr.relations):
            out.append(Check(f"relation[{i}]", 1.0, 0.0, False, "relation missing"))
            continue
        got = tr.relations[i]
        eq = K.equivalent(got.lhs - got.rhs, _relation_residual(text, p))
        out.append(Check(f"relation[{i}]", eq.max_difference, 0.0, eq.equal and not eq.probabilistic, f"got {got}"))
    if e.explicit is not None:
        if tr.explicit is None:
            out.append(Check("explicit", 1.0, 0.0, False, "no explicit solution produced"))
        else:
            out.append(_match("explicit", tr.explicit, e.explicit, p))
    generic = tr.modes.get("Omega(x)", [])
    for i, text in enumerate(e.modes):
        if i >= len(generic):
            out.append(Check(f"mode[{i}]", 1.0, 0.0, False, "mode missing"))
        else:
            out.append(_match(f"mode[{i}]", generic[i], text, p))
    return out


def _ode(p: ProblemFile) -> ODESystem:
    v = p.validation
    return ODESystem(Chart(tuple(v.ode.chart)), tuple(_expr(t, p) for t in v.ode.rhs), p.independent)


def _annihilation_checks(sys_ode, trajs, tol, functions=None, eps="eps") -> tuple[Check, float]:
    worst = 0.0
    forms = ode_to_forms(sys_ode)
    for e, traj in trajs.items():
        for w in forms:
            worst = max(worst, curve_annihilation(traj, w, {eps: e}, functions))
    return Check("ode_forms_annihilate_reference", worst, 10 * tol, worst <= 10 * tol), worst


@_stage("validation")
def validate(p: ProblemFile, tr: _Transformed, declared: list[KForm]) -> ValidationReport:
    v = p.validation
    o = v.options
    ode = _ode(p)
    same_chart = tuple(p.chart) == tuple(v.ode.chart)
    if v.kind == "characteristic_oracle":
        rep = validate_boundary_layer(
            p.name, tr.explicit, coeffs=tuple(_expr(c, p) for c in o["coeffs"]), ic=tuple(map(float, o["ic"])),
            constants=[str(c) for c in o["constants"]], span=tuple(o.get("span", (0, 1))),
            eps_ladder=tuple(v.eps_ladder), grid_points=v.grid_points, min_exponent=float(o.get("min_exponent", 0.8)),
            var=p.independent, eps=p.epsilon, forms=declared if same_chart else (),
        )
        rep.metrics["reference"] = "characteristic roots (closed form)"
        return rep
    if v.kind == "envelope":
        theta = None
        if "theta_relation" in o:
            theta = tr.relations[int(o["theta_relation"])].rhs
        rep, trajs = validate_envelope(
            p.name, tr.explicit, ode, ic={k: float(x) for k, x in o["ic"].items()},
            law_params={k: _expr(x, p) for k, x in (o.get("law_params") or {}).items()},
            window=tuple(map(float, o.get("window", (10, 100)))), eps_ladder=tuple(v.eps_ladder),
            check_eps=float(o.get("check_eps", 0.05)), rel_tol=float(o.get("rel_tol", 0.03)), tol=v.tol,
            grid_points=v.grid_points, var=p.independent, eps=p.epsilon, theta=theta,
            theta_params={k: _expr(x, p) for k, x in (o.get("theta_params") or {}).items()},
        )
        if theta is not None and "theta_tol" in o:
            err = rep.metrics["theta_drift_error"]
            rep.add("theta_drift_error", err, float(o["theta_tol"]), err <= float(o["theta_tol"]))
        c, _ = _annihilation_checks(ode, trajs, v.tol, eps=p.epsilon)
        rep.checks.append(c)
        if not same_chart:
            rep.metrics["declared_forms_check"] = "skipped: declared chart differs from the ODE chart"
        return rep
    if v.kind == "wkb":
        rep = ValidationReport(p.name)
        trajs_all = {}
        span = tuple(map(float, o.get("span", (0, 1))))
        if "constant" in o:
            c = o["constant"]
            omega = str(c["omega"])
            modes = tr.modes.get(omega) or _modes_for(p, tr, omega)
            sub, trajs = validate_wkb_constant(
                p.name, modes, ode, exact=_expr(c["exact"], p), ic=tuple(map(float, c["ic"])), span=span,
                eps_ladder=tuple(v.eps_ladder), tol=v.tol, grid_points=v.grid_points, functions={"Omega": omega},
                var=p.independent, eps=p.epsilon,
            )
            rep.checks += sub.checks
            rep.rows += sub.rows
            rep.metrics["constant_omega_error_table"] = sub.error_table
            rep.metrics["constant_omega_reference_vs_exact"] = sub.metrics["reference_vs_exact"]
            trajs_all[omega] = trajs
        if "phase" in o:
            omega = str(o["phase"]["omega"])
            modes = tr.modes.get(omega) or _modes_for(p, tr, omega)
            sub, trajs = validate_wkb_phase(
                p.name, modes[0], ode, span=span, eps_ladder=tuple(v.eps_ladder), tol=v.tol,
                grid_points=v.grid_points, functions={"Omega": omega}, var=p.independent, eps=p.epsilon,
            )
            rep.checks += sub.checks
            rep.rows += sub.rows
            rep.error_table = sub.error_table
            rep.exponent = sub.exponent
            trajs_all[omega] = trajs
        worst = 0.0
        for omega, trajs in trajs_all.items():
            c, w = _annihilation_checks(ode, trajs, v.tol, {"Omega": omega}, p.epsilon)
            worst = max(worst, w)
        rep.add("ode_forms_annihilate_reference", worst, 10 * v.tol, worst <= 10 * v.tol)
        if same_chart and trajs_all:
            rel = 0.0
            for omega, trajs in trajs_all.items():
                e = min(trajs)
                for w in declared:
                    rel = max(rel, curve_annihilation(trajs[e], w, {p.epsilon: e}, {"Omega": omega}, relative=True))
            rep.add("declared_forms_annihilate_reference", rel, 1e-6, rel <= 1e-6, "relative to the term magnitudes")
        return rep
    raise PipelineError("validation", f"unknown validation kind {v.kind!r}")


def _modes_for(p, tr, omega):
    raise PipelineError("validation", f"no modes computed for Omega = {omega}; list it under postprocess.omegas")


# -- orchestration ---------------------------------------------------------------


def apply_overrides(p: ProblemFile, eps_ladder=None, tol=None, ansatz_depth=None) -> ProblemFile:
    if ansatz_depth is not None:
        p = replace(p, ansatz=replace(p.ansatz, depth=int(ansatz_depth)))
    if p.validation is not None and (eps_ladder is not None or tol is not None):
        val = p.validation
        if eps_ladder is not None:
            val = replace(val, eps_ladder=[float(e) for e in eps_ladder])
        if tol is not None:
            val = replace(val, tol=float(tol))
        p = replace(p, validation=val)
    return p


def _fmt_vector(sol: HomologicalSolution) -> dict:
    return {
        "X": {n: K.pretty(c) for n, c in zip(sol.X.chart.names, sol.X.components)},
        "multipliers": [[K.pretty(sp.sympify(v)) for v in row] for row in sol.multipliers],
        "diagnostics": dict(sol.diagnostics),
    }


def _jsonable(v: Any):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, str)) or v is None:
        return v
    if isinstance(v, int):
        return v
    return float(v)


def run_problem(p: ProblemFile, *, validate_numeric: bool = True) -> Report:
    sys, declared = build_system(p)
    sol = solve_system(p, sys)
    checks = _residual_checks(p, sys, sol)
    tr = transform(p, sys, sol)
    checks += expectation_checks(p, sys, sol, tr)
    rep = Report(
        case=p.name,
        system={
            "chart": list(sys.chart.names),
            "zero_order": [str(w) for w in sys.zero_order],
            "perturbation": [str(w) for w in sys.perturbation],
            "order_parameter": K.pretty(sys.eps),
        },
        solution=_fmt_vector(sol),
        relations=[str(r) for r in tr.relations],
        explicit=None if tr.explicit is None else f"{tr.explicit_target} = {K.pretty(tr.explicit)}",
        modes={k: [K.pretty(m) for m in ms] for k, ms in tr.modes.items()},
        notes=tr.notes,
        checks=checks,
    )
    if p.validation is not None and validate_numeric:
        vr = validate(p, tr, declared)
        rep.checks += vr.checks
        rep.rows = vr.rows
        rep.validation = _jsonable({
            "kind": p.validation.kind,
            "eps_ladder": p.validation.eps_ladder,
            "tol": p.validation.tol,
            "error_table": [[e, err] for e, err in vr.error_table],
            "max_abs_error": vr.max_abs_error,
            "exponent": vr.exponent,
            "metrics": {k: v for k, v in sorted(vr.metrics.items())},
        })
    return rep


def run_case(path, **overrides) -> Report:
    p = load(path)
    return run_problem(apply_overrides(p, **overrides))


def run_builtin(name: str, **overrides) -> Report:
    return run_problem(apply_overrides(builtin(name), **overrides))
