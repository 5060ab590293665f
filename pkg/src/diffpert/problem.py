"""Declarative problem files (YAML, schema v1).

Every mapping is checked against a fixed key set, so typos fail loudly
instead of being ignored. ``dump(load(text))`` re-parses to an equal object.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import kernel as K
from .forms import Chart, parse_form

SCHEMA = "v1"
BUILTINS = ("boundary_layer", "nonlinear_damping", "wkb")

POSTPROCESS_KEYS = {
    "none": set(),
    "linear_first_order": {"relation", "y", "constant", "rename"},
    "amplitude_law": {"relation", "var", "change", "target", "constants", "reference"},
    "wkb": {"invariant", "back", "derivative", "y", "omegas"},
}

VALIDATION_KEYS = {
    "characteristic_oracle": {"coeffs", "ic", "constants", "span", "min_exponent"},
    "envelope": {"ic", "law_params", "window", "check_eps", "rel_tol", "theta_relation", "theta_params", "theta_tol"},
    "wkb": {"span", "constant", "phase"},
}


class ProblemError(ValueError):
    pass


def _mapping(data, where: str) -> dict:
    if not isinstance(data, dict):
        raise ProblemError(f"{where}: expected a mapping")
    return data


def _keys(data: Mapping, allowed: set[str], where: str, required: set[str] = frozenset()):
    unknown = set(data) - allowed
    if unknown:
        raise ProblemError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = set(required) - set(data)
    if missing:
        raise ProblemError(f"{where}: missing field(s) {sorted(missing)}")


def _strs(data, where: str) -> list[str]:
    if not isinstance(data, list) or not all(isinstance(s, (str, int, float)) for s in data):
        raise ProblemError(f"{where}: expected a list of strings")
    return [str(s) for s in data]


def _str_map(data, where: str) -> dict[str, str]:
    data = _mapping(data or {}, where)
    return {str(k): str(v) for k, v in data.items()}


@dataclass
class ChangeOfVariables:
    chart: list[str]
    map: dict[str, str]

    @classmethod
    def from_dict(cls, d, where="change_of_variables"):
        d = _mapping(d, where)
        _keys(d, {"chart", "map"}, where, {"chart", "map"})
        return cls(_strs(d["chart"], where + ".chart"), _str_map(d["map"], where + ".map"))


@dataclass
class AnsatzSpec:
    terms: list[str] = field(default_factory=list)
    components: list[str] | None = None
    multipliers: list[str] = field(default_factory=list)
    depth: int = 0
    budget: int = 20000

    @classmethod
    def from_dict(cls, d, where="ansatz"):
        d = _mapping(d, where)
        _keys(d, {"terms", "components", "multipliers", "depth", "budget"}, where)
        comps = d.get("components")
        return cls(
            _strs(d.get("terms", []), where + ".terms"),
            None if comps is None else _strs(comps, where + ".components"),
            _strs(d.get("multipliers", []), where + ".multipliers"),
            int(d.get("depth", 0)),
            int(d.get("budget", 20000)),
        )


@dataclass
class InvariantSpec:
    expr: str
    constant: str | None = None
    define: dict[str, str] | None = None  # {"name": ..., "value": ...}
    solve_for: str | None = None

    @classmethod
    def from_dict(cls, d, where="invariant"):
        if isinstance(d, str):
            return cls(d)
        d = _mapping(d, where)
        _keys(d, {"expr", "constant", "define", "solve_for"}, where, {"expr"})
        define = d.get("define")
        if define is not None:
            define = _str_map(define, where + ".define")
            _keys(define, {"name", "value"}, where + ".define", {"name", "value"})
        return cls(str(d["expr"]), d.get("constant"), define, d.get("solve_for"))


@dataclass
class OdeSpec:
    chart: list[str]
    rhs: list[str]

    @classmethod
    def from_dict(cls, d, where="ode"):
        d = _mapping(d, where)
        _keys(d, {"chart", "rhs"}, where, {"chart", "rhs"})
        return cls(_strs(d["chart"], where + ".chart"), _strs(d["rhs"], where + ".rhs"))


@dataclass
class Sampling:
    box: dict[str, list[float]] = field(default_factory=dict)
    functions: dict[str, str] = field(default_factory=dict)
    points: int = 100
    tolerance: float = 1e-9

    @classmethod
    def from_dict(cls, d, where="sampling"):
        d = _mapping(d or {}, where)
        _keys(d, {"box", "functions", "points", "tolerance"}, where)
        box = {}
        for k, v in _mapping(d.get("box", {}), where + ".box").items():
            if not isinstance(v, list) or len(v) != 2:
                raise ProblemError(f"{where}.box.{k}: expected [low, high]")
            box[str(k)] = [float(v[0]), float(v[1])]
        return cls(box, _str_map(d.get("functions", {}), where + ".functions"), int(d.get("points", 100)), float(d.get("tolerance", 1e-9)))


@dataclass
class Postprocess:
    kind: str = "none"
    options: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, where="postprocess"):
        d = _mapping(d or {"kind": "none"}, where)
        kind = d.get("kind", "none")
        if kind not in POSTPROCESS_KEYS:
            raise ProblemError(f"{where}: unknown kind {kind!r} (known: {sorted(POSTPROCESS_KEYS)})")
        _keys(d, POSTPROCESS_KEYS[kind] | {"kind"}, where)
        return cls(kind, {k: v for k, v in d.items() if k != "kind"})

    def to_dict(self):
        return {"kind": self.kind, **self.options}


@dataclass
class Validation:
    kind: str
    ode: OdeSpec
    eps_ladder: list[float] = field(default_factory=lambda: [0.1, 0.05, 0.025])
    tol: float = 1e-10
    grid_points: int = 400
    options: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, where="validation"):
        d = _mapping(d, where)
        kind = d.get("kind")
        if kind not in VALIDATION_KEYS:
            raise ProblemError(f"{where}: unknown kind {kind!r} (known: {sorted(VALIDATION_KEYS)})")
        _keys(d, VALIDATION_KEYS[kind] | {"kind", "ode", "eps_ladder", "tol", "grid_points"}, where, {"ode"})
        ladder = [float(e) for e in d.get("eps_ladder", [0.1, 0.05, 0.025])]
        return cls(
            kind,
            OdeSpec.from_dict(d["ode"], where + ".ode"),
            ladder,
            float(d.get("tol", 1e-10)),
            int(d.get("grid_points", 400)),
            {k: v for k, v in d.items() if k not in {"kind", "ode", "eps_ladder", "tol", "grid_points"}},
        )

    def to_dict(self):
        return {
            "kind": self.kind,
            "ode": asdict(self.ode),
            "eps_ladder": list(self.eps_ladder),
            "tol": self.tol,
            "grid_points": self.grid_points,
            **self.options,
        }


@dataclass
class Expectation:
    X: dict[str, str] | None = None
    relations: list[str] = field(default_factory=list)
    explicit: str | None = None
    modes: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d, where="expect"):
        d = _mapping(d or {}, where)
        _keys(d, {"X", "relations", "explicit", "modes"}, where)
        X = d.get("X")
        return cls(
            None if X is None else _str_map(X, where + ".X"),
            _strs(d.get("relations", []), where + ".relations"),
            None if d.get("explicit") is None else str(d["explicit"]),
            _strs(d.get("modes", []), where + ".modes"),
        )


@dataclass
class ProblemFile:
    name: str
    chart: list[str]
    independent: str
    zero_order: list[str]
    perturbation: list[str]
    epsilon: str = "eps"
    order_parameter: str | None = None
    description: str = ""
    functions: list[str] = field(default_factory=list)
    parameters: list[str] = field(default_factory=list)
    change_of_variables: ChangeOfVariables | None = None
    ansatz: AnsatzSpec = field(default_factory=AnsatzSpec)
    invariants: list[InvariantSpec] = field(default_factory=list)
    substitutions: dict[str, str] = field(default_factory=dict)
    first_order: dict[str, str] = field(default_factory=dict)
    postprocess: Postprocess = field(default_factory=Postprocess)
    sampling: Sampling = field(default_factory=Sampling)
    validation: Validation | None = None
    expect: Expectation = field(default_factory=Expectation)
    schema: str = SCHEMA

    FIELDS = (
        "schema", "name", "description", "chart", "independent", "epsilon", "order_parameter",
        "functions", "parameters", "zero_order", "perturbation", "change_of_variables", "ansatz",
        "invariants", "substitutions", "first_order", "postprocess", "sampling", "validation", "expect",
    )

    @classmethod
    def from_dict(cls, d) -> "ProblemFile":
        d = _mapping(d, "problem")
        _keys(d, set(cls.FIELDS), "problem", {"name", "chart", "independent", "zero_order", "perturbation"})
        schema = str(d.get("schema", SCHEMA))
        if schema != SCHEMA:
            raise ProblemError(f"unsupported schema {schema!r}; expected {SCHEMA!r}")
        cov = d.get("change_of_variables")
        val = d.get("validation")
        p = cls(
            name=str(d["name"]),
            chart=_strs(d["chart"], "chart"),
            independent=str(d["independent"]),
            zero_order=_strs(d["zero_order"], "zero_order"),
            perturbation=_strs(d["perturbation"], "perturbation"),
            epsilon=str(d.get("epsilon", "eps")),
            order_parameter=None if d.get("order_parameter") is None else str(d["order_parameter"]),
            description=str(d.get("description", "")),
            functions=_strs(d.get("functions", []), "functions"),
            parameters=_strs(d.get("parameters", []), "parameters"),
            change_of_variables=None if cov is None else ChangeOfVariables.from_dict(cov),
            ansatz=AnsatzSpec.from_dict(d.get("ansatz", {})),
            invariants=[InvariantSpec.from_dict(v, f"invariants[{i}]") for i, v in enumerate(d.get("invariants", []) or [])],
            substitutions=_str_map(d.get("substitutions"), "substitutions"),
            first_order=_str_map(d.get("first_order"), "first_order"),
            postprocess=Postprocess.from_dict(d.get("postprocess")),
            sampling=Sampling.from_dict(d.get("sampling")),
            validation=None if val is None else Validation.from_dict(val),
            expect=Expectation.from_dict(d.get("expect")),
            schema=schema,
        )
        p.check()
        return p

    def to_dict(self) -> dict:
        out = {}
        for name in self.FIELDS:
            v = getattr(self, name)
            if name in ("postprocess", "validation"):
                v = None if v is None else v.to_dict()
            elif name == "invariants":
                v = [asdict(i) for i in v]
            elif hasattr(v, "__dataclass_fields__"):
                v = asdict(v)
            out[name] = v
        return out

    # -- consistency ---------------------------------------------------------

    @property
    def solve_chart(self) -> list[str]:
        return self.change_of_variables.chart if self.change_of_variables else self.chart

    def check(self):
        """All symbols referenced by the forms and the ODE must be declared."""
        if self.independent not in self.chart:
            raise ProblemError(f"independent coordinate {self.independent!r} is not in the chart")
        if len(self.zero_order) != len(self.perturbation):
            raise ProblemError("zero_order and perturbation must have the same length")
        chart = Chart(tuple(self.chart))
        allowed = set(self.chart) | {self.epsilon} | set(self.parameters)
        for key in ("zero_order", "perturbation"):
            for i, text in enumerate(getattr(self, key)):
                try:
                    w = parse_form(text, chart, self.functions)
                except K.ParseError as exc:
                    raise ProblemError(f"{key}[{i}]: {exc}") from None
                extra = set().union(*(K.free_names(c) for _, c in w.terms)) - allowed if w.terms else set()
                if extra:
                    raise ProblemError(f"{key}[{i}]: undeclared symbol(s) {sorted(extra)}")
        if self.change_of_variables:
            new = set(self.change_of_variables.chart)
            for old, text in self.change_of_variables.map.items():
                if old not in self.chart:
                    raise ProblemError(f"change_of_variables.map: {old!r} is not a chart coordinate")
                extra = K.free_names(K.parse(text, self.functions)) - new - set(self.parameters)
                if extra:
                    raise ProblemError(f"change_of_variables.map.{old}: undeclared symbol(s) {sorted(extra)}")
        if self.validation is not None:
            ode = self.validation.ode
            if len(ode.chart) != len(ode.rhs):
                raise ProblemError("validation.ode: one right-hand side per coordinate is required")
            allowed = set(ode.chart) | {self.epsilon} | set(self.parameters)
            for i, text in enumerate(ode.rhs):
                try:
                    e = K.parse(text, self.functions)
                except K.ParseError as exc:
                    raise ProblemError(f"validation.ode.rhs[{i}]: {exc}") from None
                extra = K.free_names(e) - allowed
                if extra:
                    raise ProblemError(f"validation.ode.rhs[{i}]: undeclared symbol(s) {sorted(extra)}")


def loads(text: str) -> ProblemFile:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ProblemError(f"invalid YAML: {exc}") from None
    return ProblemFile.from_dict(data)


def load(path) -> ProblemFile:
    return loads(Path(path).read_text())


def dumps(p: ProblemFile) -> str:
    return yaml.safe_dump(p.to_dict(), sort_keys=False, allow_unicode=True)


def builtin_text(name: str) -> str:
    if name not in BUILTINS:
        raise ProblemError(f"unknown built-in case {name!r}; available: {', '.join(BUILTINS)}")
    return resources.files("diffpert.cases").joinpath(f"{name}.yaml").read_text()


def builtin(name: str) -> ProblemFile:
    return loads(builtin_text(name))
