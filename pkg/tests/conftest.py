import pytest

from diffpert.homological import Ansatz, extend_ansatz, solve
from diffpert.kernel import parse
from diffpert.pipeline import build_system
from diffpert.problem import builtin


@pytest.fixture(scope="session")
def systems():
    return {name: build_system(builtin(name))[0] for name in ("boundary_layer", "nonlinear_damping", "wkb")}


@pytest.fixture(scope="session")
def solutions(systems):
    out = {}
    for name, sys in systems.items():
        p = builtin(name)
        a = Ansatz(tuple(parse(t, p.functions) for t in p.ansatz.terms), tuple(p.ansatz.components))
        if p.ansatz.depth:
            a = extend_ansatz(a, sys, p.ansatz.depth, p.independent)
        out[name] = solve(sys, a)
    return out
