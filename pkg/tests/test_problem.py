import pytest
import yaml

from diffpert.problem import BUILTINS, ProblemError, builtin, builtin_text, dumps, loads

MINIMAL = """
name: tiny
chart: [x, y, z]
independent: x
zero_order: ["dy - z*dx", "dy + y*dx"]
perturbation: ["0", "-dz"]
"""


@pytest.mark.parametrize("name", BUILTINS)
def test_builtin_round_trip(name):
    p = builtin(name)
    again = loads(dumps(p))
    assert again == p
    assert dumps(again) == dumps(p)


def test_minimal_file_defaults():
    p = loads(MINIMAL)
    assert p.epsilon == "eps" and p.validation is None and p.ansatz.terms == []
    assert loads(dumps(p)) == p


def test_unknown_top_level_field_rejected():
    with pytest.raises(ProblemError, match="unknown"):
        loads(MINIMAL + "colour: blue\n")


def test_unknown_nested_field_rejected():
    with pytest.raises(ProblemError, match="ansatz"):
        loads(MINIMAL + "ansatz: {terms: [y], depht: 1}\n")


def test_missing_required_field():
    data = yaml.safe_load(MINIMAL)
    del data["independent"]
    with pytest.raises(ProblemError):
        loads(yaml.safe_dump(data))


def test_undeclared_symbol_in_form():
    with pytest.raises(ProblemError, match=r"undeclared symbol\(s\) \['k'\]"):
        loads(MINIMAL.replace('"-dz"', '"-k*dz"'))
    assert loads(MINIMAL.replace('"-dz"', '"-k*dz"') + "parameters: [k]\n").parameters == ["k"]


def test_form_syntax_error_names_the_form():
    with pytest.raises(ProblemError, match=r"zero_order\[1\]"):
        loads(MINIMAL.replace("dy + y*dx", "dy + *dx"))


def test_schema_version_checked():
    with pytest.raises(ProblemError, match="schema"):
        loads("schema: v2\n" + MINIMAL)


def test_independent_must_be_coordinate():
    with pytest.raises(ProblemError, match="independent"):
        loads(MINIMAL.replace("independent: x", "independent: t"))


def test_unknown_builtin_lists_cases():
    with pytest.raises(ProblemError) as info:
        builtin_text("pendulum")
    assert all(n in str(info.value) for n in BUILTINS)


def test_invalid_yaml():
    with pytest.raises(ProblemError, match="YAML"):
        loads("name: [unclosed\n")
