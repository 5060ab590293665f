import json

import pytest

from diffpert.cli import main
from diffpert.pipeline import load_report, run_case

NO_VALIDATION = """
name: bl_symbolic
chart: [x, y, z]
independent: x
zero_order: ["dy - z*dx", "dy + y*dx"]
perturbation: ["0", "-dz"]
ansatz:
  terms: ["ln(y+z)", "y*ln(y+z)", "z", "y"]
  components: [x, y]
invariants:
  - expr: x - x0
    constant: x0
    define: {name: A, value: "exp(x0/eps)"}
    solve_for: "y'"
substitutions: {z: "y'"}
expect:
  X: {x: "ln(y+z)", y: "z - y*ln(y+z)"}
  relations: ["y' = A*exp(-x/eps) - y"]
"""


@pytest.fixture
def write(tmp_path):
    def _write(text, name="case.yaml"):
        p = tmp_path / name
        p.write_text(text)
        return p

    return _write


def test_builtin_all_passes(tmp_path, capsys):
    assert main(["builtin", "--all", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3
    assert sorted(p.name for p in tmp_path.iterdir()) == ["boundary_layer", "nonlinear_damping", "wkb"]


def test_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["builtin", "--all", "--out", str(d)]) == 0
    for case in ("boundary_layer", "nonlinear_damping", "wkb"):
        for f in (a / case).iterdir():
            assert f.read_bytes() == (b / case / f.name).read_bytes(), f"{case}/{f.name}"


def test_boundary_layer_report_files(tmp_path):
    assert main(["builtin", "boundary_layer", "--out", str(tmp_path)]) == 0
    d = tmp_path / "boundary_layer"
    assert sorted(p.name for p in d.iterdir()) == ["errors.csv", "report.json", "solution.txt"]
    r = load_report(d)
    assert r.to_json() == (d / "report.json").read_text()
    assert r.explicit == "y = Abar*exp(-x/eps) + B*exp(-x)"
    assert r.validation["exponent"] >= 0.8
    header = (d / "errors.csv").read_text().splitlines()[0]
    assert header == "case,epsilon,x_or_t,reference,asymptotic,abs_error"


def test_report_subcommand(tmp_path, capsys):
    main(["builtin", "boundary_layer", "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "boundary_layer"), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["case"] == "boundary_layer"


def test_report_rejects_unknown_fields(tmp_path):
    main(["builtin", "boundary_layer", "--out", str(tmp_path)])
    p = tmp_path / "boundary_layer" / "report.json"
    d = json.loads(p.read_text())
    d["extra"] = 1
    p.write_text(json.dumps(d))
    assert main(["report", str(p.parent)]) == 2


def test_env_var_sets_report_dir(tmp_path, monkeypatch, write):
    monkeypatch.setenv("DIFFPERT_REPORT_DIR", str(tmp_path / "env"))
    assert main(["analyze", str(write(NO_VALIDATION))]) == 0
    assert (tmp_path / "env" / "bl_symbolic" / "report.json").exists()


def test_no_validation_writes_json_and_solution_only(tmp_path, write):
    assert main(["analyze", str(write(NO_VALIDATION)), "--out", str(tmp_path / "r")]) == 0
    assert sorted(p.name for p in (tmp_path / "r" / "bl_symbolic").iterdir()) == ["report.json", "solution.txt"]


def test_empty_ansatz_is_a_pipeline_error(tmp_path, write, capsys):
    text = NO_VALIDATION.replace('terms: ["ln(y+z)", "y*ln(y+z)", "z", "y"]', "terms: []")
    assert main(["analyze", str(write(text)), "--no-write"]) == 2
    assert "ansatz insufficient" in capsys.readouterr().err


def test_zero_perturbation_gives_identity(write):
    text = NO_VALIDATION.replace('perturbation: ["0", "-dz"]', 'perturbation: ["0", "0"]').split("expect:")[0]
    r = run_case(write(text))
    assert set(r.solution["X"].values()) == {"0"}
    # nothing to solve for once the correction vanishes: the invariant comes back as is
    assert r.relations == ["x - x0 = 0"]
    assert any(n.startswith("kept implicit") for n in r.notes)


def test_failed_expectation_exits_one(write):
    text = NO_VALIDATION.replace('relations: ["y\' = A*exp(-x/eps) - y"]', 'relations: ["y\' = A*exp(-x/eps) + y"]')
    assert main(["analyze", str(write(text)), "--no-write"]) == 1


def test_validate_subcommand(write, capsys):
    assert main(["validate", str(write(NO_VALIDATION))]) == 0
    assert main(["validate", str(write(NO_VALIDATION + "bogus: 1\n", "bad.yaml"))]) == 2


def test_builtin_argument_errors(capsys):
    assert main(["builtin"]) == 2
    assert main(["builtin", "pendulum", "--no-write"]) == 2
    with pytest.raises(SystemExit):
        main(["builtin", "wkb", "--eps-ladder", "0.1,0.05"])


def test_overrides_are_applied(tmp_path):
    assert main(["builtin", "boundary_layer", "--eps-ladder", "0.2,0.1,0.05", "--tol", "1e-9", "--out", str(tmp_path)]) == 0
    r = load_report(tmp_path / "boundary_layer")
    assert r.validation["eps_ladder"] == [0.2, 0.1, 0.05] and r.validation["tol"] == 1e-9
