import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from gkdv_lab import cli

FIXTURES = Path(__file__).parent / "fixtures"


def run_main(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_profile_outputs_are_byte_identical(tmp_path, capsys):
    # same output directory both times: the report records it
    outputs = []
    for _ in range(2):
        code, _, _ = run_main(["profile", "--p", "3", "--out", str(tmp_path)], capsys)
        assert code == 0
        outputs.append({f: (tmp_path / f).read_bytes() for f in ("profile.csv", "constants.json")})
    assert outputs[0] == outputs[1]


def test_profile_report_contents(tmp_path, capsys):
    run_main(["profile", "--p", "3", "--out", str(tmp_path)], capsys)
    rep = json.loads((tmp_path / "constants.json").read_text())
    assert rep["passed"] is True
    assert rep["constants"]["qq_tilde"] == pytest.approx(1.0, rel=1e-8)
    assert rep["constants"]["kappa"] is None
    assert {c["name"] for c in rep["checks"]} == {
        "ode-residual", "velocity-derivative-residual", "norm-formula"}
    header, data = cli.read_csv(tmp_path / "profile.csv")
    assert header == ["x", "Q", "dQ", "Qtilde"]
    assert data[np.argmin(np.abs(data[:, 0])), 1] == pytest.approx(math.sqrt(2.0), rel=1e-12)


def test_run_reduced_fixture(tmp_path, capsys):
    code, out, _ = run_main(["run", str(FIXTURES / "reduced_p7.yaml"), "--out", str(tmp_path)],
                            capsys)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "completed"
    assert max(rep["E_drift"], rep["M_drift"]) <= 1e-8
    assert rep["kappa_formula"] == pytest.approx(5.25, rel=0.01)
    header, data = cli.read_csv(tmp_path / "trajectory.csv")
    assert header == ["t", "x1", "x2", "v1", "v2", "E", "M"] and data.shape == (101, 7)


def test_run_spectrum_fixture(tmp_path, capsys):
    code, _, _ = run_main(["run", str(FIXTURES / "spectrum_p7.yaml"), "--out", str(tmp_path)],
                          capsys)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert code == 0 and rep["passed"]
    assert rep["nu"] == pytest.approx(1.6806, rel=1e-4)


def test_run_pde_fixture(tmp_path, capsys):
    code, _, _ = run_main(["run", str(FIXTURES / "pde_p3.yaml"), "--out", str(tmp_path)], capsys)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert code == 0 and rep["passed"]
    header, data = cli.read_csv(tmp_path / "series.csv")
    assert header[:3] == ["t", "q1", "q2"] and data.shape[0] == 11


@pytest.mark.parametrize("raw, message", [
    ({}, "required fields are 'scenario' and 'nonlinearity'"),
    ({"scenario": "profile"}, "missing required field(s): nonlinearity"),
    ({"scenario": "orbit", "nonlinearity": 3}, "scenario: unknown value"),
    ({"scenario": "profile", "nonlinearity": {"kind": "power"}}, "nonlinearity.p is required"),
    ({"scenario": "profile", "nonlinearity": 3, "params": {"n": "abc"}},
     "params.n: expected int, got 'abc'"),
    ({"scenario": "profile", "nonlinearity": 3, "params": {"grid": 4}}, "params.grid"),
    ({"scenario": "pde", "nonlinearity": 7, "params": {"tmax": -1}}, "params.tmax: must be positive"),
    ({"scenario": "profile", "nonlinearity": 3, "v": 0}, "v: must be positive"),
])
def test_config_errors_name_the_field(raw, message):
    with pytest.raises(cli.UsageError) as err:
        cli.validate_config(raw)
    assert message in str(err.value)


def test_config_defaults():
    cfg = cli.validate_config({"scenario": "pde", "nonlinearity": 7})
    assert cfg["nonlinearity"] == {"kind": "power", "p": 7.0}
    assert (cfg["n"], cfg["length"], cfg["sigma"], cfg["initializer"]) == (2048, 160.0, 1, "rest")


def test_empty_scenario_file_exits_with_usage_error(tmp_path, capsys):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", str(path)])
    assert exc.value.code == 2
    assert "required fields are 'scenario' and 'nonlinearity'" in capsys.readouterr().err


def test_unknown_suite_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "--suite", "nope"])
    assert exc.value.code == 2


def test_verify_writes_report(tmp_path, capsys):
    code, out, _ = run_main(["verify", "--suite", "criticality", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert out.count("PASS") == 6
    rep = json.loads((tmp_path / "verify-criticality.json").read_text())
    assert rep["passed"] and all(c["statement"] for c in rep["checks"])


def write_series(path, t, y):
    cli.write_csv(path, ["t", "y"], zip(t, y))


def test_compare_identical_files(tmp_path, capsys):
    t = np.linspace(0.0, 1.0, 11)
    write_series(tmp_path / "a.csv", t, np.sin(t))
    code, out, _ = run_main(["compare", str(tmp_path / "a.csv"), str(tmp_path / "a.csv")], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["columns"]["y"]["max_abs"] == 0.0 and rep["interpolated"] is False


def test_compare_interpolates_and_flags(tmp_path):
    ta = np.linspace(0.0, 1.0, 11)
    tb = np.linspace(0.0, 1.0, 101)
    write_series(tmp_path / "a.csv", ta, 2 * ta + 1)
    write_series(tmp_path / "b.csv", tb, 2 * tb + 1)
    rep = cli.compare_series(tmp_path / "a.csv", tmp_path / "b.csv", tolerance=1e-12)
    assert rep["interpolated"] is True and rep["passed"]
    assert rep["columns"]["y"]["max_abs"] < 1e-14
    with pytest.raises(cli.UsageError, match="column 'z' missing"):
        cli.compare_series(tmp_path / "a.csv", tmp_path / "b.csv", columns=["z"])


@settings(max_examples=50)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_csv_round_trip_is_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "v.csv"
    cli.write_csv(path, ["a"], [[v] for v in values])
    header, data = cli.read_csv(path)
    assert header == ["a"]
    assert data[:, 0].tolist() == [float(v) for v in values]


def test_json_maps_non_finite_to_null(tmp_path):
    cli.write_json(tmp_path / "r.json", {"b": math.nan, "a": [1.0, math.inf]})
    text = (tmp_path / "r.json").read_text()
    assert json.loads(text) == {"a": [1.0, None], "b": None}
    assert text.index('"a"') < text.index('"b"')
    assert not list(tmp_path.glob(".r.json.*"))


def test_fixtures_are_valid():
    for path in FIXTURES.glob("*.yaml"):
        cfg = cli.load_config(path)
        assert cfg["scenario"] == yaml.safe_load(path.read_text())["scenario"]


def test_numerical_precondition_exits_3(tmp_path, capsys):
    code, _, err = run_main(["pde", "--p", "3", "--q0", "5", "--out", str(tmp_path)], capsys)
    assert code == 3
    assert "below 10/sqrt(v)" in err
