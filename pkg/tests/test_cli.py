import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgbohm import cli
from kgbohm.artifacts import fmt, read_csv, read_manifest, write_rows
from kgbohm.errors import ScenarioError
from kgbohm.scenario import parse_text


def _variant(name, old, new):
    text = cli.bundled_text(name)
    assert old in text
    return text.replace(old, new)


def _write(tmp_path, text, name="case.scn"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# -- reflective verbs ------------------------------------------------------------------

def test_list_bundled(capsys):
    assert cli.main(["list"]) == cli.EXIT_OK
    names = capsys.readouterr().out.split()
    assert len(names) >= 6 and "plane_wave" in names and names == sorted(names)


def test_empty_registry(tmp_path):
    assert cli.list_scenarios(tmp_path) == []
    assert cli.list_scenarios(tmp_path / "missing") == []


def test_describe_echoes_parameters(capsys):
    assert cli.main(["describe", "plane_wave"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "k = 1.0" in out and "[grid]" in out and "nx = 64" in out


def test_unknown_names_exit_2(capsys, tmp_path):
    assert cli.main(["describe", "no_such"]) == cli.EXIT_PARSE
    assert cli.main(["run", "no_such", "--out-dir", str(tmp_path)]) == cli.EXIT_PARSE
    assert "no_such" in capsys.readouterr().err


# -- error exits -----------------------------------------------------------------------

def test_missing_grid_names_grid(tmp_path, capsys):
    text = cli.bundled_text("plane_wave")
    start = text.index("[grid]")
    text = text[:start] + text[text.index("[initial]"):]
    assert cli.main(["run", _write(tmp_path, text), "--out-dir", str(tmp_path)]) == cli.EXIT_PARSE
    assert "grid" in capsys.readouterr().err


def test_parse_error_reports_line_and_field(tmp_path, capsys):
    text = _variant("plane_wave", "nx = 64", "nx = sixty-four")
    assert cli.main(["run", _write(tmp_path, text), "--out-dir", str(tmp_path)]) == cli.EXIT_PARSE
    err = capsys.readouterr().err
    line = text.splitlines().index("nx = sixty-four") + 1
    assert f"line {line}" in err and "grid.nx" in err


@pytest.mark.parametrize("text, field", [
    ("name = x\n", None),
    ("[scenario]\nname = x\n[scenario]\nname = y\n", "scenario"),
    ("[scenario]\nname = x\npipeline = kg\n[bogus]\na = 1\n", "bogus"),
    ("[scenario]\npipeline = kg\n", "scenario.name"),
])
def test_scenario_parse_errors(text, field):
    with pytest.raises(ScenarioError) as err:
        parse_text(text)
    if field is not None:
        assert err.value.field == field


def test_cfl_violation_exits_3(tmp_path, capsys):
    text = _variant("plane_wave", "dt = 0.01", "dt = 0.095")
    assert cli.main(["run", _write(tmp_path, text), "--out-dir", str(tmp_path)]) == cli.EXIT_STABILITY
    assert "cfl" in capsys.readouterr().err.lower()


def test_caustic_exits_4_with_step(tmp_path, capsys):
    text = _variant("stationary", "t_final = 1.0", "t_final = 2.0")
    assert cli.main(["run", _write(tmp_path, text), "--out-dir", str(tmp_path)]) == cli.EXIT_DIVERGENCE
    assert "step" in capsys.readouterr().err


# -- runs and artifacts --------------------------------------------------------------------

def test_plane_wave_manifest(tmp_path, capsys):
    assert cli.main(["run", "plane_wave", "--out-dir", str(tmp_path)]) == cli.EXIT_OK
    man = read_manifest(tmp_path / "plane_wave" / "manifest.json")
    assert man["summary"]["kg.charge_drift"] <= 1e-6
    assert man["summary"]["hidden_phase.mass_shell_max"] <= 1e-10
    assert all(c["pass"] for c in man["checks"].values())
    assert len(man["input_sha256"]) == 64
    fields = read_csv(tmp_path / "plane_wave" / "fields.csv")
    # nx = 64 carries the h^2 beat between continuum and lattice frequency
    assert list(fields)[:2] == ["t", "x"] and np.allclose(fields["rho"], 1.0, atol=1e-3)
    assert "PASS" in capsys.readouterr().out


def test_strict_profile_is_recorded(tmp_path):
    assert cli.main(["run", "plane_wave", "--out-dir", str(tmp_path), "--tolerance-profile", "strict"]) in (0, 1)
    assert read_manifest(tmp_path / "plane_wave" / "manifest.json")["tolerance_profile"] == "strict"


def test_lowspeed_report_is_monotone(tmp_path):
    assert cli.main(["run", "lowspeed_compare", "--out-dir", str(tmp_path)]) == cli.EXIT_OK
    rep = read_csv(tmp_path / "lowspeed_compare" / "lowspeed_report.csv")
    assert np.all(np.diff(rep["speed"]) < 0)
    for key in ("density_discrepancy_final", "phase_discrepancy_final", "hj_residual_max"):
        assert np.all(np.diff(rep[key]) < 0), key
    assert rep["density_discrepancy_final"][-1] <= 0.01


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "kinematics"]) == cli.EXIT_OK
    assert (tmp_path / "env" / "kinematics" / "manifest.json").exists()


def test_runs_are_bit_identical(tmp_path):
    for out in ("a", "b"):
        assert cli.main(["run", "superposition", "--out-dir", str(tmp_path / out)]) == cli.EXIT_OK
    for f in (tmp_path / "a" / "superposition").iterdir():
        if f.suffix in (".csv", ".json"):
            assert f.read_bytes() == (tmp_path / "b" / "superposition" / f.name).read_bytes(), f.name


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_number_format_round_trips(v):
    assert float(fmt(v)) == v


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e300, 1e300), st.floats(-1e-300, 1e-300)), min_size=1, max_size=20))
def test_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "rows.csv"
    write_rows(path, ["a", "b"], rows)
    back = read_csv(path)
    assert np.array_equal(back["a"], [r[0] for r in rows]) and np.array_equal(back["b"], [r[1] for r in rows])
