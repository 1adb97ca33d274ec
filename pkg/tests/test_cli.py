import json
import math

import numpy as np
import pytest

from loggas import __version__
from loggas.cli import RunConfig, main
from loggas.equilibrium import free_entropy, rate_functional, solve_equilibrium
from loggas.fekete import solve_fekete
from loggas.measures import GridMeasure, Rectangle, arcsine, uniform
from loggas.montecarlo import BaseMeasure, bm_ratio
from loggas.vdm import WeightFunction

I = Rectangle(-1.0, 1.0)
U = WeightFunction.unit(I)


def run(tmp_path, *argv, config=None):
    if config is not None:
        path = tmp_path / "run.json"
        path.write_text(json.dumps(config))
        argv = argv + ("--config", str(path))
    return main(list(argv))


def read_json(path):
    return json.loads(path.read_text())


def test_fekete_matches_library(tmp_path):
    out = tmp_path / "f.json"
    assert run(tmp_path, "fekete", "--d", "6", "--out", str(out)) == 0
    data = read_json(out)
    direct = solve_fekete(I, U, 6)
    assert data["delta_d"] == direct.delta_d
    assert data["version"] == __version__ and len(data["config_hash"]) == 16
    assert np.allclose([c[0] for c in data["configuration"]], direct.configuration.real)


def test_fekete_table(tmp_path):
    out = tmp_path / "t.json"
    assert run(tmp_path, "fekete", "--d-list", "4,8,12", "--restarts", "2", "--out", str(out)) == 0
    data = read_json(out)
    assert [row["d"] for row in data["table"]] == [4, 8, 12]


def test_eqmeasure_and_entropy_and_rate(tmp_path):
    csv = tmp_path / "eq.csv"
    summary = tmp_path / "eq.json"
    assert run(tmp_path, "eqmeasure", "--grid", "128", "--out", str(csv), "--summary", str(summary)) == 0
    assert csv.read_text().startswith(f"# loggas {__version__} config_hash=")
    m = GridMeasure.from_csv(csv.read_text())
    direct = solve_equilibrium(I, U, 128)
    assert np.allclose(m.masses, direct.masses, atol=1e-15)
    assert read_json(summary)["weighted_energy"] == direct.energy.weighted_energy

    ent = tmp_path / "ent.json"
    assert run(tmp_path, "entropy", "--measure", str(csv), "--out", str(ent)) == 0
    assert read_json(ent)["sigma"] == pytest.approx(free_entropy(m), abs=1e-14)
    assert run(tmp_path, "entropy", "--measure", str(csv), "--literal", "--out", str(ent)) == 0
    assert read_json(ent)["sigma"] == -math.inf

    ucsv = tmp_path / "uniform.csv"
    ucsv.write_text(uniform(I, 128).to_csv())
    rate = tmp_path / "rate.json"
    assert run(tmp_path, "rate", "--measure", str(ucsv), "--grid", "128", "--out", str(rate)) == 0
    assert read_json(rate)["rate"] == rate_functional(uniform(I, 128), U, I, 128).value


def test_sample_modes(tmp_path):
    out = tmp_path / "s.json"
    assert run(tmp_path, "sample", "--mode", "Z", "--d", "2", "--out", str(out)) == 0
    assert read_json(out)["value"] == pytest.approx(math.log(8 / 3), abs=1e-10)
    cfg = {"neighborhood": {"reference": "arcsine", "k": 1, "epsilon": 1e6}}
    assert run(tmp_path, "sample", "--mode", "prob", "--d", "3", "--out", str(out), config=cfg) == 0
    assert read_json(out)["value"] == pytest.approx(0.0, abs=1e-10)


def test_weight_file_and_rect_flags(tmp_path):
    wfile = tmp_path / "w.json"
    wfile.write_text(json.dumps({"kind": "exp_poly", "coefficients": [[2, 0, 1.0]]}))
    out = tmp_path / "f.json"
    assert run(tmp_path, "fekete", "--d", "5", "--rect=-2,2", "--weight", str(wfile),
               "--out", str(out)) == 0
    R = Rectangle(-2.0, 2.0)
    direct = solve_fekete(R, WeightFunction.exp_poly(R, {(2, 0): 1.0}), 5)
    assert read_json(out)["delta_d"] == direct.delta_d


def test_bm_table(tmp_path):
    out = tmp_path / "bm.json"
    assert run(tmp_path, "bm", "--out", str(out), config={"bm": {"k_list": [20], "trials": 10}}) == 0
    rows = read_json(out)["rows"]
    direct = bm_ratio(I, U, BaseMeasure.lebesgue(I), [20], trials=10)
    assert rows[0]["max_ratio"] == direct[0].max_ratio


def test_verify_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(tmp_path, "verify", "--suite", "gradient", "--seed", "7", "--out", str(a)) == 0
    assert run(tmp_path, "verify", "--suite", "gradient", "--seed", "7", "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_json(a)["passed"] is True


def test_verify_fails_on_tiny_budgets(tmp_path):
    out = tmp_path / "v.json"
    cfg = {"suites": ["interval-classical"], "equilibrium": {"max_iter": 3},
           "fekete": {"restarts": 1, "sweeps": 1, "gradient_iters": 1, "newton_iters": 0},
           "d_list": [4, 8]}
    assert run(tmp_path, "verify", "--out", str(out), config=cfg) != 0
    report = read_json(out)
    assert report["passed"] is False
    eq = report["suites"]["interval-classical"]["equilibrium"]
    assert eq["converged"] is False and eq["passed"] is False


def test_bad_input_exits_with_usage_error(tmp_path, capsys):
    assert run(tmp_path, "fekete", "--d", "4", config={"bogus": 1}) == 2
    assert "bogus" in capsys.readouterr().err
    assert run(tmp_path, "fekete") == 2
    assert run(tmp_path, "verify", "--suite", "nope") == 2


def test_config_hash_tracks_inputs():
    a = RunConfig.from_dict({"d": 4})
    assert a.hash() == RunConfig.from_dict({"d": 4, "outputs": {"x": "y"}}).hash()
    assert a.hash() != RunConfig.from_dict({"d": 5}).hash()
