import json

import numpy as np
import pytest

from dipolarsim import io as dio
from dipolarsim.analysis import DecayFit
from dipolarsim.config import ConfigError, RunConfig, config_from_dict, load_config
from dipolarsim.ensemble import DecayCurve, DensityRow
from dipolarsim.plotting import plot_decay, plot_density_sweep
from conftest import make_system


def _curve(label="xy8"):
    t = np.array([10.0, 20.0, 30.0])
    return DecayCurve(t, np.array([1.0, 0.5, 0.25]), np.array([0.0, 0.01, 0.02]), 7, label)


def test_decay_csv_round_trip(tmp_path):
    p = dio.write_decay_csv(tmp_path / "d.csv", [_curve("xy8"), _curve("droid")], 236.0, 3)
    header = p.read_text().splitlines()[0].split(",")
    assert tuple(header) == dio.DECAY_COLUMNS
    back = dio.read_decay_csv(p)
    assert set(back) == {"xy8", "droid"}
    np.testing.assert_array_equal(back["xy8"]["contrast"], [1.0, 0.5, 0.25])
    assert back["droid"]["n_realizations"] == 7


def test_density_sweep_csv_round_trip(tmp_path):
    fit = DecayFit(123.4, 1.0, 0.0, np.eye(2))
    rows = [DensityRow(50.0, {}, {"xy8": fit, "droid": fit}, {}),
            DensityRow(100.0, {}, {"droid": fit}, {"xy8": "no decay"})]
    p = dio.write_density_sweep_csv(tmp_path / "s.csv", rows)
    back = dio.read_density_sweep_csv(p)
    np.testing.assert_array_equal(back["density_ppm"], [50.0, 100.0])
    assert back["xy8"][0] == 123.4 and np.isnan(back["xy8"][1])
    assert "no decay" in p.read_text()


def test_read_sweep_rejects_missing_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("density_ppm,foo\n1,2\n")
    with pytest.raises(ValueError):
        dio.read_density_sweep_csv(p)


def test_geometry_csv(tmp_path):
    s = make_system(5)
    text = dio.write_geometry_csv(tmp_path / "g.csv", s).read_text().splitlines()
    assert text[0] == "site,x_nm,y_nm,z_nm,disorder_mhz,central"
    assert len(text) == 6
    assert sum(int(line.split(",")[-1]) for line in text[1:]) == 1


def test_manifest_is_sorted_json(tmp_path):
    p = dio.write_manifest(tmp_path / "m.json", {"b": np.float64(1.5), "a": np.arange(2)})
    doc = json.loads(p.read_text())
    assert doc == {"a": [0, 1], "b": 1.5}
    assert p.read_text().index('"a"') < p.read_text().index('"b"')


def test_default_config():
    cfg = load_config(None)
    assert cfg.ensemble.resolved() == {"n_spins": 8, "n_realizations": 200}
    assert cfg.density_sweep.densities == [50.0, 123.0, 236.0, 500.0]
    assert isinstance(cfg.to_dict(), dict)


def test_config_overrides_and_profiles(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("ensemble:\n  profile: paper\n  n_realizations: 10\nsweep:\n  family: droid\n")
    cfg = load_config(p)
    assert cfg.ensemble.resolved() == {"n_spins": 12, "n_realizations": 10}
    assert cfg.sweep.family == "droid"


@pytest.mark.parametrize("doc", [{"bogus": {}}, {"ensemble": {"spins": 3}}, {"ensemble": [1, 2]},
                                 {"propagator": {"method": "magic"}}])
def test_config_rejects_bad_documents(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_config_unknown_profile():
    cfg = config_from_dict({"ensemble": {"profile": "huge"}})
    with pytest.raises(ConfigError):
        cfg.ensemble.resolved()


def test_config_parse_errors(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("ensemble: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_svg_output_is_deterministic(tmp_path):
    a = plot_decay([_curve()], tmp_path / "a.svg")
    b = plot_decay([_curve()], tmp_path / "b.svg")
    assert a.read_text().startswith("<?xml") and "<svg" in a.read_text()
    assert a.read_bytes() == b.read_bytes()
    plot_density_sweep([50, 100], {"xy8": [200.0, 100.0]}, tmp_path / "s.svg")
    assert (tmp_path / "s.svg").exists()


def test_propagator_defaults_to_dense_even_with_partial_section():
    assert config_from_dict({}).propagator.method == "dense"
    assert config_from_dict({"propagator": {"krylov_dim": 20}}).propagator.method == "dense"
