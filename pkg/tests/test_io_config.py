import json

import numpy as np
import pytest

from cherenkov2d.config import RunConfig
from cherenkov2d.errors import ConfigError, MissingInputError
from cherenkov2d.io import (
    complex_matrix_from_json,
    complex_matrix_to_json,
    read_json,
    read_spectrum,
    read_table,
    write_json,
    write_spectrum,
    write_table,
)


def test_table_round_trip(tmp_path):
    x = np.linspace(0, 1, 7) / 3
    p = write_table(tmp_path / "t.csv", {"a": x, "b": x**2}, {"kev": 200.0, "name": "demo", "n": 3})
    cols, meta = read_table(p)
    assert np.array_equal(cols["a"], x) and np.array_equal(cols["b"], x**2)
    assert meta == {"kev": 200.0, "name": "demo", "n": 3}
    text = p.read_text().splitlines()
    assert text[:3] == ["# kev=200.0", "# n=3", "# name=demo"]
    assert text[3] == "a,b"


def test_headerless_two_column(tmp_path):
    p = tmp_path / "raw.csv"
    p.write_text("# kev=93\n0.0,1\n0.01,2\n0.02,3\n")
    e, v, meta = read_spectrum(p)
    assert np.allclose(e, [0, 0.01, 0.02]) and np.allclose(v, [1, 2, 3])
    assert meta["kev"] == 93


def test_empty_table_with_header(tmp_path):
    p = write_table(tmp_path / "e.csv", {"energy_eV": [], "k": []})
    cols, _ = read_table(p)
    assert cols["energy_eV"].size == 0


def test_missing_files(tmp_path):
    with pytest.raises(MissingInputError):
        read_table(tmp_path / "nope.csv")
    with pytest.raises(MissingInputError):
        read_json(tmp_path / "nope.json")


def test_json_stable_and_sanitised(tmp_path):
    payload = {"b": np.float64(np.nan), "a": np.arange(3), "z": 1 + 2j}
    p = write_json(tmp_path / "x.json", payload)
    first = p.read_text()
    assert json.loads(first) == {"a": [0, 1, 2], "b": None, "z": [1.0, 2.0]}
    write_json(p, payload)
    assert p.read_text() == first


def test_complex_matrix_round_trip():
    m = np.array([[1 + 2j, 0.5j], [-3.0, 1e-17 - 1j]])
    assert np.array_equal(complex_matrix_from_json(complex_matrix_to_json(m)), m)


def test_spectrum_writer_schema(tmp_path):
    p = write_spectrum(tmp_path / "s.csv", [1.0, 2.0], [0.1, 0.2], {"k": 1})
    assert p.read_text().splitlines()[1] == "energy_eV,value"


def test_config_round_trip():
    cfg = RunConfig()
    cfg.set("electron", "kev", "120, 200")
    cfg.set("stack", "vacuum_only", "yes")
    cfg.set("model", "lam", "0.3")
    cfg.set("run", "seeds", "4,5")
    back = RunConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert back.electron.kev == (120.0, 200.0)
    assert back.run.seeds == (4, 5)
    assert back.to_ini() == cfg.to_ini()


def test_config_hash_ignores_output_location():
    a, b = RunConfig(), RunConfig()
    b.run.out, b.run.threads = "elsewhere", 4
    assert a.config_hash() == b.config_hash()
    b.model.lam = 0.5
    assert a.config_hash() != b.config_hash()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[nonsense]\na = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[model]\nunknown = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[model]\nlam = abc\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[beam]\nleff_um = 300\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[grids]\neels_min_ev = 0.5\n")
    with pytest.raises(MissingInputError):
        RunConfig.load(tmp_path / "absent.ini")


def test_relative_paths_resolve_next_to_config(tmp_path):
    (tmp_path / "m.csv").write_text("0,1\n")
    ini = tmp_path / "run.ini"
    ini.write_text("[fit]\nmeasurements = m.csv, gone.csv\n")
    cfg = RunConfig.load(ini)
    assert cfg.missing_files() == [str(tmp_path / "gone.csv")]
