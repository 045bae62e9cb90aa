import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blochdamp import __version__
from blochdamp.config import ConfigError, ExperimentConfig, apply_overrides, load_config
from blochdamp.io import CSV_COLUMNS, read_series_csv, series_table, write_series_csv, write_table
from blochdamp.stochastic import ObservableSeries

TB = ExperimentConfig(
    "demo", "tight-binding",
    params={"force": -0.1, "gamma": 0.05, "n_sites": 31},
    run={"dt": 0.025, "t_total": 2.0, "n_traj": 8, "seed": 11},
    initial={"width2": 9.0},
)


class TestConfig:
    def test_yaml_roundtrip(self):
        back = ExperimentConfig.from_yaml(TB.to_yaml())
        assert back == TB and back.sha256() == TB.sha256()

    @given(st.floats(-1, 1), st.integers(0, 2**63), st.lists(st.floats(-2, 2), max_size=3))
    @settings(max_examples=30)
    def test_roundtrip_property(self, force, seed, hops):
        cfg = ExperimentConfig("x", "tight-binding", params={"force": force, "extra_hoppings": hops},
                               run={"seed": seed, "dt": 0.01, "t_total": 1.0})
        assert ExperimentConfig.from_yaml(cfg.to_yaml()) == cfg

    def test_hash_tracks_content(self):
        assert apply_overrides(TB, ["run.seed=12"]).sha256() != TB.sha256()

    def test_metadata(self):
        meta = TB.metadata()
        assert meta["seed"] == 11 and meta["version"] == __version__ and len(meta["config_sha256"]) == 64

    def test_overrides_typed(self):
        cfg = apply_overrides(TB, ["run.n_traj=500", "params.force=-0.2", "output.dir=out/x"])
        assert cfg.run["n_traj"] == 500 and cfg.params["force"] == -0.2 and cfg.output["dir"] == "out/x"
        assert TB.run["n_traj"] == 8

    @pytest.mark.parametrize("bad", ["run.n_traj", "=3"])
    def test_bad_override(self, bad):
        with pytest.raises(ConfigError):
            apply_overrides(TB, [bad]) if "=" not in bad else apply_overrides(TB, [bad]).validate()

    def test_unknown_model_and_section(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("x", "quantum-foam")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"name": "x", "model": "bands", "extra": {}})

    @pytest.mark.parametrize("change", ["params.n_sites=2", "run.dt=0.3", "params.gamma=-1", "params.warp=9"])
    def test_validate(self, change):
        with pytest.raises(ConfigError):
            apply_overrides(TB, [change]).validate()

    def test_continuum_lengths(self):
        cfg = ExperimentConfig("c", "continuum", params={"z_min": "-40pi", "z_max": "40*pi", "n_grid": 2048},
                               run={"dt": 0.0625, "t_total": 1.0})
        p = cfg.continuum_params()
        assert p.z_min == pytest.approx(-40 * math.pi) and p.z_max == pytest.approx(40 * math.pi)

    def test_load(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text(TB.to_yaml())
        assert load_config(f) == TB
        f.write_text("name: [unclosed")
        with pytest.raises(ConfigError):
            load_config(f)


def _series(n=5):
    t = np.linspace(0, 1, n)
    z = np.zeros(n)
    return ObservableSeries(t=t, P=1 - t / 3, v=np.sin(t), z=t**2, disp=t / 7, v2=t + 0.1, norm=np.ones(n),
                            P_err=z, v_err=z + 1e-3, z_err=z, disp_err=z, v2_err=z, norm_err=z)


class TestCsv:
    def test_roundtrip_exact(self, tmp_path):
        s = _series()
        path = tmp_path / "s.csv"
        write_series_csv(path, s, {"seed": 3, "config_sha256": "ab"})
        cols, meta = read_series_csv(path)
        assert tuple(cols) == CSV_COLUMNS
        np.testing.assert_array_equal(np.column_stack([cols[c] for c in CSV_COLUMNS]), series_table(s))
        assert meta == {"seed": "3", "config_sha256": "ab"}

    def test_header_order(self, tmp_path):
        path = tmp_path / "s.csv"
        write_series_csv(path, _series(), {})
        lines = path.read_text().splitlines()
        assert lines[0] == "# blochdamp-series v1"
        assert lines[1] == ",".join(CSV_COLUMNS)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_series_csv(path)

    def test_no_partial_files(self, tmp_path):
        write_table(tmp_path / "t.txt", {"a": [1, 2], "b": [3, 4]}, {"seed": 1})
        assert sorted(p.name for p in tmp_path.iterdir()) == ["t.txt"]
        text = (tmp_path / "t.txt").read_text().splitlines()
        assert text[0] == "# seed=1" and text[1] == "# a b"
