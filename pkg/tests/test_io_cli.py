import json

import numpy as np
import pytest
import yaml

from wienerrom import io as wio
from wienerrom.cli import _parse_sweep, main
from wienerrom.core import CascadeCoefficients, CascadeModel, ComplexSeries, ModelOrders, NoiseModel
from wienerrom.predictors import BasisSpec
from wienerrom.sim import simulate

SMALL = {
    "name": "burgers-tiny",
    "model": {"kind": "burgers", "n_modes": 32, "nu": 0.05, "dt": 0.005, "stride": 4,
              "steps": 40000, "burn_in_steps": 2000, "n_observed": 4, "forced_modes": 4,
              "seed": 2, "record_forcing": True},
    "basis": {"conjugate": False},
    "fit": {"p": 1, "r": 1, "method": "nonlinear", "forcing": True, "forcing_order": 0,
            "max_evals": 60},
    "noise": {"trim": 100},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    full = root / "full.wds"
    assert main(["simulate-full", str(cfg), "--out", str(full), "--csv",
                 str(root / "full.csv")]) == 0
    model = root / "model.json"
    assert main(["fit", str(full), "--config", str(cfg), "--out", str(model)]) == 0
    return root, cfg, full, model


class TestDatasetFormat:
    def test_roundtrip(self, tmp_path, rng):
        a = rng.standard_normal((50, 3)) + 1j * rng.standard_normal((50, 3))
        b = rng.standard_normal(20) + 0j
        path = tmp_path / "x.wds"
        wio.write_dataset(path, {"observed": a, "other": b}, {"dt": 0.5, "label": "x"})
        header, arrays = wio.read_dataset(path)
        assert np.array_equal(arrays["observed"], a)
        assert arrays["other"].shape == (20, 1)
        assert header["dt"] == 0.5 and header["schema_version"] == wio.DATASET_SCHEMA_VERSION
        assert not (tmp_path / "x.wds.tmp").exists()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.wds"
        p.write_bytes(b"NOTADATASET")
        with pytest.raises(ValueError, match="not a dataset"):
            wio.read_dataset(p)

    def test_array_block_bit_exact(self, rng):
        a = rng.standard_normal((4, 5)) * 1e-300
        assert np.array_equal(wio.decode_array(wio.encode_array(a)), a)

    def test_config_hash_order_independent(self):
        assert wio.config_hash({"a": 1, "b": [1, 2]}) == wio.config_hash({"b": [1, 2], "a": 1})
        assert wio.config_hash({"a": 1}) != wio.config_hash({"a": 2})


class TestConfigs:
    @pytest.mark.parametrize("name", wio.PRESETS)
    def test_presets_validate(self, name):
        cfg = wio.load_config(name)
        assert cfg["model"]["kind"] in ("ks", "burgers")

    def test_unknown_key_names_path(self, tmp_path):
        bad = dict(SMALL, model=dict(SMALL["model"], bogus=1))
        p = tmp_path / "bad.yaml"
        p.write_text(yaml.safe_dump(bad))
        with pytest.raises(wio.ConfigError, match="model"):
            wio.load_config(p)

    def test_cli_reports_config_error(self, tmp_path, capsys):
        bad = dict(SMALL, fit={"p": -1})
        p = tmp_path / "bad.yaml"
        p.write_text(yaml.safe_dump(bad))
        assert main(["simulate-full", str(p), "--out", str(tmp_path / "o.wds")]) == 2
        assert "fit/p" in capsys.readouterr().err


class TestModelFiles:
    def test_bit_identical_simulation_after_reload(self, tmp_path, rng):
        model = CascadeModel(ModelOrders(2, 1), CascadeCoefficients(((-0.3, 0.2),)),
                             rng.standard_normal((2, 2)) * 0.1 + 0j, BasisSpec("state", 1), 2, 2)
        noise = NoiseModel(0.05 * (rng.standard_normal((16, 2, 2)) + 0j), real=False, seed=4)
        path = tmp_path / "m.json"
        wio.save_model(path, model, noise, {"note": "test"})
        m2, n2, prov = wio.load_model(path)
        init = rng.standard_normal((3, 2)) + 0j
        a = simulate(model, noise, init, 200, np.random.default_rng(1))
        b = simulate(m2, n2, init, 200, np.random.default_rng(1))
        assert np.array_equal(a.values, b.values)
        assert prov == {"note": "test"}

    def test_rejects_foreign_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValueError):
            wio.load_model(p)


class TestCLI:
    def test_sweep_parser(self):
        assert _parse_sweep("p=1..2 r=0..p") == [(1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]
        assert _parse_sweep("p=2..3 r=1..1") == [(2, 1), (3, 1)]
        with pytest.raises(SystemExit):
            _parse_sweep("p=banana")

    def test_zero_steps_rejected(self, work, tmp_path):
        _, cfg, full, model = work
        with pytest.raises(SystemExit, match="steps"):
            main(["simulate-full", str(cfg), "--steps", "0", "--out", str(tmp_path / "z.wds")])
        with pytest.raises(SystemExit, match="steps"):
            main(["simulate-reduced", str(model), str(full), "--steps", "0",
                  "--out", str(tmp_path / "z.wds")])

    def test_full_outputs(self, work):
        root, _, full, _ = work
        header, s = wio.load_series(full)
        assert s.values.shape == (10000, 4)
        assert header["physics_hash"]
        first = (root / "full.csv").read_text().splitlines()[0]
        assert first == "t,re_u1,im_u1,re_u2,im_u2,re_u3,im_u3,re_u4,im_u4"

    def test_fit_report(self, work):
        _, _, _, model = work
        rep = json.loads(model.with_suffix(".report.json").read_text())
        assert rep["summary"]["p"] == 1 and rep["summary"]["r"] == 1
        m, noise, prov = wio.load_model(model)
        assert noise is not None and prov["physics_hash"]

    def test_reduced_run_reproducible(self, work):
        root, _, full, model = work
        outs = []
        for k in range(2):
            out = root / f"red{k}.wds"
            assert main(["simulate-reduced", str(model), str(full), "--steps", "500",
                         "--seed", "3", "--out", str(out)]) == 0
            outs.append(wio.read_dataset(out)[1]["observed"])
        assert np.array_equal(outs[0], outs[1])

    def test_single_member_forecast(self, work):
        root, _, full, model = work
        prefix = root / "fc"
        assert main(["forecast", str(model), str(full), "--ens", "1", "--horizon", "2",
                     "--pieces", "3", "--seed", "1", "--out", str(prefix)]) == 0
        bands = np.loadtxt(str(prefix) + ".bands.csv", delimiter=",", skiprows=1)
        d = 4
        q05, q95, mean = bands[:, 1:1 + d], bands[:, 1 + d:1 + 2 * d], bands[:, 1 + 2 * d:1 + 3 * d]
        assert np.allclose(q05, mean) and np.allclose(q95, mean)
        table = np.loadtxt(str(prefix) + ".csv", delimiter=",", skiprows=1)
        assert table.shape == (100, 5)
        summary = json.loads((root / "fc.json").read_text())
        assert summary["pieces"] == 3

    def test_stats_self_comparison(self, work):
        root, _, full, _ = work
        prefix = root / "self"
        assert main(["stats", str(full), str(full), "--max-lag", "2", "--out", str(prefix)]) == 0
        s = json.loads((root / "self.json").read_text())["summary"]
        assert s["acf_max_abs_diff"] == 0 and s["ccf_max_abs_diff"] == 0
        assert max(s["spectrum_rel_diff"]) == 0 and s["powerspec_rel_diff"] == 0
        for ext in ("acf", "ccf", "marginal", "spectrum", "powerspec"):
            assert (root / f"self.{ext}.csv").exists()

    def test_stats_reduced_vs_full_allowed(self, work):
        root, _, full, model = work
        red = root / "red_for_stats.wds"
        main(["simulate-reduced", str(model), str(full), "--steps", "3000", "--seed", "1",
              "--out", str(red)])
        assert main(["stats", str(full), str(red), "--which", "spectrum",
                     "--out", str(root / "rvf")]) == 0

    def test_stats_refuses_mismatched_provenance(self, work, tmp_path):
        _, _, full, _ = work
        header, arrays = wio.read_dataset(full)
        header["physics_hash"] = "0000000000000000"
        other = tmp_path / "other.wds"
        wio.write_dataset(other, arrays, header)
        with pytest.raises(SystemExit, match="provenance"):
            main(["stats", str(full), str(other), "--out", str(tmp_path / "s")])
        assert main(["stats", str(full), str(other), "--force", "--which", "acf",
                     "--out", str(tmp_path / "s")]) == 0
        assert json.loads((tmp_path / "s.json").read_text())["provenance"]["forced"]

    def test_dimension_mismatch(self, work, tmp_path):
        _, _, full, _ = work
        header, arrays = wio.read_dataset(full)
        wio.write_dataset(tmp_path / "d2.wds", {"observed": arrays["observed"][:, :2]}, header)
        with pytest.raises(SystemExit, match="dimension"):
            main(["stats", str(full), str(tmp_path / "d2.wds"), "--out", str(tmp_path / "s")])

    def test_export_csv(self, tmp_path):
        s = ComplexSeries(np.array([[1 + 2j], [3 - 1j]]), 0.5)
        wio.export_csv(tmp_path / "a.csv", s, t0=1.0)
        data = np.loadtxt(tmp_path / "a.csv", delimiter=",", skiprows=1)
        assert np.allclose(data, [[1.0, 1, 2], [1.5, 3, -1]])

    def test_sweep_writes_table(self, work):
        root, cfg, full, _ = work
        out = root / "sweep"
        assert main(["sweep", str(full), "--config", str(cfg), "--sweep", "p=1..1 r=0..1",
                     "--check-steps", "200", "--out", str(out)]) == 0
        rows = json.loads((root / "sweep.json").read_text())["sweep"]
        assert [(r["p"], r["r"]) for r in rows] == [(1, 0), (1, 1)]
        assert (root / "sweep.csv").read_text().startswith("p,r,mse")

    def test_thread_limit_flag(self, work):
        root, _, full, _ = work
        assert main(["--threads", "1", "stats", str(full), str(full), "--which", "spectrum",
                     "--out", str(root / "thr")]) == 0
