import csv
import hashlib
import json

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from letnet import cli
from letnet.cli import cell_seeds, cmd_eval, cmd_export_activations, cmd_gen, cmd_sweep, cmd_train, main, parse_layers
from letnet.config import SCALES, ExperimentConfig, load_config
from letnet.errors import ConfigError, TrainingError
from letnet.nets import Arch, NetworkParams, forward, init_params, load_checkpoint, save_checkpoint
from letnet.sensing import load_dataset

TINY = dict(
    n=16, m=12, n_train=4, n_val=2, n_test=5, trials=1, layers=3, epochs=2,
    ista_lambda_grid=[1e-3, 0.1, 3], net_lambda_grid=[0.05, 0.5, 2], solver_iters=20,
)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


@pytest.fixture
def cfg():
    return load_config(overrides=TINY)


@pytest.fixture
def trained(cfg, tmp_path):
    data = cmd_gen(cfg, tmp_path / "data")[0]
    ckpt, log = cmd_train(cfg, data, tmp_path / "models")
    return cfg, data, ckpt, log, tmp_path


class TestConfig:
    def test_empty_config_is_desk(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{}")
        c = load_config(path)
        assert (c.n, c.m, c.n_train, c.n_val, c.n_test, c.trials, c.L) == (64, 45, 50, 10, 100, 3, 20)

    def test_full_scale_preset(self):
        c = load_config(scale="paper")
        assert (c.n, c.m, c.n_train, c.n_val, c.n_test, c.trials, c.epochs) == (256, 180, 100, 20, 100, 10, 60)
        assert c.L == 100 and load_config(scale="paper", overrides={"arch": "fletnet"}).L == 50
        assert SCALES["paper"]["m"] == int(np.ceil(0.7 * 256))

    @pytest.mark.parametrize("bad", [{"bogus": 1}, {"rho": []}, {"m": 70}, {"arch": "mlp"}, {"seed": -1}])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            load_config(overrides=bad)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_hash_tracks_content(self, cfg):
        assert cfg.config_hash() == load_config(overrides=TINY).config_hash()
        assert cfg.config_hash() != load_config(overrides={**TINY, "seed": 1}).config_hash()

    def test_grids(self, cfg):
        np.testing.assert_allclose(cfg.ista_grid, [1e-3, 1e-2, 1e-1], rtol=1e-12)
        np.testing.assert_allclose(ExperimentConfig().ista_grid, np.logspace(-5, -1, 10), rtol=1e-12)


class TestGen:
    def test_cells_and_seeds(self, cfg, tmp_path):
        c = load_config(overrides={**TINY, "trials": 2, "rho": [0.1, 0.2]})
        paths = cmd_gen(c, tmp_path)
        assert len(paths) == 4 and len({_digest(p) for p in paths}) == 4
        ds = load_dataset(paths[0])
        assert ds.seed == cell_seeds(0, 0, 0, 0)[1]
        assert [len(ds.split(s)) for s in ("train", "validation", "test")] == [4, 2, 5]

    def test_seed_changes_data(self, cfg, tmp_path):
        a = cmd_gen(cfg, tmp_path / "a")[0]
        b = cmd_gen(load_config(overrides={**TINY, "seed": 5}), tmp_path / "b")[0]
        assert _digest(a) != _digest(b)


class TestTrainEval:
    def test_outputs(self, trained):
        cfg, data, ckpt, log, tmp = trained
        ck = load_checkpoint(ckpt)
        assert ck.params.arch is Arch.VAR and ck.params.L == 3 and ck.lam in cfg.net_grid
        text = log.read_text()
        assert f"# config_hash={cfg.config_hash()}" in text and "# seed=0" in text
        rows = _rows(log)
        assert [int(r["epoch"]) for r in rows] == [0, 1, 2]
        J = [float(r["J_train"]) for r in rows]
        assert J[1] <= J[0] and J[2] <= J[1]

    def test_zero_epochs_is_initialization(self, cfg, tmp_path):
        c = load_config(overrides={**TINY, "epochs": 0})
        data = cmd_gen(c, tmp_path)[0]
        ck = load_checkpoint(cmd_train(c, data, tmp_path / "m")[0])
        eta = load_dataset(data).model.eta
        np.testing.assert_array_equal(ck.params.coeffs, init_params(Arch.VAR, 3, 5, ck.lam * eta).coeffs)

    def test_eval_report(self, trained):
        cfg, data, ckpt, _, tmp = trained
        report = cmd_eval(cfg, ckpt, data, tmp / "r")
        assert [r["method"] for r in _rows(report)] == ["ista", "fista", "network", "network-init"]
        assert all(int(r["n_test"]) == 5 for r in _rows(report))
        curves = sorted(p.name for p in (tmp / "r").glob("*_curves_*.csv"))
        assert len(curves) == 2
        net = _rows(tmp / "r" / curves[1])
        assert [int(r["layer"]) for r in net] == [1, 2, 3]

    def test_eval_does_not_mutate(self, trained):
        cfg, data, ckpt, _, tmp = trained
        before = _digest(data), _digest(ckpt)
        cmd_eval(cfg, ckpt, data, tmp / "r", timing=True)
        assert (_digest(data), _digest(ckpt)) == before
        assert (tmp / "r" / f"{data.stem}_letnet-var_timing.csv").exists()

    def test_dimension_mismatch(self, trained, tmp_path):
        cfg, data, _, _, _ = trained
        path = tmp_path / "other.letc"
        save_checkpoint(path, init_params(Arch.VAR, 3, 5, 0.1), 0.1, n=99)
        with pytest.raises(ConfigError):
            cmd_eval(cfg, path, data, tmp_path)

    @pytest.mark.parametrize("arch", ["letnet-fixed", "fletnet"])
    def test_other_architectures(self, arch, tmp_path):
        c = load_config(overrides={**TINY, "arch": arch})
        data = cmd_gen(c, tmp_path)[0]
        ckpt, _ = cmd_train(c, data, tmp_path / "m")
        assert load_checkpoint(ckpt).params.arch is Arch(arch)
        assert cmd_eval(c, ckpt, data, tmp_path / "r").exists()

    def test_identity_noiseless_toy(self, tmp_path):
        """Square orthonormal-ish sensing without noise: every solver is near exact."""
        c = load_config(overrides={**TINY, "m": 16, "snr_db": [float("inf")], "rho": [0.1], "epochs": 0,
                                   "ista_lambda_grid": [1e-5, 1e-5, 1], "solver_iters": 400})
        data = cmd_gen(c, tmp_path)[0]
        ckpt, _ = cmd_train(c, data, tmp_path / "m")
        rows = {r["method"]: float(r["mean_snr_db"]) for r in _rows(cmd_eval(c, ckpt, data, tmp_path / "r"))}
        assert rows["fista"] > 40.0


class TestDeterminism:
    def test_byte_identical(self, cfg, tmp_path):
        digests = []
        for run in ("a", "b"):
            root = tmp_path / run
            data = cmd_gen(cfg, root / "data")[0]
            ckpt, log = cmd_train(cfg, data, root / "models")
            report = cmd_eval(cfg, ckpt, data, root / "reports")
            files = [data, ckpt, log, *sorted((root / "models").glob("*_cv.csv")), report,
                     *sorted((root / "reports").glob("*_curves_*.csv"))]
            digests.append([(f.name, _digest(f)) for f in files])
        assert digests[0] == digests[1]

    def test_sweep(self, tmp_path):
        c = load_config(overrides={**TINY, "rho": [0.1, 0.2], "net_lambda_grid": [0.1, 0.1, 1], "epochs": 1})
        rows = _rows(cmd_sweep(c, tmp_path / "s"))
        assert {(float(r["rho"]), r["method"]) for r in rows} >= {(0.1, "network"), (0.2, "ista")}
        assert all(int(r["trials"]) == 1 for r in rows)
        again = _rows(cmd_sweep(c, tmp_path / "t"))
        assert rows == again
        pooled = load_config(overrides={**c.to_dict(), "workers": 2})
        assert _rows(cmd_sweep(pooled, tmp_path / "p")) == rows


class TestExport:
    def test_layer_range(self, trained):
        _, _, ckpt, _, tmp = trained
        paths = cmd_export_activations(ckpt, "2-3", tmp / "act")
        assert [p.name[-12:] for p in paths] == ["layer002.csv", "layer003.csv"]
        with pytest.raises(ConfigError):
            cmd_export_activations(ckpt, "2-9", tmp / "act")
        assert parse_layers("8-14", 20) == list(range(8, 15))

    def test_identity_activation_has_zero_regularizer(self, tmp_path):
        p = NetworkParams(Arch.VAR, 2, 5, 0.1, np.tile(np.eye(5)[0], 2))
        save_checkpoint(tmp_path / "id.letc", p, 0.1, n=16)
        (path,) = cmd_export_activations(tmp_path / "id.letc", "1", tmp_path, "-3,3,201")
        vals = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_allclose(vals[:, 0], vals[:, 1], rtol=0, atol=0)
        assert np.max(np.abs(vals[:, 3])) <= 1e-12

    def test_interpolated_export_reproduces_forward(self, trained):
        cfg, data, ckpt, _, tmp = trained
        params = load_checkpoint(ckpt).params
        ds = load_dataset(data)
        tr = forward(params, ds.model, ds.split("test").b)
        lim = float(np.abs(tr.x_tilde).max()) * 1.01
        t = 2
        (path,) = cmd_export_activations(ckpt, str(t), tmp / "act", f"{-lim},{lim},4001")
        vals = np.loadtxt(path, delimiter=",", skiprows=1)
        spline = CubicSpline(vals[:, 0], vals[:, 1])
        err = np.abs(spline(tr.x_tilde[t - 1]) - tr.x[t])
        assert err.max() <= 1e-6


class TestMain:
    def test_round_trip(self, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps(TINY))
        assert main(["gen", "--config", str(conf), "--out", str(tmp_path / "d")]) == 0
        data = capsys.readouterr().out.split()[0]
        assert main(["train", "--config", str(conf), "--dataset", data, "--out", str(tmp_path / "m")]) == 0
        ckpt = capsys.readouterr().out.split()[0]
        assert main(["eval", "--config", str(conf), "--dataset", data, "--checkpoint", ckpt, "--out", str(tmp_path / "r")]) == 0
        assert main(["export-activations", "--checkpoint", ckpt, "--layers", "1-2", "--out", str(tmp_path / "a")]) == 0

    def test_config_errors_exit_2(self, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text('{"bogus": 1}')
        assert main(["gen", "--config", str(conf)]) == 2
        assert main(["train", "--dataset", str(tmp_path / "missing.letd")]) == 2
        bad = tmp_path / "bad.letd"
        bad.write_bytes(b"XXXX" + bytes(60))
        assert main(["train", "--dataset", str(bad)]) == 2
        assert "error" in capsys.readouterr().err

    def test_numerical_abort_exit_3(self, cfg, tmp_path, monkeypatch):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps(TINY))
        data = cmd_gen(cfg, tmp_path)[0]

        def boom(*args, **kwargs):
            raise TrainingError("injected")

        monkeypatch.setattr(cli, "train", boom)
        assert main(["train", "--config", str(conf), "--dataset", str(data), "--out", str(tmp_path)]) == 3
