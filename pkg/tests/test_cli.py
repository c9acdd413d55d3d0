import json

import numpy as np
import pytest

from dpad.cli import main
from dpad.harness import read_components_csv
from dpad.pipeline import load_checkpoint

from helpers import naive_dominant_bin


@pytest.fixture()
def two_tone_csv(tmp_path):
    t = np.arange(336.0)
    x = np.sin(2 * np.pi * 0.2 * t) + np.sin(2 * np.pi * 0.02 * t)
    lines = ["date,signal"] + [f"{int(i)},{v:.17g}" for i, v in zip(t, x)]
    path = tmp_path / "two_tone.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path, x


@pytest.fixture()
def train_csv(tmp_path):
    t = np.arange(600.0)
    x = np.sin(2 * np.pi * t / 12) + 0.5 * np.sin(2 * np.pi * t / 48)
    lines = ["date,load"] + [f"{int(i)},{v:.17g}" for i, v in zip(t, x)]
    path = tmp_path / "train.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def small_config(tmp_path):
    cfg = {"lookback": 24, "horizon": 6, "components": 3, "levels": 2,
           "hidden_dim": 8, "embed_dim": 8, "graph_in_dim": 8, "graph_mid_dim": 8,
           "fuse_out_dim": 8, "max_epochs": 2, "batch_size": 16,
           "learning_rate": 1e-3, "seed": 4}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def trained_checkpoint(tmp_path, train_csv, small_config):
    ckpt = tmp_path / "model.npz"
    code = main(["train", "--config", str(small_config), "--data", str(train_csv),
                 "--out", str(ckpt)])
    assert code == 0
    return ckpt


class TestDecompose:
    def test_two_tone_export(self, tmp_path, two_tone_csv, capsys):
        path, x = two_tone_csv
        out_dir = tmp_path / "out"
        assert main(["decompose", "--input", str(path), "--out", str(out_dir)]) == 0
        matrix = read_components_csv(out_dir / "components_signal.csv")
        assert matrix.shape == (336, 6)
        # reconstruction survives the 17-digit round trip
        assert np.abs(matrix.sum(axis=1) - x).max() < 1e-9
        # frequency ordering matches the direct decomposition contract
        t = np.arange(336.0)
        fast_bin = naive_dominant_bin(np.sin(2 * np.pi * 0.2 * t))
        assert naive_dominant_bin(matrix[:, 0]) == fast_bin
        summary = (out_dir / "frequency_summary.csv").read_text().splitlines()
        assert summary[0] == "channel,column,dominant_bin,dominant_freq_cycles_per_sample,rms"
        assert len(summary) == 1 + 6

    def test_multi_level_export(self, tmp_path, two_tone_csv):
        path, _ = two_tone_csv
        out_dir = tmp_path / "out2"
        assert main(["decompose", "--input", str(path), "--out", str(out_dir),
                     "--levels", "2", "--k", "3"]) == 0
        matrix = read_components_csv(out_dir / "components_signal.csv")
        assert matrix.shape == (336, 6)  # 2^(2-1) * 3
        header = (out_dir / "components_signal.csv").read_text().splitlines()[0]
        assert header == "t,leaf1_imf1,leaf1_imf2,leaf1_residual,leaf2_imf1,leaf2_imf2,leaf2_residual"

    def test_missing_input_fails_cleanly(self, tmp_path, capsys):
        code = main(["decompose", "--input", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestTrainEvalPredict:
    def test_full_cycle(self, tmp_path, train_csv, small_config, capsys):
        ckpt = trained_checkpoint(tmp_path, train_csv, small_config)
        assert ckpt.exists()
        metrics = json.loads(ckpt.with_suffix(".metrics.json").read_text())
        assert metrics["epochs"] and "val_mse" in metrics["epochs"][0]
        capsys.readouterr()

        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(train_csv)]) == 0
        payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert set(payload) == {"mse", "mae"}
        assert np.isfinite(payload["mse"]) and np.isfinite(payload["mae"])

        forecast = tmp_path / "forecast.csv"
        assert main(["predict", "--checkpoint", str(ckpt), "--input", str(train_csv),
                     "--out", str(forecast)]) == 0
        lines = forecast.read_text().splitlines()
        assert lines[0] == "t,load"
        assert len(lines) == 1 + 6

    def test_eval_rejects_wrong_horizon(self, tmp_path, train_csv, small_config, capsys):
        ckpt = trained_checkpoint(tmp_path, train_csv, small_config)
        capsys.readouterr()
        code = main(["eval", "--checkpoint", str(ckpt), "--data", str(train_csv),
                     "--horizon", "96"])
        assert code == 1
        assert "horizon" in capsys.readouterr().err

    def test_dpad_seed_env_overrides(self, tmp_path, train_csv, small_config, monkeypatch):
        monkeypatch.setenv("DPAD_SEED", "777")
        ckpt = trained_checkpoint(tmp_path, train_csv, small_config)
        assert load_checkpoint(ckpt).config.seed == 777

    def test_cli_flags_override_config(self, tmp_path, train_csv, small_config):
        ckpt = tmp_path / "m.npz"
        assert main(["train", "--config", str(small_config), "--data", str(train_csv),
                     "--out", str(ckpt), "--horizon", "4", "--seed", "9"]) == 0
        loaded = load_checkpoint(ckpt)
        assert loaded.config.horizon == 4
        assert loaded.config.seed == 9


class TestCliContract:
    def test_unknown_flag_exits_2(self, capsys):
        assert main(["decompose", "--nonsense", "x"]) == 2
        capsys.readouterr()

    def test_unknown_command_exits_2(self, capsys):
        assert main(["frobnicate"]) == 2
        capsys.readouterr()

    def test_selftest_passes(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5 and "FAIL" not in out
