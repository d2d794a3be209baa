import json

import numpy as np
import pytest

from src.cli import main
from src.services.volume_store import load_volume

TINY_CONFIG = """
# reduced model for fast runs
patch_side = 8
embed_dim = 8
heads = 2
kernels = 3, 3
strides = 2, 1
dilations = 1, 1
paddings = 1, 1
epochs = 2
batch_size = 2
patches_per_image = 1
max_steps = none
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture
def data_dir(tmp_path, tiny_config):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(tiny_config), "--out", str(out),
                 "--count", "2", "--seed", "1", "--log-level", "WARNING"]) == 0
    return out


def test_shape_check_prints_plan(capsys):
    """Test shape-check prints the default stage chain"""
    assert main(["shape-check", "--preset", "paper", "--log-level", "WARNING"]) == 0
    out = capsys.readouterr().out
    assert "sides: 64 -> 32 -> 32 -> 32" in out
    assert "output: 1x64x64" in out


def test_shape_check_defaults_to_model_defaults(monkeypatch, capsys):
    """Test shape-check without flags plans the default configuration"""
    monkeypatch.setenv("TEDNET_PRESET", "desk")
    assert main(["shape-check", "--log-level", "WARNING"]) == 0
    assert "sides: 64 -> 32 -> 32 -> 32" in capsys.readouterr().out


def test_shape_check_desk_preset(capsys):
    """Test the desk preset halves the patch and every stage side"""
    assert main(["shape-check", "--preset", "desk", "--log-level", "WARNING"]) == 0
    out = capsys.readouterr().out
    assert "sides: 32 -> 16 -> 16 -> 16" in out
    assert "output: 1x32x32" in out


def test_full_gradcheck_passes(capsys):
    """Test the gradcheck subcommand without a filter checks every case and succeeds"""
    assert main(["gradcheck", "--log-level", "WARNING"]) == 0
    captured = capsys.readouterr()
    assert "msa" in captured.out and "tednet.forward" in captured.out
    assert "FAILED" not in captured.out


def test_gen_data_is_deterministic(tmp_path, tiny_config, data_dir):
    """Test two runs with the same seed write identical volumes"""
    again = tmp_path / "again"
    assert main(["gen-data", "--config", str(tiny_config), "--out", str(again),
                 "--count", "2", "--seed", "1", "--log-level", "WARNING"]) == 0
    for name in ("clean.tdv", "noisy.tdv"):
        assert (again / name).read_bytes() == (data_dir / name).read_bytes()
    clean = load_volume(data_dir / "clean.tdv")
    assert (clean.count, clean.height, clean.width) == (2, 16, 16)


def test_eval_identical_volumes(data_dir, tmp_path, capsys):
    """Test a volume scored against itself gives ssim 1 and rmse 0"""
    clean = str(data_dir / "clean.tdv")
    report_path = tmp_path / "report.json"
    assert main(["eval", "--in", clean, "--reference", clean, "--out", str(report_path),
                 "--log-level", "WARNING"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["mean"]["ssim"] == pytest.approx(1.0)
    assert printed["mean"]["rmse"] == 0.0
    assert json.loads(report_path.read_text()) == printed


def test_train_then_denoise(data_dir, tmp_path, tiny_config, capsys):
    """Test the train and denoise subcommands chain through their files"""
    params = tmp_path / "model" / "params.tdnw"
    log = tmp_path / "loss.log"
    assert main(["train", "--config", str(tiny_config), "--in", str(data_dir), "--out", str(params),
                 "--log", str(log), "--log-level", "WARNING"]) == 0
    assert params.exists()
    assert len(log.read_text().splitlines()) == 2
    assert "trained" in capsys.readouterr().out

    denoised = tmp_path / "denoised.tdv"
    assert main(["denoise", "--config", str(tiny_config), "--in", str(data_dir / "noisy.tdv"),
                 "--out", str(denoised), "--params", str(params), "--workers", "2",
                 "--log-level", "WARNING"]) == 0
    out = load_volume(denoised)
    assert out.pixels.shape == (2, 16, 16)
    assert np.all(np.isfinite(out.pixels))


def test_denoise_with_mismatched_config_fails(data_dir, tmp_path, tiny_config, capsys):
    """Test loading parameters into another architecture is reported on stderr"""
    params = tmp_path / "params.tdnw"
    assert main(["train", "--config", str(tiny_config), "--in", str(data_dir), "--out", str(params),
                 "--log-level", "WARNING"]) == 0
    capsys.readouterr()
    code = main(["denoise", "--preset", "desk", "--in", str(data_dir / "noisy.tdv"),
                 "--out", str(tmp_path / "d.tdv"), "--params", str(params), "--log-level", "WARNING"])
    assert code == 1
    assert capsys.readouterr().err.startswith("error:")


def test_missing_input_is_error(tmp_path, capsys):
    """Test a missing volume exits with code 1 and a one-line message"""
    code = main(["eval", "--in", str(tmp_path / "nope.tdv"), "--reference", str(tmp_path / "nope.tdv"),
                 "--log-level", "WARNING"])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert len(err.strip().splitlines()) == 1


def test_bad_config_key_is_error(tmp_path, capsys):
    """Test an unknown key in the config file exits with code 1"""
    path = tmp_path / "bad.cfg"
    path.write_text("embed_dimm = 8\n")
    assert main(["shape-check", "--config", str(path), "--log-level", "WARNING"]) == 1
    assert "unknown configuration key" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["shape-check", "--no-such-flag"],
    ["train", "--out", "x.tdnw"],
    ["gen-data", "--out", "d", "--seed", "-3"],
    [],
])
def test_usage_errors_exit_two(argv, capsys):
    """Test unknown subcommands and bad flags are usage errors"""
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_gradcheck_subset(capsys):
    """Test the gradcheck subcommand runs selected cases"""
    assert main(["gradcheck", "--only", "matmul", "softmax_rows", "--log-level", "WARNING"]) == 0
    out = capsys.readouterr().out
    assert "matmul" in out and "softmax_rows" in out
    assert "FAILED" not in out


@pytest.mark.slow
def test_end_to_end_improves_metrics(tmp_path, capsys):
    """Test a trained model beats the noisy input on held-out phantoms"""
    config = tmp_path / "e2e.cfg"
    config.write_text(
        "patch_side = 16\nembed_dim = 32\nheads = 4\n"
        "kernels = 3, 3, 3\nstrides = 2, 1, 1\ndilations = 1, 2, 1\npaddings = 1, 2, 1\n"
        "learning_rate = 1e-3\nepochs = 400\nbatch_size = 8\npatches_per_image = 2\nmax_steps = 1500\n"
    )
    common = ["--config", str(config), "--seed", "0", "--log-level", "WARNING"]
    train_dir, test_dir = tmp_path / "train", tmp_path / "test"
    assert main(["gen-data", "--out", str(train_dir), "--count", "16", "--side", "48",
                 "--noise-sigma", "0.1"] + common) == 0
    assert main(["gen-data", "--out", str(test_dir), "--count", "8", "--side", "48",
                 "--noise-sigma", "0.1", "--config", str(config), "--seed", "1",
                 "--log-level", "WARNING"]) == 0
    params = tmp_path / "params.tdnw"
    assert main(["train", "--in", str(train_dir), "--out", str(params)] + common) == 0
    denoised = tmp_path / "denoised.tdv"
    assert main(["denoise", "--in", str(test_dir / "noisy.tdv"), "--out", str(denoised),
                 "--params", str(params)] + common) == 0
    capsys.readouterr()

    reference = str(test_dir / "clean.tdv")
    assert main(["eval", "--in", str(test_dir / "noisy.tdv"), "--reference", reference,
                 "--log-level", "WARNING"]) == 0
    noisy_report = json.loads(capsys.readouterr().out)
    assert main(["eval", "--in", str(denoised), "--reference", reference, "--log-level", "WARNING"]) == 0
    denoised_report = json.loads(capsys.readouterr().out)
    assert denoised_report["mean"]["ssim"] > noisy_report["mean"]["ssim"]
    assert denoised_report["mean"]["rmse"] < noisy_report["mean"]["rmse"]
