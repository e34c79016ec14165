import argparse
import json
import sys

import numpy as np
import pytest
sys.path.insert(0, '.')

from src.ai.autodiff import NonFiniteError
from src.ai.network import ModelParams, init_model, predict
from src.data.ply_reader import read_ply_file
from src.data.weights_io import read_weights_file, write_weights_file
from src.main import main
from src.models.config import ModelConfig, PreprocessConfig
from src.ui.cli import EXIT_CHECK_FAILED, resolve_threads, run_command

MODEL_FLAGS = ["--widths", "4,4,4", "--heads", "2", "--head-hidden", "4", "--patch-size", "8"]
TINY = ModelConfig(block_widths=(4, 4, 4), heads=2, patch_size=8, head_hidden=(4,))


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--points", "48", "--quiet"]) == 0
    return out


def test_synth_writes_ladder_dataset(dataset):
    assert (dataset / "manifest.csv").exists()
    assert len(list(dataset.glob("*.ply"))) == 20


def test_preprocess_one_file(dataset, tmp_path, capsys):
    cache = tmp_path / "cache"
    code = main(["preprocess", "--input", str(dataset / "sphere_0.ply"), "--out", str(cache),
                 "--patch-size", "8", "--partitions", "12"])
    assert code == 0
    assert len(list(cache.glob("*.patches"))) == 1
    line = capsys.readouterr().out.strip().splitlines()[-1]
    partitions = int(line.split("partitions=")[1].split()[0])
    assert 1 <= partitions <= 12


def test_preprocess_corrupt_file(tmp_path, capsys):
    bad = tmp_path / "broken.ply"
    bad.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\nend_header\n")
    code = main(["preprocess", "--input", str(bad), "--out", str(tmp_path / "cache")])
    assert code == 2
    assert "broken.ply" in capsys.readouterr().err


def test_train_then_predict_matches_library(dataset, tmp_path, capsys):
    weights = tmp_path / "model.weights"
    code = main(["train", "--manifest", str(dataset / "manifest.csv"), "--out", str(weights),
                 "--epochs", "1", "--lr", "1e-3", "--partitions", "2", "--plot", *MODEL_FLAGS])
    assert code == 0
    assert weights.exists()
    assert (tmp_path / "model_loss.csv").exists()
    assert (tmp_path / "loss_curve.png").exists()
    capsys.readouterr()

    ply = dataset / "box_2.ply"
    assert main(["predict", "--weights", str(weights), "--input", str(ply), "--partitions", "2"]) == 0
    printed = float(capsys.readouterr().out.strip())
    expected = predict(read_ply_file(ply), read_weights_file(weights), PreprocessConfig(patch_size=8, partitions=2))
    assert printed == expected


def test_predict_zero_model_prints_head_bias(dataset, tmp_path, capsys):
    tensors = {k: np.zeros_like(v) for k, v in init_model(TINY).tensors.items()}
    tensors["head.b1"] = np.array([2.5])
    weights = write_weights_file(ModelParams(TINY, tensors), tmp_path / "zero.weights")
    assert main(["predict", "--weights", str(weights), "--input", str(dataset / "torus_0.ply")]) == 0
    assert float(capsys.readouterr().out.strip().splitlines()[-1]) == pytest.approx(2.5, abs=1e-12)


def test_predict_missing_weights(dataset, tmp_path):
    assert main(["predict", "--weights", str(tmp_path / "none.weights"),
                 "--input", str(dataset / "torus_0.ply")]) == 2


def test_eval_constant_predictions_fail(dataset, tmp_path, capsys):
    tensors = {k: np.zeros_like(v) for k, v in init_model(TINY).tensors.items()}
    weights = write_weights_file(ModelParams(TINY, tensors), tmp_path / "zero.weights")
    code = main(["eval", "--weights", str(weights), "--manifest", str(dataset / "manifest.csv"),
                 "--partitions", "2"])
    assert code == 1
    assert "zero variance" in capsys.readouterr().err


def test_kfold_train_then_eval_directory(dataset, tmp_path, capsys):
    out = tmp_path / "folds"
    code = main(["train", "--manifest", str(dataset / "manifest.csv"), "--out", str(out),
                 "--epochs", "1", "--folds", "2", "--partitions", "2", "--threads", "2", *MODEL_FLAGS])
    assert code == 0
    assert sorted(p.name for p in out.glob("fold_*.weights")) == ["fold_0.weights", "fold_1.weights"]
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    assert len(report["folds"]) == 2
    capsys.readouterr()

    code = main(["eval", "--weights", str(out), "--manifest", str(out / "folds.csv"),
                 "--data-dir", str(dataset), "--partitions", "2"])
    assert code == 0
    evaluated = json.loads(capsys.readouterr().out)
    folds = evaluated["folds"]
    assert evaluated["mean_plcc"] == pytest.approx(sum(f["plcc"] for f in folds) / len(folds))
    assert evaluated["mean_srocc"] == pytest.approx(sum(f["srocc"] for f in folds) / len(folds))
    assert [f["plcc"] for f in folds] == pytest.approx([f["plcc"] for f in report["folds"]])


def test_train_fold_count_validation(dataset, tmp_path):
    code = main(["train", "--manifest", str(dataset / "manifest.csv"), "--out", str(tmp_path / "f"),
                 "--epochs", "0", "--folds", "5", *MODEL_FLAGS])
    assert code == 2


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--quiet"]) == 0
    assert "max relative error" in capsys.readouterr().out
    assert main(["gradcheck", "--corrupt-gradient", "--quiet"]) == 1


def test_thread_resolution(monkeypatch):
    monkeypatch.setenv("PCQA_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(5) == 5
    monkeypatch.setenv("PCQA_THREADS", "many")
    with pytest.raises(ValueError):
        resolve_threads(None)
    monkeypatch.delenv("PCQA_THREADS")
    assert resolve_threads(None) >= 1


def test_eval_directory_reuses_the_training_folds(dataset, tmp_path, capsys):
    out = tmp_path / "seeded"
    code = main(["train", "--manifest", str(dataset / "manifest.csv"), "--out", str(out), "--seed", "3",
                 "--epochs", "1", "--folds", "2", "--partitions", "2", *MODEL_FLAGS])
    assert code == 0
    trained = json.loads((out / "report.json").read_text())
    capsys.readouterr()

    code = main(["eval", "--weights", str(out), "--manifest", str(dataset / "manifest.csv"), "--partitions", "2"])
    assert code == 0
    evaluated = json.loads(capsys.readouterr().out)
    assert [f["test_references"] for f in evaluated["folds"]] == [f["test_references"] for f in trained["folds"]]
    assert [f["plcc"] for f in evaluated["folds"]] == pytest.approx([f["plcc"] for f in trained["folds"]])


def test_eval_directory_without_fold_record(dataset, tmp_path):
    out = tmp_path / "folds"
    assert main(["train", "--manifest", str(dataset / "manifest.csv"), "--out", str(out),
                 "--epochs", "0", "--folds", "2", "--partitions", "2", *MODEL_FLAGS]) == 0
    (out / "folds.csv").unlink()
    code = main(["eval", "--weights", str(out), "--manifest", str(dataset / "manifest.csv"), "--partitions", "2"])
    assert code == 2


def test_train_fills_and_reuses_patch_cache(dataset, tmp_path):
    cache = tmp_path / "cache"
    args = ["train", "--manifest", str(dataset / "manifest.csv"), "--epochs", "1", "--partitions", "2",
            "--cache-dir", str(cache), *MODEL_FLAGS]
    assert main([*args, "--out", str(tmp_path / "a.weights")]) == 0
    assert len(list(cache.glob("*.patches"))) == 20
    assert main([*args, "--out", str(tmp_path / "b.weights")]) == 0
    a, b = read_weights_file(tmp_path / "a.weights"), read_weights_file(tmp_path / "b.weights")
    for name in a.tensors:
        assert a.tensors[name].tobytes() == b.tensors[name].tobytes()


def test_non_finite_values_exit_as_failed_check():
    def diverge(args):
        raise NonFiniteError("softmax_rows produced a non-finite value")
    assert run_command(argparse.Namespace(handler=diverge)) == EXIT_CHECK_FAILED
