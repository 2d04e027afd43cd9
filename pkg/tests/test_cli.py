import json
import logging

import pandas as pd
import pytest

from distilvad.checkpoint import load_checkpoint, save_checkpoint
from distilvad.cli import main
from distilvad.metrics import read_report

SMOKE = {
    "model": {
        "blocks": 1, "attn_heads": 2, "head_dim": 4, "channels": 8,
        "head_resolutions": [[1, 1], [2, 2], [4, 4]], "input_resolution": [38, 38],
        "downsample_filters": [2, 4, 4, 4, 8], "head_filters": 4,
    },
    "train": {"epochs": 1, "pretrain_epochs": 1, "batch_size": 4, "lr": 0.001, "stride": 2,
              "max_batches_per_epoch": 1},
    "scene": {"resolution": [38, 38], "clip_length": 16, "train_clips": 1, "distill_clips": 1,
              "test_clips": 2, "anomaly_rate": 0.375},
    "teachers": [{"seed": 1, "noise_std": 0.0, "blur_radius": 0, "miss_rate": 0.0}, {"seed": 2}],
    "bench": {"warmup_frames": 1, "measured_frames": 2, "repetitions": 1, "variants": [{}]},
}


@pytest.fixture(autouse=True)
def reset_logging(monkeypatch):
    monkeypatch.setenv("DEBUG", "true")
    yield
    logging.getLogger("distilvad").handlers = []


@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "smoke.json"
    path.write_text(json.dumps(SMOKE))
    return str(path)


def error_line(capsys):
    return capsys.readouterr().err.strip().splitlines()[-1]


def test_missing_command_is_a_usage_error(capsys):
    assert main([]) == 1
    assert error_line(capsys).startswith("error code=1 kind=usage reason=")


def test_unknown_command(capsys):
    assert main(["train"]) == 1
    assert "kind=usage" in error_line(capsys)


def test_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"blockz": 2}}))
    assert main(["gen", "--config", str(path), "--out", str(tmp_path / "run")]) == 2
    line = error_line(capsys)
    assert line.startswith("error code=2 kind=config reason=")
    assert "model.blockz" in line


def test_missing_config_file(tmp_path, capsys):
    assert main(["gen", "--config", str(tmp_path / "none.json")]) == 2
    assert "kind=config" in error_line(capsys)


def test_eval_before_gen_is_a_runtime_error(tmp_path, smoke_config, capsys):
    assert main(["eval", "--config", smoke_config, "--out", str(tmp_path / "run")]) == 3
    assert error_line(capsys).startswith("error code=3 kind=empty_dataset")


def test_unknown_ablation_axis(tmp_path, smoke_config, capsys):
    code = main(["ablate", "--config", smoke_config, "--out", str(tmp_path / "run"), "--axes", "losses,depth"])
    assert code == 1
    assert "kind=unknown_axis" in error_line(capsys)


def test_bad_scorer_is_a_config_error(tmp_path, smoke_config, capsys):
    run = str(tmp_path / "run")
    assert main(["gen", "--config", smoke_config, "--out", run]) == 0
    assert main(["eval", "--config", smoke_config, "--out", run, "--scorer", "teacher:7"]) == 2


def test_full_pipeline(tmp_path, smoke_config, capsys):
    run = tmp_path / "run"
    common = ["--config", smoke_config, "--out", str(run), "--seed", "5"]

    assert main(["gen", *common]) == 0
    assert json.loads((run / "config.json").read_text())["scene"]["seed"] == 5
    assert (run / "data" / "test" / "test_001" / "labels.csv").exists()

    assert main(["pretrain", *common]) == 0
    assert main(["distill", *common]) == 0
    assert (run / "encoder.ckpt").exists() and (run / "student.ckpt").exists()
    losses = pd.read_csv(run / "losses.csv")
    assert list(dict.fromkeys(losses["phase"])) == ["pretrain", "distill"]

    capsys.readouterr()
    assert main(["eval", *common, "--scorer", "teacher:1"]) == 0
    assert "micro_auc=1.000000 macro_auc=1.000000" in capsys.readouterr().out

    assert main(["eval", *common]) == 0
    table, summary = read_report(str(run / "eval_report.csv"))
    assert list(table["video_id"]) == ["test_000", "test_001"]
    assert 0.0 <= summary["micro"] <= 1.0 and 0.0 <= summary["macro"] <= 1.0
    scores = pd.read_csv(run / "frame_scores.csv")
    assert len(scores) == 2 * 16

    assert main(["eval", *common, "--scorer", "ae"]) == 0

    assert main(["bench", *common, "--checkpoint", str(run / "student.ckpt"), "--replicas", "2"]) == 0
    bench = pd.read_csv(run / "bench.csv")
    assert len(bench) == 1
    assert bench["replicas"].iloc[0] == 2
    assert (bench["fps"] > 0).all()


def test_resume_continues_pretraining(tmp_path, smoke_config):
    run = tmp_path / "run"
    common = ["--config", smoke_config, "--out", str(run)]
    assert main(["gen", *common]) == 0
    assert main(["pretrain", *common]) == 0
    assert main(["pretrain", *common, "--resume", str(run / "encoder.ckpt")]) == 0
    losses = pd.read_csv(run / "losses.csv")
    assert losses["epoch"].max() == 1


def test_missing_resume_checkpoint(tmp_path, smoke_config, capsys):
    run = tmp_path / "run"
    common = ["--config", smoke_config, "--out", str(run)]
    assert main(["gen", *common]) == 0
    assert main(["distill", *common, "--resume", str(run / "nope.ckpt")]) == 3
    assert "kind=checkpoint" in error_line(capsys)


def test_repeated_runs_are_byte_identical(tmp_path, smoke_config):
    outputs = []
    for name in ("a", "b"):
        run = tmp_path / name
        common = ["--config", smoke_config, "--out", str(run), "--seed", "3"]
        for command in ("gen", "pretrain", "distill", "eval"):
            assert main([command, *common]) == 0
        outputs.append(run)
    first, second = outputs
    files = sorted(p.relative_to(first) for p in first.rglob("*")
                   if p.is_file() and "logs" not in p.parts and p.name != "config.json")
    assert any(p.suffix == ".pgm" for p in files)
    for path in files:
        assert (first / path).read_bytes() == (second / path).read_bytes(), path


def test_truncated_labels_file_is_a_runtime_error(tmp_path, smoke_config, capsys):
    run = tmp_path / "run"
    common = ["--config", smoke_config, "--out", str(run)]
    assert main(["gen", *common]) == 0
    (run / "data" / "test" / "test_000" / "labels.csv").write_text("")
    assert main(["eval", *common]) == 3
    assert error_line(capsys).startswith("error code=3 kind=labels reason=")


def test_checkpoint_without_epoch_is_a_runtime_error(tmp_path, smoke_config, capsys):
    run = tmp_path / "run"
    common = ["--config", smoke_config, "--out", str(run)]
    assert main(["gen", *common]) == 0
    assert main(["pretrain", *common]) == 0
    tensors = load_checkpoint(str(run / "encoder.ckpt"))
    del tensors["train.epoch"]
    save_checkpoint(str(run / "foreign.ckpt"), tensors)
    assert main(["pretrain", *common, "--resume", str(run / "foreign.ckpt")]) == 3
    line = error_line(capsys)
    assert line.startswith("error code=3 kind=checkpoint reason=")
    assert "train.epoch" in line


def test_unreadable_loss_file_is_replaced(tmp_path, smoke_config):
    run = tmp_path / "run"
    common = ["--config", smoke_config, "--out", str(run)]
    assert main(["gen", *common]) == 0
    (run / "losses.csv").write_text("")
    assert main(["pretrain", *common]) == 0
    assert set(pd.read_csv(run / "losses.csv")["phase"]) == {"pretrain"}
