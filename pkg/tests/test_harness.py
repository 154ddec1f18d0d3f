import dataclasses
import json
import math

import numpy as np
import pytest
import torch

from handobj.cli import main
from handobj.config import RunConfig, toy
from handobj.evaluation import evaluate, export_prediction, load_report, predict, save_report
from handobj.io import container_bytes, container_from_bytes, read_ply
from handobj.metrics import total_loss
from handobj.model import collate
from handobj.synth import read_dataset, write_dataset
from handobj.training import (
    CheckpointError,
    checkpoint_bytes,
    cosine_lr,
    init_state,
    load_checkpoint,
    save_checkpoint,
    state_from_bytes,
    train,
    train_step,
)
from handobj.metrics import LossWeights


def quick(config, **kw):
    return dataclasses.replace(config, augment=False, log_every=0, **kw)


@pytest.fixture(scope="module")
def trained(toy_config, toy_scenes):
    return train(quick(toy_config, steps=3), toy_scenes)


class TestSchedule:
    def test_endpoints(self):
        assert cosine_lr(0, 2000, 1e-4) == 1e-4
        assert cosine_lr(1999, 2000, 1e-4) < 1e-8 * 1e-4
        assert cosine_lr(1000, 2001, 1e-4) == pytest.approx(0.5e-4)

    def test_monotone(self):
        lrs = [cosine_lr(t, 50, 1.0) for t in range(50)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))


class TestTraining:
    def test_descent(self, toy64_config, toy_scenes):
        config = quick(toy64_config, batch_size=1, base_lr=1e-5, steps=100)
        sample = toy_scenes[:1]
        state = init_state(config)
        batch = collate(sample, config)

        def loss():
            with torch.no_grad():
                return float(total_loss(state.model(batch), batch.target)[0])

        before = loss()
        train_step(state, sample, LossWeights())
        assert loss() < before

    def test_log_records_components(self, trained):
        assert [r["step"] for r in trained.log] == [0, 1, 2]
        for r in trained.log:
            assert {"pose", "cd_sparse", "cd_dense", "lr", "loss"} <= set(r)
            assert r["loss"] == pytest.approx(2 * r["pose"] + 2 * r["cd_sparse"] + r["cd_dense"], rel=1e-6)

    def test_identical_logs(self, toy_config, toy_scenes, tmp_path):
        config = dataclasses.replace(toy_config, steps=3, log_every=0)  # augmentation on
        train(config, toy_scenes, tmp_path / "a")
        train(config, toy_scenes, tmp_path / "b")
        for name in ("loss_log.jsonl", "model.ckpt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resume_matches_uninterrupted(self, toy_config, toy_scenes, tmp_path):
        full = train(dataclasses.replace(toy_config, steps=4, log_every=0, checkpoint_every=2), toy_scenes, tmp_path)
        resumed = load_checkpoint(tmp_path / "step_000002.ckpt")
        train(resumed.config, toy_scenes, state=resumed)
        assert resumed.log == full.log[2:]
        assert checkpoint_bytes(resumed) == checkpoint_bytes(full)

    def test_non_finite_abort(self, toy_config, toy_scenes):
        state = init_state(quick(toy_config))
        with torch.no_grad():
            state.model.sparse_decoder.point_head.weight.fill_(float("nan"))
        with pytest.raises(FloatingPointError, match=r"step 0: pose=.*cd_sparse=nan"):
            train(state.config, toy_scenes, state=state)

    def test_empty_training_set(self, toy_config):
        with pytest.raises(ValueError):
            train(toy_config, [])


class TestCheckpoint:
    def test_byte_round_trip(self, trained, tmp_path):
        save_checkpoint(trained, tmp_path / "a.ckpt")
        again = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(again, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert again.step == 3

    def test_fresh_round_trip(self, toy_config):
        buf = checkpoint_bytes(init_state(toy_config))
        assert checkpoint_bytes(state_from_bytes(buf)) == buf

    def test_unknown_version(self, trained):
        header, tensors = container_from_bytes(checkpoint_bytes(trained))
        header["version"] = 2
        with pytest.raises(CheckpointError, match="version 2"):
            state_from_bytes(container_bytes(header, tensors))

    def test_config_mismatch(self, trained):
        other = dataclasses.replace(trained.config, vit_dim=32)
        with pytest.raises(CheckpointError, match="vit_dim"):
            state_from_bytes(checkpoint_bytes(trained), expect=other)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.ckpt")


class TestEvaluation:
    def test_oracle(self, toy_config, toy_scenes):
        rep = evaluate(None, toy_scenes, oracle=True, config=toy_config)
        assert rep.cd_cm2 == [0.0] * 4
        assert rep.fs_at_5mm == [1.0] * 4 and rep.fs_at_10mm == [1.0] * 4

    def test_zero_noise_hand_error(self, trained, toy_scenes):
        rep = evaluate(trained.model, toy_scenes, noise_sigma=0.0)
        assert rep.hand_error_mm == [0.0] * 4
        noisy = evaluate(trained.model, toy_scenes, noise_sigma=0.1)
        assert min(noisy.hand_error_mm) > 0

    def test_report_means(self, trained, toy_scenes, tmp_path):
        rep = evaluate(trained.model, toy_scenes, n_eval_points=300)
        save_report(rep, tmp_path / "r.json")
        data = json.loads((tmp_path / "r.json").read_text())
        rows = data["samples"]
        assert len(rows) == 4 and data["options"]["n_eval_points"] == 300
        for col, key in [("cd_cm2", "cd_cm2"), ("fs_at_5mm", "fs_at_5mm"), ("contact", "contact_ratio")]:
            assert abs(np.mean([float(r[col]) for r in rows]) - data["means"][key]) <= 1e-9
        assert load_report(tmp_path / "r.json").to_dict() == data
        for r in rows:
            assert r["cd_cm2"] >= 0 and 0 <= r["fs_at_10mm"] <= 1 and r["penetration_depth_cm"] >= 0

    def test_batch_independence(self, trained, toy_scenes):
        one = evaluate(trained.model, toy_scenes, batch_size=1)
        many = evaluate(trained.model, toy_scenes, batch_size=4)
        for col in one.COLUMNS:
            assert np.allclose(getattr(one, col), getattr(many, col), rtol=0, atol=1e-5), col
        p1, p4 = predict(trained.model, toy_scenes, batch_size=1), predict(trained.model, toy_scenes, batch_size=4)
        for a, b in zip(p1, p4):
            assert np.abs(a["dense_camera"] - b["dense_camera"]).max() <= 1e-5

    def test_deterministic_report(self, trained, toy_scenes):
        a = evaluate(trained.model, toy_scenes, noise_sigma=0.1).to_dict()
        assert a == evaluate(trained.model, toy_scenes, noise_sigma=0.1).to_dict()

    def test_negative_sigma(self, trained, toy_scenes):
        with pytest.raises(ValueError):
            evaluate(trained.model, toy_scenes, noise_sigma=-1.0)

    def test_export(self, trained, toy_scenes, tmp_path):
        pred = predict(trained.model, toy_scenes[:1])[0]
        meta = export_prediction(pred, tmp_path)
        assert meta["n_dense"] == 8 * meta["n_sparse"]
        dense = read_ply(tmp_path / "dense.ply")
        assert np.abs(dense - pred["dense_camera"]).max() < 1e-6
        text = (tmp_path / "dense.ply").read_text().splitlines()
        assert text[:7] == ["ply", "format ascii 1.0", f"element vertex {meta['n_dense']}", "property float x",
                            "property float y", "property float z", "end_header"]


def toy_config_file(tmp_path, **kw):
    path = tmp_path / "toy.json"
    path.write_text(json.dumps({"preset": "toy", "log_every": 0, **kw}))
    return str(path)


class TestCli:
    def test_synth_deterministic(self, tmp_path):
        cfg = toy_config_file(tmp_path)
        for d in ("a", "b"):
            assert main(["synth", "--config", cfg, "--out", str(tmp_path / d), "--count", "3", "--seed", "1"]) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 12
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert read_dataset(tmp_path / "a")[0].sample_id == 100000

    def test_train_eval_infer(self, tmp_path, capsys):
        cfg = toy_config_file(tmp_path, steps=2)
        data, run = tmp_path / "data", tmp_path / "run"
        assert main(["synth", "--config", cfg, "--out", str(data), "--count", "2", "--seed", "0"]) == 0
        assert main(["train", "--config", cfg, "--data", str(data), "--out", str(run)]) == 0
        assert len((run / "loss_log.jsonl").read_text().splitlines()) == 2
        report = tmp_path / "report.json"
        assert main(["eval", "--ckpt", str(run / "model.ckpt"), "--data", str(data), "--report", str(report),
                     "--noise-sigma", "0.1", "--eval-points", "200"]) == 0
        rep = json.loads(report.read_text())
        assert rep["options"] == {"noise_sigma": 0.1, "n_eval_points": 200, "oracle": False, "contact_eps": 0.005}
        out = tmp_path / "pred"
        assert main(["infer", "--ckpt", str(run / "model.ckpt"), "--sample", str(data / "00001"), "--out", str(out)]) == 0
        meta = json.loads((out / "prediction.json").read_text())
        sparse, dense = read_ply(out / "sparse.ply"), read_ply(out / "dense.ply")
        assert len(dense) == 8 * len(sparse) == meta["n_dense"]
        model = load_checkpoint(run / "model.ckpt").model
        pred = predict(model, read_dataset(data)[1:], batch_size=1)[0]
        assert np.array_equal(np.asarray(meta["t_o"], dtype=np.float32), pred["t_o"])
        assert np.abs(dense - pred["dense_camera"]).max() < 1e-6

    def test_eval_config_mismatch(self, tmp_path, trained, toy_scenes):
        save_checkpoint(trained, tmp_path / "m.ckpt")
        write_dataset(toy_scenes[:1], tmp_path / "d")
        cfg = toy_config_file(tmp_path, vit_dim=32)
        with pytest.raises(CheckpointError):
            main(["eval", "--ckpt", str(tmp_path / "m.ckpt"), "--data", str(tmp_path / "d"),
                  "--report", str(tmp_path / "r.json"), "--config", cfg])

    def test_gradcheck_exit_codes(self, capsys):
        assert main(["gradcheck", "--ops", "linear,chamfer_distance"]) == 0
        assert "linear" in capsys.readouterr().out
        assert main(["gradcheck", "--ops", "linear", "--corrupt-op", "linear"]) != 0
        assert main(["gradcheck", "--ops", "no_such_op"]) == 2

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"vit_dimm": 3}))
        with pytest.raises(ValueError, match="vit_dimm"):
            RunConfig.load(path)
