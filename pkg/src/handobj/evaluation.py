"""Evaluation protocol and inference export.

Metrics are computed in the camera frame: the predicted dense cloud is placed
at ``p + t_p + t_o`` using the (possibly noisy) input palm and the predicted
offset, then compared with a fresh surface sample of the ground-truth
primitive.  Contact and penetration are measured against the input hand.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .config import RunConfig
from .hand import joint_error_mm, perturb_hand
from .io import write_ply
from .metrics import MetricsReport, chamfer_distance, f_score, in_contact, penetration_depth_cloud
from .model import ReconstructionModel, collate, to_camera_frame

TAU_5MM = 0.005
TAU_10MM = 0.010
EVAL_SALT = 0x5EED


def _eval_rng(sample_id: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([EVAL_SALT, int(sample_id), stream])


def noisy_hand(sample, sigma: float):
    return perturb_hand(sample.hand, sigma, int(_eval_rng(sample.sample_id, 0).integers(2**31)))


def resample(cloud: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` rows of ``cloud``: a subset when large enough, otherwise drawn with replacement."""
    idx = rng.choice(len(cloud), size=n, replace=n > len(cloud))
    return cloud[np.sort(idx)]


@torch.no_grad()
def predict(model: ReconstructionModel, samples: Sequence, hands=None, batch_size: Optional[int] = None) -> list:
    """Per-sample dicts with canonical ``sparse``/``dense``, ``t_o``, ``t_p`` and camera-frame ``dense_camera``."""
    config = model.config
    batch_size = batch_size or config.batch_size
    hands = list(hands) if hands is not None else [s.hand for s in samples]
    model.eval()
    out = []
    for s in range(0, len(samples), batch_size):
        batch = collate(samples[s:s + batch_size], config, hands[s:s + batch_size], with_target=False)
        pred = model(batch)
        cam = to_camera_frame(pred["dense"], batch.palm, pred["t_o"])
        cam_s = to_camera_frame(pred["sparse"], batch.palm, pred["t_o"])
        for i in range(len(batch)):
            out.append({
                "sample_id": batch.sample_ids[i],
                "t_o": pred["t_o"][i].numpy(),
                "t_p": batch.palm[i].numpy(),
                "sparse": pred["sparse"][i].numpy(),
                "dense": pred["dense"][i].numpy(),
                "sparse_camera": cam_s[i].numpy(),
                "dense_camera": cam[i].numpy(),
            })
    return out


def evaluate(
    model: Optional[ReconstructionModel],
    samples: Sequence,
    noise_sigma: float = 0.0,
    n_eval_points: Optional[int] = None,
    batch_size: Optional[int] = None,
    oracle: bool = False,
    config: Optional[RunConfig] = None,
) -> MetricsReport:
    """Metrics report over ``samples``.

    ``oracle=True`` skips the network and scores a ground-truth surface sample
    as the prediction (a self-test of the protocol; needs ``config`` when
    ``model`` is None).
    """
    if noise_sigma < 0:
        raise ValueError(f"noise sigma must be non-negative, got {noise_sigma}")
    config = model.config if model is not None else (config or RunConfig())
    n_eval = n_eval_points or config.n_eval_points
    hands = [noisy_hand(s, noise_sigma) if noise_sigma > 0 else s.hand for s in samples]
    preds = None if oracle else predict(model, samples, hands, batch_size)
    report = MetricsReport(options={
        "noise_sigma": float(noise_sigma), "n_eval_points": int(n_eval), "oracle": bool(oracle),
        "contact_eps": float(config.contact_eps),
    })
    for i, (s, h) in enumerate(zip(samples, hands)):
        gt = s.object.sample_surface(n_eval, int(_eval_rng(s.sample_id, 1).integers(2**31)))
        if oracle:
            cloud = gt
        else:
            cloud = resample(preds[i]["dense_camera"].astype(np.float64), n_eval, _eval_rng(s.sample_id, 2))
        A, B = torch.from_numpy(cloud), torch.from_numpy(gt)
        report.add(
            s.sample_id,
            float(chamfer_distance(A, B)),
            f_score(A, B, TAU_5MM),
            f_score(A, B, TAU_10MM),
            in_contact(h.vertices, cloud, config.contact_eps),
            penetration_depth_cloud(h.vertices, cloud),
            joint_error_mm(h, s.hand),
        )
    return report


def save_report(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")


def load_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))


def export_prediction(pred: dict, out_dir) -> dict:
    """Write ``sparse.ply`` and ``dense.ply`` (camera frame) and ``prediction.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ply(out / "sparse.ply", pred["sparse_camera"])
    write_ply(out / "dense.ply", pred["dense_camera"])
    meta = {
        "sample_id": int(pred["sample_id"]),
        "frame": "camera",
        "t_o": [float(v) for v in pred["t_o"]],
        "t_p": [float(v) for v in pred["t_p"]],
        "n_sparse": int(len(pred["sparse"])),
        "n_dense": int(len(pred["dense"])),
    }
    (out / "prediction.json").write_text(json.dumps(meta, indent=1) + "\n")
    return meta
