"""On-disk dataset layout: one directory per sample.

Each sample directory holds ``image.tns`` (H,W,3 float32), ``surface_s.tns``
and ``surface_d.tns`` (camera-frame ground-truth clouds, float32) and
``meta.json`` with the keys ``camera`` (focal, pp, image_size, t_c, s_c),
``hand`` (pose, albedo, vertices), ``object`` (kind, size, exponent, pose,
albedo), ``gt_t_o`` and ``sample_id``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..geometry import CameraParams
from ..hand import HandPose
from ..io import load_tns, save_tns
from .primitives import PrimitiveSpec
from .scene import SceneSample

FILES = ("image.tns", "meta.json", "surface_s.tns", "surface_d.tns")


def sample_meta(s: SceneSample) -> dict:
    obj = s.object.to_dict()
    obj["albedo"] = [float(v) for v in s.object_albedo]
    return {
        "camera": s.camera.to_dict(),
        "hand": {
            "pose": s.hand_pose.to_dict(),
            "albedo": [float(v) for v in s.hand_albedo],
            "vertices": int(s.hand_vertices),
        },
        "object": obj,
        "gt_t_o": [float(v) for v in s.gt_t_o],
        "sample_id": int(s.sample_id),
    }


def write_sample(s: SceneSample, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_tns(d / "image.tns", np.asarray(s.image, dtype=np.float32))
    save_tns(d / "surface_s.tns", np.asarray(s.surface_sparse, dtype=np.float32))
    save_tns(d / "surface_d.tns", np.asarray(s.surface_dense, dtype=np.float32))
    (d / "meta.json").write_text(json.dumps(sample_meta(s), indent=1, sort_keys=True) + "\n")


def read_sample(directory) -> SceneSample:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"sample directory not found: {d}")
    for name in FILES:
        if not (d / name).is_file():
            raise FileNotFoundError(f"malformed sample directory, missing file: {d / name}")
    meta = json.loads((d / "meta.json").read_text())
    obj = dict(meta["object"])
    object_albedo = np.array(obj.pop("albedo"))
    return SceneSample(
        image=load_tns(d / "image.tns"),
        camera=CameraParams.from_dict(meta["camera"]),
        hand_pose=HandPose.from_dict(meta["hand"]["pose"]),
        object=PrimitiveSpec.from_dict(obj),
        gt_t_o=np.array(meta["gt_t_o"]),
        sample_id=int(meta["sample_id"]),
        surface_sparse=load_tns(d / "surface_s.tns"),
        surface_dense=load_tns(d / "surface_d.tns"),
        hand_albedo=np.array(meta["hand"]["albedo"]),
        object_albedo=object_albedo,
        hand_vertices=int(meta["hand"]["vertices"]),
    )


def write_dataset(samples, directory) -> list:
    """Write samples as ``<dir>/00000``, ``<dir>/00001``, ...; returns the paths."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, s in enumerate(samples):
        p = root / f"{i:05d}"
        write_sample(s, p)
        paths.append(p)
    return paths


def read_dataset(directory) -> list:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not subdirs:
        raise FileNotFoundError(f"dataset directory has no sample subdirectories: {root}")
    return [read_sample(p) for p in subdirs]
