"""Synthetic articulated hand template (MANO-compatible interface).

Joint order follows MANO: wrist, then index, middle, pinky, ring and thumb
chains of three joints each.  Vertices sit on a flattened palm ellipsoid and
on capsules around each finger bone; every vertex is rigidly bound to one joint.
Local axes: fingers extend along +y, the palm faces +z, flexion is about +x.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from ..io import load_container, save_container

N_JOINTS = 16
N_TIPS = 5
N_FRAMES = 1 + N_JOINTS + N_TIPS
DEFAULT_VERTICES = 778

PARENTS = np.array([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14])
TIP_PARENTS = np.array([3, 6, 9, 12, 15])
PALM_JOINTS = np.array([0, 1, 4, 7, 10])

# (base joint position, direction, bone lengths incl. tip, capsule radius)
_FINGERS = [
    ((0.025, 0.090, 0.0), (0.05, 1.0, 0.0), (0.040, 0.025, 0.022), 0.0085),  # index
    ((0.005, 0.095, 0.0), (0.0, 1.0, 0.0), (0.045, 0.028, 0.024), 0.0090),  # middle
    ((-0.035, 0.080, 0.0), (-0.12, 1.0, 0.0), (0.030, 0.020, 0.020), 0.0075),  # pinky
    ((-0.015, 0.090, 0.0), (-0.05, 1.0, 0.0), (0.040, 0.026, 0.022), 0.0085),  # ring
    ((0.030, 0.025, 0.010), (0.75, 0.65, 0.12), (0.035, 0.030, 0.026), 0.0105),  # thumb
]
_PALM_CENTRE = np.array([-0.004, 0.047, 0.0])
_PALM_AXES = np.array([0.045, 0.050, 0.013])
_PALM_SHARE = 0.3


@dataclass(frozen=True)
class HandTemplate:
    joints: np.ndarray  # 16,3 rest joint positions
    tips: np.ndarray  # 5,3 rest fingertip positions
    vertices: np.ndarray  # V,3
    vertex_joint: np.ndarray  # V, joint each vertex is bound to

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def palm(self) -> np.ndarray:
        return self.joints[PALM_JOINTS].mean(0)

    def save(self, path) -> None:
        tensors = {
            "joints": self.joints,
            "tips": self.tips,
            "vertices": self.vertices,
            "vertex_joint": self.vertex_joint.astype(np.int32),
        }
        save_container(path, {"format": "hand_template", "n_vertices": self.n_vertices}, tensors)

    @classmethod
    def load(cls, path) -> "HandTemplate":
        header, t = load_container(path)
        if header.get("format") != "hand_template":
            raise ValueError(f"{path}: not a hand template container")
        return cls(t["joints"], t["tips"], t["vertices"], t["vertex_joint"].astype(np.int64))


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (3 - np.sqrt(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _capsule_ring(start, end, radius, n) -> np.ndarray:
    axis = end - start
    length = np.linalg.norm(axis)
    d = axis / length
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    i = np.arange(n) + 0.5
    t = i / n
    ang = np.pi * (3 - np.sqrt(5)) * np.arange(n)
    return start + t[:, None] * axis + radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


def build_template(n_vertices: int = DEFAULT_VERTICES) -> HandTemplate:
    if n_vertices < 2 * (N_JOINTS - 1) + 2:
        raise ValueError(f"template needs at least {2 * (N_JOINTS - 1) + 2} vertices, got {n_vertices}")
    joints = np.zeros((N_JOINTS, 3))
    tips = np.zeros((N_TIPS, 3))
    bones = []  # (joint, start, end, radius)
    for f, (base, direction, lengths, radius) in enumerate(_FINGERS):
        d = np.asarray(direction, dtype=np.float64)
        d /= np.linalg.norm(d)
        pos = np.asarray(base, dtype=np.float64)
        for b in range(3):
            j = 1 + 3 * f + b
            joints[j] = pos
            nxt = pos + lengths[b] * d
            bones.append((j, pos, nxt, radius * (1 - 0.1 * b)))
            pos = nxt
        tips[f] = pos

    n_palm = max(2, int(round(n_vertices * _PALM_SHARE)))
    n_finger = n_vertices - n_palm
    lengths = np.array([np.linalg.norm(e - s) for _, s, e, _ in bones])
    counts = np.floor(n_finger * lengths / lengths.sum()).astype(int)
    counts = np.maximum(counts, 2)
    # hand out the rounding remainder to the longest bones first
    order = np.argsort(-lengths, kind="stable")
    k = 0
    while counts.sum() < n_finger:
        counts[order[k % len(order)]] += 1
        k += 1
    while counts.sum() > n_finger:
        idx = order[k % len(order)]
        if counts[idx] > 2:
            counts[idx] -= 1
        k += 1

    verts = [_PALM_CENTRE + _PALM_AXES * _fibonacci_sphere(n_palm)]
    owner = [np.zeros(n_palm, dtype=np.int64)]
    for (j, s, e, r), c in zip(bones, counts):
        verts.append(_capsule_ring(s, e, r, c))
        owner.append(np.full(c, j, dtype=np.int64))
    return HandTemplate(joints, tips, np.concatenate(verts), np.concatenate(owner))


ASSET_NAME = "hand_template.tns"


def asset_path() -> Path:
    return Path(str(resources.files("handobj") / "assets" / ASSET_NAME))


@lru_cache(maxsize=8)
def default_template(n_vertices: int = DEFAULT_VERTICES) -> HandTemplate:
    """The shipped asset for the default vertex count, generated otherwise."""
    path = asset_path()
    if n_vertices == DEFAULT_VERTICES and path.is_file():
        return HandTemplate.load(path)
    return build_template(n_vertices)
