"""Procedural grasp scenes: a posed hand, a primitive near its palm, a camera."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from ..config import RunConfig
from ..geometry import CameraParams, RigidFrame, project_points
from ..hand import HandPose, HandState, default_template, forward_kinematics
from ..hand.template import N_JOINTS
from .primitives import KINDS, PrimitiveSpec

FOCAL_PER_PIXEL = 1.25
CENTROID_RANGE = (0.02, 0.12)
CONTACT_LIMIT = 0.005
MAX_ATTEMPTS = 100
FRAME_FILL = 0.42
ID_STRIDE = 100_000


class PlacementError(RuntimeError):
    pass


@dataclass
class SceneSample:
    image: np.ndarray  # H,W,3 float32 in [0,1]
    camera: CameraParams
    hand_pose: HandPose
    object: PrimitiveSpec
    gt_t_o: np.ndarray  # object centroid - palm, camera frame
    sample_id: int
    surface_sparse: np.ndarray  # Ns,3 float32, camera frame
    surface_dense: np.ndarray  # Nd,3 float32, camera frame
    hand_albedo: np.ndarray = field(default_factory=lambda: np.array([0.85, 0.65, 0.55]))
    object_albedo: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.8]))
    hand_vertices: int = 778

    @cached_property
    def hand(self) -> HandState:
        return forward_kinematics(self.hand_pose, default_template(self.hand_vertices), warn=False)

    @property
    def canonical_sparse(self) -> np.ndarray:
        return self.surface_sparse - self.object.centroid.astype(np.float32)

    @property
    def canonical_dense(self) -> np.ndarray:
        return self.surface_dense - self.object.centroid.astype(np.float32)


def sample_seeds(sample_id: int) -> dict:
    """Independent, reproducible sub-seeds derived from a sample id."""
    ss = np.random.SeedSequence(int(sample_id))
    names = ("scene", "sparse", "dense", "render")
    return {n: int(s.generate_state(1)[0]) for n, s in zip(names, ss.spawn(len(names)))}


def _random_hand_pose(rng: np.random.Generator) -> HandPose:
    angles = np.zeros((N_JOINTS, 3))
    for f in range(5):
        curl = rng.uniform(0.1, 1.1)
        for b in range(3):
            j = 1 + 3 * f + b
            angles[j, 0] = np.clip(curl + rng.normal(0, 0.15), -0.1, 1.6)
            angles[j, 1] = rng.normal(0, 0.05)
            angles[j, 2] = rng.normal(0, 0.08) if b == 0 else 0.0
    angles[0] = rng.normal(0, 0.05, 3)
    glob = Rotation.random(random_state=rng).as_rotvec()
    return HandPose(glob, np.zeros(3), angles)


def _random_primitive(rng: np.random.Generator) -> PrimitiveSpec:
    kind = KINDS[rng.integers(len(KINDS))]
    if kind == "sphere":
        size = (rng.uniform(0.025, 0.045),)
    elif kind == "box":
        size = tuple(rng.uniform(0.015, 0.045, 3))
    elif kind == "cylinder":
        size = (rng.uniform(0.015, 0.035), rng.uniform(0.03, 0.06))
    else:
        size = tuple(rng.uniform(0.02, 0.045, 3))
    exponent = rng.uniform(0.5, 2.0) if kind == "superellipsoid" else 1.0
    rot = Rotation.random(random_state=rng).as_matrix()
    return PrimitiveSpec(kind, size, RigidFrame(rot, np.zeros(3)), exponent)


def _with_origin(obj: PrimitiveSpec, origin) -> PrimitiveSpec:
    return PrimitiveSpec(obj.kind, obj.size, RigidFrame(obj.pose.rotation, origin), obj.exponent)


def _touch_distance(obj, verts, palm, direction, hi=0.25, iters=40) -> float:
    """Smallest offset along ``direction`` at which no hand vertex is inside the object."""
    def penetrates(d):
        return bool((_with_origin(obj, palm + d * direction).sdf(verts) < 0).any())

    lo = 0.0
    if not penetrates(lo):
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if penetrates(mid):
            lo = mid
        else:
            hi = mid
    return hi


def _place(rng, hand: HandState, obj: PrimitiveSpec, n_dense: int, dense_seed: int):
    palm = hand.palm
    normal = hand.frame_rotations[0] @ np.array([0.0, 0.0, 1.0])
    d = normal + 0.35 * rng.normal(size=3)
    d /= np.linalg.norm(d)
    gap = rng.uniform(0.0, 0.003)
    dist = _touch_distance(obj, hand.vertices, palm, d) + gap
    if not CENTROID_RANGE[0] <= dist <= CENTROID_RANGE[1]:
        return None
    placed = _with_origin(obj, palm + dist * d)
    dense = placed.sample_surface(n_dense, dense_seed)
    diff = hand.vertices[:, None, :] - dense[None, :, :]
    if np.sqrt((diff * diff).sum(-1).min()) >= CONTACT_LIMIT:
        return None
    return placed, dense


def _frame_camera(points: np.ndarray, image_size: int):
    """Camera translation that centres ``points`` on the optical axis and fits them in frame."""
    focal = FOCAL_PER_PIXEL * image_size
    centre = 0.5 * (points.min(0) + points.max(0))
    radius = np.linalg.norm(points - centre, axis=1).max()
    depth = radius + focal * radius / (FRAME_FILL * image_size)
    shift = np.array([0.0, 0.0, depth]) - centre
    cam = CameraParams(focal, (image_size / 2.0, image_size / 2.0), (image_size, image_size))
    return cam, shift


def generate_scene(seed: int, config: Optional[RunConfig] = None, render_image: bool = True) -> SceneSample:
    """Deterministic scene for ``seed`` (also used as the sample id)."""
    from .render import render

    config = config or RunConfig()
    seeds = sample_seeds(seed)
    rng = np.random.default_rng(seeds["scene"])
    template = default_template(config.hand_vertices)
    for _ in range(MAX_ATTEMPTS):
        pose = _random_hand_pose(rng)
        hand = forward_kinematics(pose, template, warn=False)
        placed = _place(rng, hand, _random_primitive(rng), config.n_dense, seeds["dense"])
        if placed is None:
            continue
        obj, dense = placed
        cam, shift = _frame_camera(np.concatenate([hand.vertices, dense]), config.image_size)
        pose = HandPose(pose.global_rot, pose.translation + shift, pose.joint_angles)
        obj = _with_origin(obj, obj.centroid + shift)
        hand = forward_kinematics(pose, template, warn=False)
        dense = obj.sample_surface(config.n_dense, seeds["dense"])
        uv = project_points(np.concatenate([hand.vertices, dense]), cam).numpy()
        if (uv < 0).any() or (uv > config.image_size).any():
            continue
        sample = SceneSample(
            image=np.zeros((config.image_size,) * 2 + (3,), dtype=np.float32),
            camera=cam,
            hand_pose=pose,
            object=obj,
            gt_t_o=obj.centroid - hand.palm,
            sample_id=int(seed),
            surface_sparse=obj.sample_surface(config.n_sparse, seeds["sparse"]).astype(np.float32),
            surface_dense=dense.astype(np.float32),
            hand_albedo=np.clip(np.array([0.85, 0.65, 0.55]) + rng.uniform(-0.1, 0.1, 3), 0, 1),
            object_albedo=rng.uniform(0.2, 1.0, 3),
            hand_vertices=config.hand_vertices,
        )
        if render_image:
            sample.image = render(sample, config.render_points)
        return sample
    raise PlacementError(f"scene {seed}: no valid object placement after {MAX_ATTEMPTS} attempts")


def scene_ids(seed: int, count: int) -> list:
    """Sample ids for a generated set: ``seed * ID_STRIDE + i``."""
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if count > ID_STRIDE:
        raise ValueError(f"at most {ID_STRIDE} samples per seed")
    return [int(seed) * ID_STRIDE + i for i in range(count)]


def generate_scenes(seed: int, count: int, config: Optional[RunConfig] = None) -> list:
    return [generate_scene(i, config) for i in scene_ids(seed, count)]
