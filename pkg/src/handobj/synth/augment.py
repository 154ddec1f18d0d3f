"""Geometry-consistent augmentation: in-plane rotation, resize, shift, colour gains.

Rotation turns the whole camera-frame scene about the optical axis; a positive
angle is counter-clockwise on screen (image y points down), so a point right
of the principal point moves above it at +90 degrees.  Resize scales the focal
length and the principal point about the image centre; shift moves the
principal point.  The image is re-rendered from the adjusted scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ..geometry import CameraParams, RigidFrame
from ..hand import HandPose
from .primitives import PrimitiveSpec

MAX_ANGLE_DEG = 90.0
SCALE_RANGE = (0.8, 1.2)
GAIN_RANGE = (0.8, 1.2)
MAX_SHIFT_FRACTION = 0.08


@dataclass(frozen=True)
class AugmentParams:
    angle_deg: float = 0.0
    scale: float = 1.0
    shift: tuple = (0.0, 0.0)
    gains: tuple = (1.0, 1.0, 1.0)

    @classmethod
    def sample(cls, seed: int, image_size: int) -> "AugmentParams":
        rng = np.random.default_rng(seed)
        m = MAX_SHIFT_FRACTION * image_size
        return cls(
            angle_deg=float(rng.uniform(-MAX_ANGLE_DEG, MAX_ANGLE_DEG)),
            scale=float(rng.uniform(*SCALE_RANGE)),
            shift=tuple(float(s) for s in rng.uniform(-m, m, 2)),
            gains=tuple(float(g) for g in rng.uniform(*GAIN_RANGE, 3)),
        )

    @property
    def is_identity(self) -> bool:
        return self == AugmentParams()


def in_plane_rotation(angle_deg: float) -> np.ndarray:
    """Camera-frame rotation about +z that turns image content counter-clockwise."""
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotate_scene(sample, R: np.ndarray):
    pose = sample.hand_pose
    glob = Rotation.from_matrix(R @ Rotation.from_rotvec(pose.global_rot).as_matrix()).as_rotvec()
    new_pose = HandPose(glob, R @ pose.translation, pose.joint_angles)
    obj = sample.object
    new_obj = PrimitiveSpec(obj.kind, obj.size, RigidFrame(R @ obj.pose.rotation, R @ obj.pose.origin), obj.exponent)
    rot = lambda pts: (pts.astype(np.float64) @ R.T).astype(np.float32)
    return new_pose, new_obj, rot(sample.surface_sparse), rot(sample.surface_dense)


def apply_augmentation(sample, params: AugmentParams, render_points: int = 1500):
    """Return a new sample transformed by ``params`` (the input is not modified)."""
    from .render import render
    from .scene import SceneSample

    if params.is_identity:
        return sample
    pose, obj = sample.hand_pose, sample.object
    sparse, dense = sample.surface_sparse, sample.surface_dense
    if params.angle_deg != 0.0:
        pose, obj, sparse, dense = _rotate_scene(sample, in_plane_rotation(params.angle_deg))
    cam = sample.camera
    focal, pp = cam.focal, np.asarray(cam.principal_point, dtype=np.float64)
    if params.scale != 1.0:
        centre = np.asarray(cam.image_size, dtype=np.float64) / 2.0
        focal = focal * params.scale
        pp = centre + params.scale * (pp - centre)
    if params.shift != (0.0, 0.0):
        pp = pp + np.asarray(params.shift)
    W, H = cam.image_size
    pp = np.clip(pp, 0.0, [W, H])
    new_cam = CameraParams(float(focal), tuple(float(v) for v in pp), cam.image_size, cam.t_c, cam.s_c)
    out = SceneSample(
        image=sample.image,
        camera=new_cam,
        hand_pose=pose,
        object=obj,
        gt_t_o=sample.gt_t_o,
        sample_id=sample.sample_id,
        surface_sparse=sparse,
        surface_dense=dense,
        hand_albedo=sample.hand_albedo,
        object_albedo=np.clip(sample.object_albedo * np.asarray(params.gains), 0.0, 1.0),
        hand_vertices=sample.hand_vertices,
    )
    out.hand_albedo = np.clip(sample.hand_albedo * np.asarray(params.gains), 0.0, 1.0)
    out.gt_t_o = out.object.centroid - out.hand.palm
    out.image = render(out, render_points)
    return out


def augment(sample, seed: int, render_points: int = 1500):
    return apply_augmentation(sample, AugmentParams.sample(seed, sample.camera.image_size[0]), render_points)
