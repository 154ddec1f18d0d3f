"""Pose parameters, forward kinematics, hand embedding and pose noise."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from ..geometry import RigidFrame, to_local_frames
from .template import N_JOINTS, PARENTS, TIP_PARENTS, HandTemplate, default_template


def _joint_limits() -> tuple[np.ndarray, np.ndarray]:
    lo = np.tile([-0.2, -0.25, -0.4], (N_JOINTS, 1))
    hi = np.tile([1.7, 0.25, 0.4], (N_JOINTS, 1))
    lo[0], hi[0] = -0.3, 0.3
    return lo, hi


JOINT_LOWER, JOINT_UPPER = _joint_limits()


@dataclass(frozen=True)
class HandPose:
    """Global axis-angle rotation and translation plus 16 per-joint axis-angles."""

    global_rot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joint_angles: np.ndarray = field(default_factory=lambda: np.zeros((N_JOINTS, 3)))

    def __post_init__(self):
        object.__setattr__(self, "global_rot", np.asarray(self.global_rot, dtype=np.float64).reshape(3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "joint_angles", np.asarray(self.joint_angles, dtype=np.float64).reshape(N_JOINTS, 3))

    def clamped(self, warn: bool = True) -> "HandPose":
        a = self.joint_angles
        clipped = np.clip(a, JOINT_LOWER, JOINT_UPPER)
        if np.array_equal(clipped, a):
            return self
        if warn:
            warnings.warn("hand joint angles outside anatomical limits were clamped", stacklevel=3)
        return replace(self, joint_angles=clipped)

    def to_dict(self) -> dict:
        return {
            "global_rot": self.global_rot.tolist(),
            "translation": self.translation.tolist(),
            "joint_angles": self.joint_angles.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HandPose":
        return cls(np.array(d["global_rot"]), np.array(d["translation"]), np.array(d["joint_angles"]))


@dataclass(frozen=True)
class HandState:
    vertices: np.ndarray  # V,3 camera frame, metres
    joints: np.ndarray  # 16,3
    fingertips: np.ndarray  # 5,3
    frame_rotations: np.ndarray  # 22,3,3: palm, 16 joints, 5 tips
    frame_origins: np.ndarray  # 22,3
    pose: Optional[HandPose] = None
    template: Optional[HandTemplate] = None

    @property
    def palm(self) -> np.ndarray:
        return self.frame_origins[0]

    @property
    def frames(self) -> list[RigidFrame]:
        return [RigidFrame(R, o) for R, o in zip(self.frame_rotations, self.frame_origins)]


def forward_kinematics(pose: HandPose, template: Optional[HandTemplate] = None, warn: bool = True) -> HandState:
    template = template or default_template()
    pose = pose.clamped(warn=warn)
    local_rot = Rotation.from_rotvec(pose.joint_angles).as_matrix()
    J = template.joints
    rot = np.empty((N_JOINTS, 3, 3))
    pos = np.empty((N_JOINTS, 3))
    for j in range(N_JOINTS):
        p = PARENTS[j]
        if p < 0:
            rot[j], pos[j] = local_rot[j], J[j]
        else:
            rot[j] = rot[p] @ local_rot[j]
            pos[j] = pos[p] + rot[p] @ (J[j] - J[p])

    def place(points, owner):
        return np.einsum("nij,nj->ni", rot[owner], points - J[owner]) + pos[owner]

    verts = place(template.vertices, template.vertex_joint)
    tips = place(template.tips, TIP_PARENTS)
    palm = place(template.palm[None], np.array([0]))[0]

    R_g = Rotation.from_rotvec(pose.global_rot).as_matrix()
    t = pose.translation
    world = lambda x: x @ R_g.T + t
    frame_rot = np.concatenate([rot[:1], rot, rot[TIP_PARENTS]])
    frame_rot = np.einsum("ij,njk->nik", R_g, frame_rot)
    joints_w, tips_w = world(pos), world(tips)
    origins = np.concatenate([world(palm[None]), joints_w, tips_w])
    return HandState(world(verts), joints_w, tips_w, frame_rot, origins, pose, template)


def build_hand_embedding(h: HandState) -> torch.Tensor:
    """Per-vertex coordinates in all 22 local frames plus a normalised index: [V, 67]."""
    v = torch.as_tensor(h.vertices, dtype=torch.float64)
    frames = (torch.as_tensor(h.frame_rotations, dtype=torch.float64), torch.as_tensor(h.frame_origins, dtype=torch.float64))
    local = to_local_frames(v, frames)
    n = v.shape[0]
    index = torch.arange(n, dtype=torch.float64) / max(n - 1, 1)
    return torch.cat([local, index[:, None]], dim=1)


def perturb_hand(h: HandState, sigma: float, seed: int) -> HandState:
    """Add Gaussian noise (std ``sigma`` in axis-angle radians) to the pose, then re-pose.

    Global rotation and joint angles are perturbed; the translation is not.
    """
    if sigma < 0:
        raise ValueError(f"noise sigma must be non-negative, got {sigma}")
    if h.pose is None:
        raise ValueError("perturb_hand needs a HandState produced by forward_kinematics")
    if sigma == 0:
        return forward_kinematics(h.pose, h.template, warn=False)
    rng = np.random.default_rng(seed)
    noisy = HandPose(
        h.pose.global_rot + rng.normal(0.0, sigma, 3),
        h.pose.translation,
        h.pose.joint_angles + rng.normal(0.0, sigma, (N_JOINTS, 3)),
    )
    return forward_kinematics(noisy, h.template, warn=False)


def joint_error_mm(a: HandState, b: HandState) -> float:
    """Mean Euclidean joint distance in millimetres."""
    return float(np.linalg.norm(a.joints - b.joints, axis=1).mean() * 1000.0)
