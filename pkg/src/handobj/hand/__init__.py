"""Articulated hand surrogate, hand embedding and PointNet encoder."""

from .encoder import HandEncoder, encode_hand
from .kinematics import (
    HandPose,
    HandState,
    build_hand_embedding,
    forward_kinematics,
    joint_error_mm,
    perturb_hand,
)
from .template import HandTemplate, build_template, default_template

__all__ = [
    "HandEncoder",
    "HandPose",
    "HandState",
    "HandTemplate",
    "build_hand_embedding",
    "build_template",
    "default_template",
    "encode_hand",
    "forward_kinematics",
    "joint_error_mm",
    "perturb_hand",
]
