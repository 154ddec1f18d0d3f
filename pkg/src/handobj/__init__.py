"""Hand-held object point-cloud reconstruction from an image and a 3D hand."""

from .config import RunConfig, desk, paper, toy
from .estimator import HandObjectReconstructor

__all__ = ["HandObjectReconstructor", "RunConfig", "desk", "paper", "toy"]
