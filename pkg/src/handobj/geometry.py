"""Camera projection, feature-grid sampling, local frames, kNN and surface sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import torch

Z_MIN = 1e-4
ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraParams:
    """Pinhole camera applied after the similarity ``p -> s_c * p + t_c``.

    Scalar fields describe one camera; :meth:`stack` builds a batched camera
    whose fields are tensors with a leading batch dimension.
    """

    focal: float
    principal_point: tuple
    image_size: tuple  # (W, H) pixels
    t_c: tuple = (0.0, 0.0, 0.0)
    s_c: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.s_c) <= 0):
            raise ValueError(f"camera scale s_c must be positive, got {self.s_c}")
        if np.any(np.asarray(self.focal) <= 0):
            raise ValueError(f"focal length must be positive, got {self.focal}")
        pp = np.asarray(self.principal_point, dtype=np.float64)
        w, h = self.image_size
        if np.any(pp[..., 0] < 0) or np.any(pp[..., 0] > w) or np.any(pp[..., 1] < 0) or np.any(pp[..., 1] > h):
            raise ValueError(f"principal point {self.principal_point} outside image {self.image_size}")

    @property
    def batched(self) -> bool:
        return np.ndim(self.focal) > 0

    @staticmethod
    def stack(cams: Sequence["CameraParams"], dtype=torch.float32) -> "CameraParams":
        sizes = {tuple(c.image_size) for c in cams}
        if len(sizes) != 1:
            raise ValueError(f"cannot batch cameras with different image sizes: {sizes}")
        return CameraParams(
            focal=torch.tensor([float(c.focal) for c in cams], dtype=dtype),
            principal_point=torch.tensor([list(c.principal_point) for c in cams], dtype=dtype),
            image_size=sizes.pop(),
            t_c=torch.tensor([list(c.t_c) for c in cams], dtype=dtype),
            s_c=torch.tensor([float(c.s_c) for c in cams], dtype=dtype),
        )

    def to_dict(self) -> dict:
        return {
            "focal": float(self.focal),
            "pp": [float(v) for v in self.principal_point],
            "image_size": [int(v) for v in self.image_size],
            "t_c": [float(v) for v in self.t_c],
            "s_c": float(self.s_c),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraParams":
        return cls(
            focal=d["focal"],
            principal_point=tuple(d["pp"]),
            image_size=tuple(d["image_size"]),
            t_c=tuple(d["t_c"]),
            s_c=d["s_c"],
        )


@dataclass(frozen=True)
class RigidFrame:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHO_TOL) or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("frame rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))


def _camera_terms(cam: CameraParams, like: torch.Tensor):
    as_t = lambda v: torch.as_tensor(v, dtype=like.dtype)
    focal, pp, t_c, s_c = as_t(cam.focal), as_t(cam.principal_point), as_t(cam.t_c), as_t(cam.s_c)
    if focal.ndim == 1:  # batched camera against [B,N,3] points
        focal, s_c = focal[:, None], s_c[:, None, None]
        pp, t_c = pp[:, None, :], t_c[:, None, :]
    return focal, pp, t_c, s_c


def project_points(points, cam: CameraParams, z_min: float = Z_MIN, return_flags: bool = False):
    """Pixel coordinates [..,N,2] of camera-space points [..,N,3].

    Depths at or below ``z_min`` are clamped to it; ``return_flags`` also
    returns the boolean mask of clamped points.
    """
    p = torch.as_tensor(points)
    if not p.is_floating_point():
        p = p.to(torch.float64)
    focal, pp, t_c, s_c = _camera_terms(cam, p)
    q = s_c * p + t_c
    z = q[..., 2]
    behind = z <= z_min
    z = torch.where(behind, torch.full_like(z, z_min), z)
    u = focal * q[..., 0] / z + pp[..., 0]
    v = focal * q[..., 1] / z + pp[..., 1]
    uv = torch.stack([u, v], dim=-1)
    if return_flags:
        return uv, behind
    return uv


def bilinear_sample(grid: torch.Tensor, uv: torch.Tensor, image_size) -> torch.Tensor:
    """Sample a channels-last feature grid [..,G,G,C] at pixel positions [..,N,2].

    Cell (i, j) is centred on pixel ((j + 0.5) W / G, (i + 0.5) H / G).
    Positions outside the grid clamp to the border cells.
    """
    W, H = image_size
    Gh, Gw, C = grid.shape[-3:]
    gx = uv[..., 0] / (W / Gw) - 0.5
    gy = uv[..., 1] / (H / Gh) - 0.5
    gx = gx.clamp(0.0, Gw - 1.0)
    gy = gy.clamp(0.0, Gh - 1.0)
    # NaN positions still index a valid cell; their NaN weights carry through
    x0 = torch.nan_to_num(gx.detach()).floor().clamp(0.0, max(Gw - 2, 0))
    y0 = torch.nan_to_num(gy.detach()).floor().clamp(0.0, max(Gh - 2, 0))
    wx = (gx - x0).unsqueeze(-1)
    wy = (gy - y0).unsqueeze(-1)
    x0, y0 = x0.long(), y0.long()
    x1 = (x0 + 1).clamp(max=Gw - 1)
    y1 = (y0 + 1).clamp(max=Gh - 1)

    flat = grid.reshape(*grid.shape[:-3], Gh * Gw, C)

    def take(yi, xi):
        idx = (yi * Gw + xi).unsqueeze(-1).expand(*yi.shape, C)
        return torch.gather(flat, -2, idx)

    top = (1 - wx) * take(y0, x0) + wx * take(y0, x1)
    bottom = (1 - wx) * take(y1, x0) + wx * take(y1, x1)
    return (1 - wy) * top + wy * bottom


FrameSet = Union[Sequence[RigidFrame], tuple]


def frames_to_tensors(frames: Sequence[RigidFrame], dtype=torch.float64):
    R = torch.tensor(np.stack([f.rotation for f in frames]), dtype=dtype)
    O = torch.tensor(np.stack([f.origin for f in frames]), dtype=dtype)
    return R, O


def to_local_frames(v, frames: FrameSet, check: bool = True) -> torch.Tensor:
    """Express points [..,V,3] in every frame; returns [..,V,3F].

    ``frames`` is a sequence of :class:`RigidFrame` or a pair of tensors
    (rotations [..,F,3,3], origins [..,F,3]).  Block f holds ``R_f^T (v - o_f)``.
    """
    v = torch.as_tensor(v)
    if isinstance(frames, tuple) and len(frames) == 2 and torch.is_tensor(frames[0]):
        R, O = frames
        if check:
            eye = torch.eye(3, dtype=R.dtype)
            err = (R.transpose(-1, -2) @ R - eye).abs().max()
            tol = ORTHO_TOL if R.dtype == torch.float64 else 1e-5
            if float(err) > tol:
                raise ValueError(f"non-orthonormal frame rotation (max |R^T R - I| = {float(err):.3g})")
    else:
        R, O = frames_to_tensors(frames, v.dtype)
    R, O = R.to(v.dtype), O.to(v.dtype)
    rel = v.unsqueeze(-3) - O.unsqueeze(-2)  # ..,F,V,3
    local = rel @ R  # row-vector form of R^T (v - o)
    *lead, F, V, _ = local.shape
    return local.transpose(-2, -3).reshape(*lead, V, F * 3)


def knn_indices(points, k: int, n_queries: int | None = None, chunk: int = 1024) -> torch.Tensor:
    """Indices [..,Q,k] of the k nearest points for the first ``n_queries`` rows.

    Each query lists itself first; the rest follow ascending squared distance
    with ties broken by smaller index.
    """
    p = torch.as_tensor(points)
    n = p.shape[-2]
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    q_count = n if n_queries is None else n_queries
    out = []
    with torch.no_grad():
        for start in range(0, q_count, chunk):
            stop = min(start + chunk, q_count)
            diff = p[..., start:stop, None, :] - p[..., None, :, :]
            d2 = (diff * diff).sum(-1)
            rows = torch.arange(start, stop)
            d2[..., rows - start, rows] = -1.0
            order = torch.sort(d2, dim=-1, stable=True).indices
            out.append(order[..., :k])
    return torch.cat(out, dim=-2)


def knn_bruteforce(points: np.ndarray, k: int) -> np.ndarray:
    """O(N^2) reference for :func:`knn_indices` using a full lexicographic sort."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    res = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        d2 = ((pts - pts[i]) ** 2).sum(1)
        others = [j for j in range(n) if j != i]
        others.sort(key=lambda j: (d2[j], j))
        res[i] = [i] + others[: k - 1]
    return res


def sample_surface(obj, n: int, seed: int) -> np.ndarray:
    """Area-weighted uniform samples on a primitive's surface (camera frame)."""
    return obj.sample_surface(n, seed)


def farthest_point_indices(points, m: int) -> np.ndarray:
    """Greedy farthest-point subsample starting at index 0."""
    pts = np.asarray(points, dtype=np.float64)
    m = min(m, len(pts))
    chosen = [0]
    dist = ((pts - pts[0]) ** 2).sum(1)
    for _ in range(m - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((pts - pts[nxt]) ** 2).sum(1))
    return np.array(chosen, dtype=np.int64)
