"""Analytic object primitives: signed distance and surface sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import RigidFrame

KINDS = ("sphere", "box", "cylinder", "superellipsoid")
SIZE_ARITY = {"sphere": 1, "box": 3, "cylinder": 2, "superellipsoid": 3}


def _superellipse_norm(local: np.ndarray, axes: np.ndarray, exponent: float) -> np.ndarray:
    """Degree-1 homogeneous gauge; equals 1 on the superellipsoid surface."""
    s = (np.abs(local / axes) ** (2.0 / exponent)).sum(-1)
    return s ** (exponent / 2.0)


@dataclass(frozen=True)
class PrimitiveSpec:
    """Object shape in the camera frame.

    ``size`` per kind: sphere ``(r,)``; box half-extents ``(hx, hy, hz)``;
    cylinder ``(r, half_height)`` along the local z axis; superellipsoid semi-axes
    ``(a, b, c)`` with a shared ``exponent`` (1 = ellipsoid).  The superellipsoid
    SDF is the gauge ``(g - 1) * min(a, b, c)``: exact zero set and sign, but only
    approximately a distance away from the surface.
    """

    kind: str
    size: tuple
    pose: RigidFrame = RigidFrame()
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}; expected one of {KINDS}")
        size = tuple(float(s) for s in self.size)
        if len(size) != SIZE_ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {SIZE_ARITY[self.kind]} size values, got {len(size)}")
        if min(size) <= 0:
            raise ValueError(f"degenerate {self.kind}: size {size} must be positive")
        if self.exponent <= 0:
            raise ValueError(f"superellipsoid exponent must be positive, got {self.exponent}")
        object.__setattr__(self, "size", size)

    @property
    def centroid(self) -> np.ndarray:
        return self.pose.origin

    def to_local(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.pose.origin) @ self.pose.rotation

    def to_world(self, local) -> np.ndarray:
        return np.asarray(local, dtype=np.float64) @ self.pose.rotation.T + self.pose.origin

    def sdf(self, points) -> np.ndarray:
        p = self.to_local(points)
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=-1) - self.size[0]
        if self.kind == "box":
            q = np.abs(p) - np.array(self.size)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(-1), 0.0)
        if self.kind == "cylinder":
            r, hh = self.size
            d = np.stack([np.linalg.norm(p[..., :2], axis=-1) - r, np.abs(p[..., 2]) - hh], axis=-1)
            return np.minimum(d.max(-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        axes = np.array(self.size)
        return (_superellipse_norm(p, axes, self.exponent) - 1.0) * axes.min()

    def surface_area(self) -> float:
        tris = self._triangles()
        return float(_triangle_areas(tris).sum())

    def sample_surface(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        tris = self._triangles()
        areas = _triangle_areas(tris)
        pick = rng.choice(len(tris), size=n, p=areas / areas.sum())
        r1, r2 = rng.random(n), rng.random(n)
        s = np.sqrt(r1)
        a, b, c = tris[pick, 0], tris[pick, 1], tris[pick, 2]
        local = (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c
        return self.to_world(self._project_local(local))

    def _project_local(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "sphere":
            return p * (self.size[0] / np.linalg.norm(p, axis=-1, keepdims=True))
        if self.kind == "superellipsoid":
            g = _superellipse_norm(p, np.array(self.size), self.exponent)
            return p / g[:, None]
        if self.kind == "cylinder":
            r, hh = self.size
            side = np.abs(np.abs(p[:, 2]) - hh) > 1e-12
            rad = np.linalg.norm(p[:, :2], axis=-1)
            out = p.copy()
            out[side, :2] *= (r / rad[side])[:, None]
            return out
        return p

    def _triangles(self) -> np.ndarray:
        if self.kind == "box":
            return _box_triangles(np.array(self.size))
        if self.kind == "cylinder":
            return _cylinder_triangles(*self.size)
        if self.kind == "sphere":
            axes, e = np.full(3, self.size[0]), 1.0
        else:
            axes, e = np.array(self.size), self.exponent
        return _superellipsoid_triangles(axes, e)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "size": list(self.size),
            "exponent": float(self.exponent),
            "pose": {"rotation": self.pose.rotation.tolist(), "origin": self.pose.origin.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrimitiveSpec":
        pose = RigidFrame(np.array(d["pose"]["rotation"]), np.array(d["pose"]["origin"]))
        return cls(d["kind"], tuple(d["size"]), pose, d.get("exponent", 1.0))


def _triangle_areas(tris: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=-1)


def _grid_triangles(verts: np.ndarray) -> np.ndarray:
    """Split a (rows, cols, 3) vertex grid into triangles."""
    a, b = verts[:-1, :-1], verts[:-1, 1:]
    c, d = verts[1:, :-1], verts[1:, 1:]
    t1 = np.stack([a, b, d], axis=-2).reshape(-1, 3, 3)
    t2 = np.stack([a, d, c], axis=-2).reshape(-1, 3, 3)
    return np.concatenate([t1, t2])


def _box_triangles(h: np.ndarray) -> np.ndarray:
    tris = []
    for axis in range(3):
        u, v = [i for i in range(3) if i != axis]
        for sign in (-1.0, 1.0):
            corners = np.zeros((2, 2, 3))
            for i, su in enumerate((-1.0, 1.0)):
                for j, sv in enumerate((-1.0, 1.0)):
                    corners[i, j, axis] = sign * h[axis]
                    corners[i, j, u] = su * h[u]
                    corners[i, j, v] = sv * h[v]
            tris.append(_grid_triangles(corners))
    return np.concatenate(tris)


def _cylinder_triangles(r: float, hh: float, segments: int = 96) -> np.ndarray:
    ang = np.linspace(0.0, 2 * np.pi, segments + 1)
    ring = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
    side = np.zeros((2, segments + 1, 3))
    side[:, :, :2] = ring
    side[0, :, 2], side[1, :, 2] = -hh, hh
    tris = [_grid_triangles(side)]
    for z in (-hh, hh):
        centre = np.array([0.0, 0.0, z])
        rim = np.concatenate([ring, np.full((segments + 1, 1), z)], axis=-1)
        fan = np.stack([np.broadcast_to(centre, (segments, 3)), rim[:-1], rim[1:]], axis=1)
        tris.append(fan)
    return np.concatenate(tris)


def _signed_pow(x: np.ndarray, e: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** e


def _superellipsoid_triangles(axes: np.ndarray, e: float, rows: int = 48, cols: int = 96) -> np.ndarray:
    eta = np.linspace(-np.pi / 2, np.pi / 2, rows + 1)[:, None]
    omega = np.linspace(-np.pi, np.pi, cols + 1)[None, :]
    ce, se = _signed_pow(np.cos(eta), e), _signed_pow(np.sin(eta), e)
    x = axes[0] * ce * _signed_pow(np.cos(omega), e)
    y = axes[1] * ce * _signed_pow(np.sin(omega), e)
    z = axes[2] * se * np.ones_like(omega)
    tris = _grid_triangles(np.stack([x, y, z], axis=-1))
    return tris[_triangle_areas(tris) > 0]
