"""Z-buffered splat rasteriser.

Each splat is drawn as a sphere impostor: brightness and depth follow the
sphere's front surface, so the centre pixel is the brightest and nearer
surfaces win at overlapping pixels.
"""

from __future__ import annotations

import numpy as np

from ..geometry import CameraParams, project_points

BACKGROUND = 0.1
HAND_SPLAT_RADIUS = 0.006
MIN_RADIUS_PX = 0.75
AMBIENT = 0.3


def render_splats(centres, radii, albedo, camera: CameraParams) -> np.ndarray:
    """Rasterise camera-frame splats (centres [N,3], radii [N] metres, albedo [N,3])."""
    W, H = camera.image_size
    image = np.full((H, W, 3), BACKGROUND, dtype=np.float32)
    centres = np.asarray(centres, dtype=np.float64).reshape(-1, 3)
    if len(centres) == 0:
        return image
    radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), (len(centres),))
    albedo = np.broadcast_to(np.asarray(albedo, dtype=np.float64), (len(centres), 3))
    z = centres[:, 2]
    front = z > 1e-3
    centres, radii, albedo, z = centres[front], radii[front], albedo[front], z[front]
    if len(centres) == 0:
        return image
    uv = project_points(centres, camera).numpy()
    r_px = np.maximum(camera.focal * radii / z, MIN_RADIUS_PX)
    reach = int(np.ceil(r_px.max()))
    off = np.arange(-reach, reach + 1)
    ox, oy = np.meshgrid(off, off, indexing="xy")
    ox, oy = ox.ravel(), oy.ravel()

    px = np.floor(uv[:, 0])[:, None] + ox[None, :]
    py = np.floor(uv[:, 1])[:, None] + oy[None, :]
    dx = px + 0.5 - uv[:, :1]
    dy = py + 0.5 - uv[:, 1:]
    rho2 = (dx * dx + dy * dy) / (r_px[:, None] ** 2)
    inside = (rho2 < 1.0) & (px >= 0) & (px < W) & (py >= 0) & (py < H)
    splat = np.nonzero(inside)[0]
    height = np.sqrt(1.0 - rho2[inside])
    depth = z[splat] - radii[splat] * height
    near, far = z.min(), z.max()
    fade = 1.0 - 0.3 * (z[splat] - near) / max(far - near, 1e-9)
    shade = albedo[splat] * ((AMBIENT + (1 - AMBIENT) * height) * fade)[:, None]
    pix = (py[inside] * W + px[inside]).astype(np.int64)

    order = np.lexsort((depth, pix))
    pix, shade = pix[order], shade[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    flat = image.reshape(-1, 3)
    flat[pix[first]] = np.clip(shade[first], 0.0, 1.0)
    return image


def object_splat_radius(obj, n_points: int) -> float:
    return 1.2 * np.sqrt(obj.surface_area() / n_points)


def render(scene, render_points: int = 1500) -> np.ndarray:
    """Render the hand vertices and a surface sample of the object."""
    from .scene import sample_seeds

    hand = scene.hand.vertices
    obj_pts = scene.object.sample_surface(render_points, sample_seeds(scene.sample_id)["render"])
    centres = np.concatenate([hand, obj_pts])
    radii = np.concatenate([
        np.full(len(hand), HAND_SPLAT_RADIUS),
        np.full(len(obj_pts), object_splat_radius(scene.object, render_points)),
    ])
    albedo = np.concatenate([
        np.broadcast_to(scene.hand_albedo, (len(hand), 3)),
        np.broadcast_to(scene.object_albedo, (len(obj_pts), 3)),
    ])
    return render_splats(centres, radii, albedo, scene.camera)
