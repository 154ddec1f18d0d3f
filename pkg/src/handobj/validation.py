"""Input checks shared by the estimator, the CLI and the metrics."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .config import RunConfig


def check_points(x, name: str = "points", min_points: int = 1) -> np.ndarray:
    """Finite float64 array of shape [N,3] with ``N >= min_points``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name}: expected shape [N,3], got {arr.shape}")
    if len(arr) < min_points:
        raise ValueError(f"{name}: need at least {min_points} points, got {len(arr)}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains non-finite coordinates")
    return arr


def check_scenes(X, config: RunConfig = None) -> list:
    """List of scene samples, optionally checked against ``config``."""
    from .synth import SceneSample

    if isinstance(X, SceneSample):
        X = [X]
    try:
        samples = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of SceneSample, got {type(X).__name__}") from None
    if not samples:
        raise ValueError("expected at least one sample")
    bad = [type(s).__name__ for s in samples if not isinstance(s, SceneSample)]
    if bad:
        raise TypeError(f"expected SceneSample items, got {sorted(set(bad))}")
    if config is not None:
        check_compatible(samples, config)
    return samples


def check_compatible(samples: Sequence, config: RunConfig) -> None:
    for s in samples:
        if s.image.shape != (config.image_size, config.image_size, 3):
            raise ValueError(f"sample {s.sample_id}: image {s.image.shape} does not fit image_size={config.image_size}")
        if s.hand_vertices != config.hand_vertices:
            raise ValueError(f"sample {s.sample_id}: {s.hand_vertices} hand vertices, config has {config.hand_vertices}")
        if len(s.surface_sparse) != config.n_sparse or len(s.surface_dense) != config.n_dense:
            raise ValueError(
                f"sample {s.sample_id}: ground truth has {len(s.surface_sparse)}/{len(s.surface_dense)} points, "
                f"config expects {config.n_sparse}/{config.n_dense}"
            )
