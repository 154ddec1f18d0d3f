"""Scikit-learn style wrapper around training, prediction and scoring."""

from __future__ import annotations

import dataclasses
from typing import Optional

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import PRESETS, RunConfig
from .evaluation import evaluate, predict
from .training import train
from .validation import check_scenes


class HandObjectReconstructor(BaseEstimator):
    """Reconstruct the object held in a hand from an image, the hand and the camera.

    ``X`` is a sequence of scene samples.  Unset (``None``) hyperparameters
    keep the preset's value; ``overrides`` may set any other config field.

    >>> est = HandObjectReconstructor(preset="toy", steps=5).fit(train_set)  # doctest: +SKIP
    >>> est.predict(test_set)[0]["dense_camera"].shape  # doctest: +SKIP
    (128, 3)
    """

    def __init__(
        self,
        preset: str = "desk",
        steps: Optional[int] = None,
        batch_size: Optional[int] = None,
        base_lr: Optional[float] = None,
        use_hand_encoder: Optional[bool] = None,
        augment: Optional[bool] = None,
        seed: int = 0,
        overrides: Optional[dict] = None,
    ):
        self.preset = preset
        self.steps = steps
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.use_hand_encoder = use_hand_encoder
        self.augment = augment
        self.seed = seed
        self.overrides = overrides

    def make_config(self) -> RunConfig:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        fields = {
            k: getattr(self, k)
            for k in ("steps", "batch_size", "base_lr", "use_hand_encoder", "augment")
            if getattr(self, k) is not None
        }
        return dataclasses.replace(PRESETS[self.preset](), seed=self.seed, **fields, **(self.overrides or {}))

    def fit(self, X, y=None, out_dir=None):
        config = self.make_config()
        samples = check_scenes(X, config)
        self.state_ = train(config, samples, out_dir)
        self.model_ = self.state_.model
        self.config_ = config
        self.loss_log_ = self.state_.log
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict or score")

    def predict(self, X) -> list:
        """Per-sample dicts with ``t_o`` and the sparse/dense clouds (canonical and camera frame)."""
        self._check_fitted()
        return predict(self.model_, check_scenes(X, self.config_))

    def evaluate(self, X, noise_sigma: float = 0.0, n_eval_points: Optional[int] = None):
        self._check_fitted()
        return evaluate(self.model_, check_scenes(X, self.config_), noise_sigma, n_eval_points)

    def score(self, X, y=None) -> float:
        """Mean F-score at 10 mm."""
        return self.evaluate(X).means()["fs_at_10mm"]
