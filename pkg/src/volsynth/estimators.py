"""scikit-learn style predictors mapping camera poses to rendered images.

``X`` is a sequence of world-to-camera :class:`~volsynth.camera.Pose`
objects and ``y`` the matching ``(h, w, 3)`` images.  A predictor owns an
RGBA volume in the world frame and renders it with the amortized engine.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .camera import FrustumSpec, Intrinsics, Pose
from .diff import OptimConfig, fit_volume
from .errors import DimensionMismatch, EmptyViewSet
from .metrics import psnr
from .renderer import AmortizedRenderer
from .validation import check_rgba


def _check_poses(X):
    poses = list(X)
    if not poses:
        raise EmptyViewSet("no poses given")
    for p in poses:
        if not isinstance(p, Pose):
            raise TypeError(f"expected Pose objects, got {type(p).__name__}")
    return poses


class VolumePredictor(BaseEstimator):
    """Base class: subclasses set ``volume_`` in :meth:`fit`.

    Any model that yields an explicit world-frame RGBA volume (a direct fit,
    a stored asset, or a learned encoder) plugs in by implementing ``fit``.
    """

    def predict(self, X):
        check_is_fitted(self, "volume_")
        return np.stack([r.rgb for r in self.render(X)])

    def render(self, X):
        """Full :class:`~volsynth.renderer.RenderedImage` results for poses ``X``."""
        check_is_fitted(self, "volume_")
        renderer = self._renderer()
        return [renderer.render_world(p) for p in _check_poses(X)]

    def score(self, X, y):
        """Mean PSNR in dB of the predicted views against ``y``."""
        pred = self.predict(X)
        y = np.asarray(y)
        if y.shape != pred.shape:
            raise DimensionMismatch(f"targets have shape {y.shape}, predictions {pred.shape}")
        return float(np.mean([psnr(a, b) for a, b in zip(pred, y)]))

    def _renderer(self):
        if getattr(self, "_renderer_cache", None) is None or self._renderer_cache[0] is not self.volume_:
            r = AmortizedRenderer(self.volume_, self.intrinsics_, self.frustum_, self.voxel_size_, self.background)
            self._renderer_cache = (self.volume_, r)
        return self._renderer_cache[1]


class FixedVolumePredictor(VolumePredictor):
    """Wraps a given volume; ``fit`` only validates it."""

    def __init__(self, volume=None, intrinsics: Intrinsics = None, frustum: FrustumSpec = None,
                 voxel_size=None, background=(1.0, 1.0, 1.0)):
        self.volume = volume
        self.intrinsics = intrinsics
        self.frustum = frustum
        self.voxel_size = voxel_size
        self.background = background

    def fit(self, X=None, y=None):
        if self.intrinsics is None or self.frustum is None:
            raise ValueError("intrinsics and frustum are required")
        self.volume_ = check_rgba(self.volume)
        self.intrinsics_, self.frustum_, self.voxel_size_ = self.intrinsics, self.frustum, self.voxel_size
        return self


class VolumeFitter(VolumePredictor):
    """Fits a world-frame RGBA volume to posed images by gradient descent.

    Hyperparameters mirror :class:`~volsynth.diff.OptimConfig`.  After
    ``fit`` the estimator exposes ``volume_`` and ``loss_trace_``.
    """

    def __init__(self, intrinsics: Intrinsics = None, frustum: FrustumSpec = None, dims=(64, 64, 64),
                 voxel_size=None, background=(1.0, 1.0, 1.0), learning_rate=0.05, iterations=500,
                 lambda_ssim=0.05, seed=0, batch_views=None):
        self.intrinsics = intrinsics
        self.frustum = frustum
        self.dims = dims
        self.voxel_size = voxel_size
        self.background = background
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.lambda_ssim = lambda_ssim
        self.seed = seed
        self.batch_views = batch_views

    def optim_config(self):
        return OptimConfig(
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            lambda_ssim=self.lambda_ssim,
            seed=self.seed,
            batch_views=self.batch_views,
        )

    def fit(self, X, y, callback=None):
        return self._fit(X, y, self.intrinsics, self.frustum, self.voxel_size, callback)

    def fit_manifest(self, manifest, callback=None):
        """Fit to every view of a :class:`~volsynth.scene.SceneManifest`.

        Geometry left unset on the estimator is taken from the manifest.
        """
        k = manifest.intrinsics if self.intrinsics is None else self.intrinsics
        f = manifest.frustum if self.frustum is None else self.frustum
        vs = manifest.voxel_size if self.voxel_size is None else self.voxel_size
        return self._fit(manifest.poses, manifest.load_images(), k, f, vs, callback)

    def _fit(self, X, y, k, f, voxel_size, callback):
        if k is None or f is None:
            raise ValueError("intrinsics and frustum are required")
        poses = _check_poses(X)
        result = fit_volume(
            list(y), poses, k, f, self.optim_config(),
            dims=self.dims, voxel_size=voxel_size, background=self.background,
            callback=callback,
        )
        self.intrinsics_, self.frustum_, self.voxel_size_ = k, f, voxel_size
        self.volume_ = result.volume
        self.loss_trace_ = result.trace
        self.n_views_ = len(poses)
        return self
