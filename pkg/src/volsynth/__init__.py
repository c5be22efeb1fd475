"""Explicit RGBA-volume view synthesis.

A scene is a dense ``(4, D, H, W)`` float32 grid of color and opacity.  Views
are made by warping the grid onto a camera frustum and alpha compositing it
front to back; the same volume can be fitted to posed images by gradient
descent.
"""
from .camera import (
    FrustumSpec,
    Intrinsics,
    Pose,
    canonical_pose,
    look_at,
    relative_pose,
    sphere_poses,
    turntable_poses,
)
from .diff import FitResult, OptimConfig, fit_volume, gradient_suite
from .errors import VolsynthError
from .estimators import FixedVolumePredictor, VolumeFitter
from .metrics import binarize_alpha, miou, psnr, render_loss, ssim
from .renderer import AmortizedRenderer, RenderOptions, composite, reference_render, render_view
from .scene import ProceduralSpec, generate_scene, load_manifest, read_image, render_dataset, write_image
from .volume import perspective_warp, read_voxl, rigid_transform_volume, write_voxl

__version__ = "0.1.0"

__all__ = [
    "AmortizedRenderer",
    "FitResult",
    "FixedVolumePredictor",
    "FrustumSpec",
    "Intrinsics",
    "OptimConfig",
    "Pose",
    "ProceduralSpec",
    "RenderOptions",
    "VolsynthError",
    "VolumeFitter",
    "binarize_alpha",
    "canonical_pose",
    "composite",
    "fit_volume",
    "generate_scene",
    "gradient_suite",
    "load_manifest",
    "look_at",
    "miou",
    "perspective_warp",
    "psnr",
    "read_image",
    "read_voxl",
    "reference_render",
    "relative_pose",
    "render_dataset",
    "render_loss",
    "render_view",
    "rigid_transform_volume",
    "sphere_poses",
    "ssim",
    "turntable_poses",
    "write_image",
    "write_voxl",
]
