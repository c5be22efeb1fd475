"""Wall-clock comparison of the amortized and per-ray rendering engines.

For each image resolution and depth-sample count two numbers are taken per
engine, each the median of ``repeats`` runs after one warm-up:

``per_view_ms``
    one view rendered from scratch (the amortized engine pays its volume
    preparation here),
``per_object_ms``
    all ``views`` turntable views of the object; the amortized engine
    prepares the volume once and reuses it.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import astuple, dataclass, fields

from .camera import FrustumSpec, Intrinsics, canonical_pose, relative_pose, turntable_poses
from .renderer import AmortizedRenderer, RenderOptions, reference_render
from .validation import check_rgba

ENGINES = ("amortized", "reference")


@dataclass
class BenchRow:
    engine: str
    resolution: int
    depth: int
    views: int
    per_view_ms: float
    per_object_ms: float


def median_ms(fn, repeats=5, warmup=1):
    """Median wall time of ``fn()`` in milliseconds."""
    if repeats < 1:
        raise ValueError("repeats must be positive")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def bench_geometry(resolution, depth, z_near=2.0, z_far=6.0):
    """Square camera with a roughly 53 degree field of view."""
    return Intrinsics.centered(resolution, resolution, float(resolution)), FrustumSpec(z_near, z_far, depth)


def _render_fns(engine, vol, k, f, poses, voxel_size):
    base = canonical_pose(f)
    rel = [relative_pose(base, p) for p in poses]
    if engine == "amortized":
        def one():
            AmortizedRenderer(vol, k, f, voxel_size).render(rel[0])

        def many():
            r = AmortizedRenderer(vol, k, f, voxel_size)
            for p in rel:
                r.render(p)
    elif engine == "reference":
        opts = RenderOptions(samples_per_ray=f.d_s)

        def one():
            reference_render(vol, rel[0], k, f, opts, voxel_size)

        def many():
            for p in rel:
                reference_render(vol, p, k, f, opts, voxel_size)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return one, many


def run_bench(vol, resolutions=(128,), depths=(64,), views=50, repeats=5, engines=ENGINES,
              voxel_size=None, warmup=1):
    """Time every engine at every (resolution, depth) pair; returns rows in that order."""
    vol = check_rgba(vol)
    if views < 1:
        raise ValueError("views must be positive")
    rows = []
    for engine in engines:
        for res in resolutions:
            for depth in depths:
                k, f = bench_geometry(res, depth)
                vs = f.default_voxel_size(vol.shape[1]) if voxel_size is None else voxel_size
                poses = turntable_poses(views, f.center_depth, elevation_deg=20.0)
                one, many = _render_fns(engine, vol, k, f, poses, vs)
                rows.append(BenchRow(
                    engine, res, depth, views,
                    median_ms(one, repeats, warmup), median_ms(many, repeats, warmup),
                ))
    return rows


def write_bench_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in fields(BenchRow)])
        for r in rows:
            row = astuple(r)
            writer.writerow(row[:4] + tuple(f"{x:.3f}" for x in row[4:]))
