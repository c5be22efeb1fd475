"""Command-line interface: ``volsynth <command> [options]``.

Exit status is 0 on success, 1 for data or runtime errors (unreadable or
malformed inputs, failed checks) and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import bench as bench_mod
from .camera import FrustumSpec, Intrinsics, Pose, canonical_pose, relative_pose, turntable_poses
from .diff import OptimConfig, fit_volume, gradient_suite, write_loss_csv
from .errors import DimensionMismatch, VolsynthError
from .metrics import (
    binarize_alpha,
    miou,
    occupancy_resample,
    psnr,
    ssim,
    write_scene_metrics_csv,
    write_view_metrics_csv,
)
from .renderer import AmortizedRenderer, RenderOptions, reference_render
from .scene import ProceduralSpec, generate_scene, load_manifest, read_image, write_image
from .volume import read_voxl, write_voxl

log = logging.getLogger("volsynth")

THREADS_ENV = "VOLSYNTH_THREADS"
GRAD_TOL = 1e-4


class UsageError(Exception):
    """Flag combination rejected after parsing; maps to exit status 2."""


# ---------------------------------------------------------------------------
# argument types


def _float_list(n=None):
    def parse(text):
        try:
            vals = [float(x) for x in text.replace(",", " ").split()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None
        if n is not None and len(vals) not in ((n,) if isinstance(n, int) else n):
            raise argparse.ArgumentTypeError(f"expected {n} numbers, got {len(vals)}")
        return vals
    return parse


def _int_list(text):
    try:
        vals = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


def _dims(text):
    vals = _int_list(text)
    if len(vals) == 1:
        vals *= 3
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("dims takes one or three integers")
    return tuple(vals)


def _unit_interval(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


# ---------------------------------------------------------------------------
# helpers


def _intrinsics(vals):
    fx, fy, cx, cy, w, h = vals
    if w != int(w) or h != int(h):
        raise UsageError("image width and height must be integers")
    try:
        return Intrinsics(fx, fy, cx, cy, int(w), int(h))
    except ValueError as exc:
        raise UsageError(f"--intrinsics: {exc}") from None


def _frustum(vals):
    if vals[2] != int(vals[2]):
        raise UsageError("--frustum slice count must be an integer")
    try:
        return FrustumSpec(vals[0], vals[1], int(vals[2]), vals[3] if len(vals) == 4 else None)
    except ValueError as exc:
        raise UsageError(f"--frustum: {exc}") from None


def _load_volume(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"volume file not found: {path}")
    return read_voxl(path)


def _render_one(engine, vol, k, f, pose, voxel_size, opts):
    if engine == "amortized":
        return AmortizedRenderer(vol, k, f, voxel_size, opts.background).render_world(pose)
    return reference_render(vol, relative_pose(canonical_pose(f), pose), k, f, opts, voxel_size)


def set_threads(n):
    """Cap compiled-kernel parallelism (also read from ``VOLSYNTH_THREADS``)."""
    if n is None:
        env = os.environ.get(THREADS_ENV)
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be positive")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _color(text):
    vals = _float_list(3)(text)
    if min(vals) < 0.0 or max(vals) > 1.0:
        raise argparse.ArgumentTypeError("color components must lie in [0, 1]")
    return vals


def _add_geometry(p):
    p.add_argument("--intrinsics", type=_float_list(6), default=[64, 64, 32, 32, 64, 64],
                   metavar="FX,FY,CX,CY,W,H", help="pinhole intrinsics (default: 64x64 image, focal 64)")
    p.add_argument("--frustum", type=_float_list((3, 4)), default=[2.0, 6.0, 64],
                   metavar="ZNEAR,ZFAR,SLICES[,DEPTH]", help="depth range and slice count (default: 2,6,64)")
    p.add_argument("--voxel-size", type=_positive_float, default=None,
                   help="world units per voxel (default: cube spans the depth range)")
    p.add_argument("--background", type=_color, default=[1.0, 1.0, 1.0], metavar="R,G,B")


# ---------------------------------------------------------------------------
# commands


def cmd_render(args):
    if args.manifest_view:
        manifest = load_manifest(args.manifest_view[0], check_images=False)
        view = {v.id: v for v in manifest.views}.get(args.manifest_view[1])
        if view is None:
            raise UsageError(f"view {args.manifest_view[1]!r} not in {args.manifest_view[0]}")
        k, f, pose = manifest.intrinsics, manifest.frustum, view.pose
        vs = manifest.voxel_size if args.voxel_size is None else args.voxel_size
    else:
        k, f = _intrinsics(args.intrinsics), _frustum(args.frustum)
        vs = args.voxel_size
        if args.pose is None:
            pose = canonical_pose(f)
        else:
            try:
                pose = Pose.from_matrix(np.array(args.pose).reshape(4, 4))
            except VolsynthError as exc:
                raise UsageError(f"--pose: {exc}") from None
    if args.samples is not None and args.engine != "reference":
        raise UsageError("--samples only applies to --engine reference")
    vol = _load_volume(args.volume)
    opts = RenderOptions(background=tuple(args.background), samples_per_ray=args.samples)
    t0 = time.perf_counter()
    out = _render_one(args.engine, vol, k, f, pose, vs, opts)
    ms = (time.perf_counter() - t0) * 1e3
    write_image(out.rgb, args.out)
    print(f"render_ms {ms:.3f}")
    return 0


def cmd_turntable(args):
    k, f = _intrinsics(args.intrinsics), _frustum(args.frustum)
    radius = f.center_depth if args.radius is None else args.radius
    vol = _load_volume(args.volume)
    opts = RenderOptions(background=tuple(args.background))
    poses = turntable_poses(args.n_views, radius, args.elevation)
    os.makedirs(args.out_dir, exist_ok=True)
    images = []
    t0 = time.perf_counter()
    if args.engine == "amortized":
        r = AmortizedRenderer(vol, k, f, args.voxel_size, opts.background)
        images = [r.render_world(p).rgb for p in poses]
    else:
        images = [_render_one("reference", vol, k, f, p, args.voxel_size, opts).rgb for p in poses]
    total = (time.perf_counter() - t0) * 1e3
    for i, img in enumerate(images):
        write_image(img, os.path.join(args.out_dir, f"view_{i:04d}.ppm"))
    print(f"total_ms {total:.3f}")
    print(f"per_view_ms {total / len(poses):.3f}")
    return 0


def _split_holdout(manifest, holdout):
    n = len(manifest.views)
    if holdout > n:
        raise UsageError(f"--holdout {holdout} exceeds the {n} views in the manifest")
    if n - holdout < 2:
        raise UsageError(f"need at least two training views, {n - holdout} left after holdout")
    return manifest.views[:n - holdout], manifest.views[n - holdout:]


def cmd_fit(args):
    manifest = load_manifest(args.manifest)
    train, held = _split_holdout(manifest, args.holdout)
    k, f = manifest.intrinsics, manifest.frustum
    vs = manifest.voxel_size if args.voxel_size is None else args.voxel_size
    cfg = OptimConfig(
        learning_rate=args.lr, iterations=args.iters, lambda_ssim=args.lambda_ssim,
        seed=args.seed, batch_views=args.batch_views,
    )
    images = [read_image(manifest.resolve(v)) for v in train]

    def progress(rec):
        if rec.iteration % 50 == 0:
            log.info("iter %d loss %.6g", rec.iteration, rec.total)

    t0 = time.perf_counter()
    res = fit_volume(images, [v.pose for v in train], k, f, cfg, dims=args.dims, voxel_size=vs,
                     background=tuple(args.background), callback=progress)
    log.info("fit took %.1f s", time.perf_counter() - t0)
    write_voxl(args.out_volume, res.volume)
    stem = os.path.splitext(args.out_volume)[0]
    loss_csv = args.loss_csv or stem + "_loss.csv"
    write_loss_csv(loss_csv, res.trace)
    print(f"final_loss {res.trace[-1].total:.6g}")
    if held:
        r = AmortizedRenderer(res.volume, k, f, vs, tuple(args.background))
        rows = []
        for v in held:
            pred = r.render_world(v.pose).rgb
            target = read_image(manifest.resolve(v))
            rows.append((v.id, psnr(pred, target), ssim(pred, target)))
            print(f"heldout {v.id} psnr {rows[-1][1]:.3f} ssim {rows[-1][2]:.4f}")
        write_view_metrics_csv(args.report or stem + "_heldout.csv", rows)
    return 0


def cmd_eval(args):
    metrics = args.metrics
    if {"psnr", "ssim"} & set(metrics) and not args.manifest:
        raise UsageError("psnr and ssim need --manifest to supply reference views")
    if "miou" in metrics and not args.gt_volume:
        raise UsageError("miou needs --gt-volume")
    pred = _load_volume(args.pred_volume)
    if "miou" in metrics:
        gt = _load_volume(args.gt_volume)
        a, b = binarize_alpha(pred, args.tau), binarize_alpha(gt, args.tau)
        if a.shape != b.shape:
            if not args.resample:
                raise DimensionMismatch(f"occupancy shapes differ: {a.shape} vs {b.shape} (use --resample)")
            if a.size < b.size:
                a = occupancy_resample(a, b.shape)
            else:
                b = occupancy_resample(b, a.shape)
        score = miou(a, b)
        print(f"miou {score:.6f} threshold {args.tau:g}")
        if args.csv:
            write_scene_metrics_csv(args.csv, score, args.tau)
    if {"psnr", "ssim"} & set(metrics):
        manifest = load_manifest(args.manifest)
        r = AmortizedRenderer(pred, manifest.intrinsics, manifest.frustum, manifest.voxel_size)
        rows = []
        for v in manifest.views:
            img = r.render_world(v.pose).rgb
            target = read_image(manifest.resolve(v))
            rows.append((v.id, psnr(img, target), ssim(img, target)))
        for vid, p, s in rows:
            parts = [f"view {vid}"]
            if "psnr" in metrics:
                parts.append(f"psnr {p:.3f}")
            if "ssim" in metrics:
                parts.append(f"ssim {s:.4f}")
            print(" ".join(parts))
        if args.views_csv:
            write_view_metrics_csv(args.views_csv, rows)
    return 0


def cmd_bench(args):
    if args.volume:
        vol = _load_volume(args.volume)
    else:
        spec = ProceduralSpec.random(args.seed, 3, tuple(args.dims))
        vol = generate_scene(spec)
    rows = bench_mod.run_bench(vol, args.resolutions, args.depth_samples, args.views, args.repeats, args.engines)
    for r in rows:
        print(f"{r.engine:9s} res {r.resolution:4d} depth {r.depth:4d} views {r.views:4d} "
              f"per_view_ms {r.per_view_ms:10.3f} per_object_ms {r.per_object_ms:11.3f}")
    if args.csv:
        bench_mod.write_bench_csv(args.csv, rows)
    return 0


def cmd_gradcheck(args):
    if len(args.size) != 4:
        raise UsageError("--size takes four integers C,D,H,W")
    results = gradient_suite(args.seed, tuple(args.size), corrupt=args.corrupt_vjp)
    ok = True
    for name, err in results:
        passed = err <= GRAD_TOL
        ok &= passed
        print(f"{name:18s} max_rel_err {err:.3e} {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="volsynth", description=__doc__.splitlines()[0])
    # accepted before or after the subcommand; SUPPRESS keeps the subparser
    # from overwriting a value given before it
    common = argparse.ArgumentParser(add_help=False)
    for target, default in ((parser, None), (common, argparse.SUPPRESS)):
        target.add_argument("--threads", type=_positive_int, default=default,
                            help=f"cap on compiled-kernel threads (default: ${THREADS_ENV} or all)")
        target.add_argument("-v", "--verbose", action="store_true", default=default or False)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_parser = sub.add_parser

    def add_parser(name, **kw):
        return _add_parser(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("render", help="render one view of a VOXL volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True, help="output image (.ppm, or .png with Pillow)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--pose", type=_float_list(16), metavar="M00,...,M33",
                     help="row-major 4x4 world-to-camera matrix (default: canonical front view)")
    src.add_argument("--manifest-view", nargs=2, metavar=("MANIFEST", "VIEW_ID"),
                     help="take camera and geometry from a manifest view")
    p.add_argument("--engine", choices=("amortized", "reference"), default="amortized")
    p.add_argument("--samples", type=_positive_int, default=None, help="reference samples per ray")
    _add_geometry(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("turntable", help="render equally spaced azimuth views")
    p.add_argument("--volume", required=True)
    p.add_argument("--n-views", type=_positive_int, default=36)
    p.add_argument("--radius", type=_positive_float, default=None, help="default: frustum center depth")
    p.add_argument("--elevation", type=float, default=0.0, help="degrees")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--engine", choices=("amortized", "reference"), default="amortized")
    _add_geometry(p)
    p.set_defaults(func=cmd_turntable)

    p = sub.add_parser("fit", help="fit a volume to the views of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dims", type=_dims, default=(64, 64, 64), metavar="D[,H,W]")
    p.add_argument("--iters", type=_positive_int, default=500)
    p.add_argument("--lr", type=_positive_float, default=0.05)
    p.add_argument("--lambda", dest="lambda_ssim", type=float, default=0.05, help="SSIM loss weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-views", type=_positive_int, default=None,
                   help="views per step (default: all training views)")
    p.add_argument("--holdout", type=_nonneg_int, default=0, help="hold out the last K views for evaluation")
    p.add_argument("--voxel-size", type=_positive_float, default=None, help="default: from the manifest")
    p.add_argument("--background", type=_color, default=[1.0, 1.0, 1.0], metavar="R,G,B")
    p.add_argument("--out-volume", required=True)
    p.add_argument("--loss-csv", default=None, help="default: <out-volume stem>_loss.csv")
    p.add_argument("--report", default=None, help="held-out metrics CSV (default: <stem>_heldout.csv)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score a predicted volume")
    p.add_argument("--pred-volume", required=True)
    p.add_argument("--gt-volume")
    p.add_argument("--tau", type=_unit_interval, default=0.05, help="opacity threshold (strictly greater)")
    p.add_argument("--resample", action="store_true",
                   help="nearest-neighbor resample the coarser occupancy grid to the finer one")
    p.add_argument("--metrics", type=lambda s: s.split(","), default=["miou"], metavar="miou,psnr,ssim")
    p.add_argument("--manifest", help="reference views for psnr/ssim")
    p.add_argument("--csv", help="scene-level CSV (miou, threshold)")
    p.add_argument("--views-csv", help="per-view CSV (view_id, psnr, ssim)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time amortized vs per-ray rendering")
    p.add_argument("--volume", help="VOXL volume (default: procedural scene of --dims)")
    p.add_argument("--dims", type=_dims, default=(64, 128, 128), metavar="D[,H,W]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolutions", type=_int_list, default=[128], metavar="R[,R...]")
    p.add_argument("--depth-samples", type=_int_list, default=[64], metavar="S[,S...]")
    p.add_argument("--views", type=_positive_int, default=50)
    p.add_argument("--repeats", type=_positive_int, default=5)
    p.add_argument("--engines", type=lambda s: s.split(","), default=list(bench_mod.ENGINES))
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_int_list, default=[4, 6, 6, 6], metavar="C,D,H,W")
    p.add_argument("--corrupt-vjp", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    for name, allowed in (("metrics", {"miou", "psnr", "ssim"}), ("engines", set(bench_mod.ENGINES))):
        bad = set(getattr(args, name, None) or ()) - allowed
        if bad:
            parser.error(f"--{name}: unknown value(s) {', '.join(sorted(bad))}")
    try:
        set_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"volsynth {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (VolsynthError, OSError, ValueError) as exc:
        print(f"volsynth {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
