"""Scene manifests, image files and procedural ground-truth volumes.

Manifest grammar (one record per line, ``#`` starts a comment)::

    volsynth-manifest 1
    intrinsics <fx> <fy> <cx> <cy> <width> <height>
    frustum <z_near> <z_far> <d_s> [<object_depth>]
    voxel_size <size>
    view <id> <image-path> <m00> <m01> ... <m33>

``view`` lines carry a 4x4 row-major world-to-camera matrix.  Image paths
are relative to the manifest's directory unless absolute.  At least one
view is required and ids must be unique.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

from .camera import FrustumSpec, Intrinsics, Pose, canonical_pose, relative_pose, sphere_poses
from .errors import CorruptHeader, InvalidPose, MissingImage, ParseError, UnsupportedFormat
from .renderer import RenderOptions, reference_render
from .validation import check_dims

MANIFEST_HEADER = "volsynth-manifest 1"


@dataclass
class View:
    id: str
    pose: Pose
    image_path: str


@dataclass
class SceneManifest:
    intrinsics: Intrinsics
    frustum: FrustumSpec
    voxel_size: float
    views: list = field(default_factory=list)
    root: str = field(default=".", compare=False)

    def __len__(self):
        return len(self.views)

    def resolve(self, view):
        p = view.image_path
        return p if os.path.isabs(p) else os.path.join(self.root, p)

    @property
    def poses(self):
        return [v.pose for v in self.views]

    def load_images(self):
        return [read_image(self.resolve(v)) for v in self.views]


def _floats(tokens, lineno, key):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError("expected numbers", line=lineno, field=key) from None


def load_manifest(path, check_images=True):
    """Parse and validate a manifest file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    records = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            records.append((lineno, line))
    if not records or records[0][1] != MANIFEST_HEADER:
        raise ParseError(f"missing '{MANIFEST_HEADER}' header", line=records[0][0] if records else 1)

    intr = frus = vsize = None
    views, seen = [], set()
    for lineno, line in records[1:]:
        key, *rest = line.split()
        if key == "intrinsics":
            if len(rest) != 6:
                raise ParseError("intrinsics takes 6 values", line=lineno, field=key)
            fx, fy, cx, cy, w, h = _floats(rest, lineno, key)
            if w != int(w) or h != int(h):
                raise ParseError("image size must be integral", line=lineno, field=key)
            try:
                intr = Intrinsics(fx, fy, cx, cy, int(w), int(h))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, field=key) from None
        elif key == "frustum":
            if len(rest) not in (3, 4):
                raise ParseError("frustum takes 3 or 4 values", line=lineno, field=key)
            vals = _floats(rest, lineno, key)
            if vals[2] != int(vals[2]):
                raise ParseError("slice count must be integral", line=lineno, field=key)
            try:
                frus = FrustumSpec(vals[0], vals[1], int(vals[2]), vals[3] if len(vals) == 4 else None)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, field=key) from None
        elif key == "voxel_size":
            if len(rest) != 1:
                raise ParseError("voxel_size takes 1 value", line=lineno, field=key)
            (vsize,) = _floats(rest, lineno, key)
            if not vsize > 0:
                raise ParseError("voxel_size must be positive", line=lineno, field=key)
        elif key == "view":
            if len(rest) != 18:
                raise ParseError("view takes an id, an image path and 16 numbers", line=lineno, field=key)
            vid, img = rest[0], rest[1]
            if vid in seen:
                raise ParseError(f"duplicate view id {vid!r}", line=lineno, field="id")
            seen.add(vid)
            m = np.array(_floats(rest[2:], lineno, "pose")).reshape(4, 4)
            try:
                pose = Pose.from_matrix(m)
            except InvalidPose as exc:
                raise InvalidPose(f"view {vid!r}: {exc}") from None
            views.append(View(vid, pose, img))
        else:
            raise ParseError(f"unknown record {key!r}", line=lineno, field=key)

    for name, value in (("intrinsics", intr), ("frustum", frus), ("voxel_size", vsize)):
        if value is None:
            raise ParseError(f"missing {name} record", field=name)
    if not views:
        raise ParseError("manifest lists no views", field="view")
    manifest = SceneManifest(intr, frus, vsize, views, root=os.path.dirname(os.path.abspath(path)))
    if check_images:
        for v in views:
            if not os.path.isfile(manifest.resolve(v)):
                raise MissingImage(f"view {v.id!r}: image {manifest.resolve(v)} not found")
    return manifest


def write_manifest(manifest: SceneManifest, path):
    k, f = manifest.intrinsics, manifest.frustum
    lines = [
        MANIFEST_HEADER,
        f"intrinsics {k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r} {k.width} {k.height}",
        f"frustum {f.z_near!r} {f.z_far!r} {f.d_s}" + ("" if f.object_depth is None else f" {f.object_depth!r}"),
        f"voxel_size {manifest.voxel_size!r}",
    ]
    for v in manifest.views:
        if re.search(r"\s", v.id) or re.search(r"\s", v.image_path):
            raise ValueError("view ids and image paths may not contain whitespace")
        nums = " ".join(repr(float(x)) for x in v.pose.matrix().ravel())
        lines.append(f"view {v.id} {v.image_path} {nums}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# images


def png_supported():
    try:
        import PIL.Image  # noqa: F401
    except ImportError:
        return False
    return True


def _read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptHeader(f"{path}: truncated PPM header")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P6":
        raise UnsupportedFormat(f"{path}: only binary PPM (P6) is supported")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise CorruptHeader(f"{path}: non-numeric PPM header field") from None
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: PPM maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise CorruptHeader(f"{path}: bad PPM size {w}x{h}")
    pos += 1  # single whitespace byte before the raster
    payload = blob[pos:pos + w * h * 3]
    if len(payload) != w * h * 3:
        raise CorruptHeader(f"{path}: expected {w * h * 3} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)


def _write_ppm(path, data):
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype=np.uint8).tobytes())


def _ext(path):
    return os.path.splitext(str(path))[1].lower()


def read_image_u8(path):
    ext = _ext(path)
    if ext == ".ppm":
        return _read_ppm(path)
    if ext == ".png":
        if not png_supported():
            raise UnsupportedFormat("PNG support requires Pillow")
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    raise UnsupportedFormat(f"unsupported image extension {ext!r}")


def read_image(path):
    """Load an RGB image as float64 ``(H, W, 3)`` with values ``v / 255``."""
    return read_image_u8(path).astype(np.float64) / 255.0


def quantize(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(img, path):
    """Write an RGB float image (``[0, 1]``) or uint8 array to PPM or PNG."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {arr.shape}")
    data = arr if arr.dtype == np.uint8 else quantize(arr)
    ext = _ext(path)
    if ext == ".ppm":
        _write_ppm(path, data)
    elif ext == ".png":
        if not png_supported():
            raise UnsupportedFormat("PNG support requires Pillow")
        from PIL import Image

        Image.fromarray(data, mode="RGB").save(path)
    else:
        raise UnsupportedFormat(f"unsupported image extension {ext!r}")


# ---------------------------------------------------------------------------
# procedural scenes

_KINDS = ("sphere", "box", "cylinder")


@dataclass(frozen=True)
class Primitive:
    """Solid in normalized cube coordinates ``[-1, 1]^3`` (x, y, z).

    ``size`` holds radii for spheres (ellipsoids), half-extents for boxes,
    and ``(radius_x, half_height, radius_z)`` for y-aligned cylinders.
    """

    kind: str
    center: tuple
    size: tuple
    rgb: tuple
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        for name in ("center", "size", "rgb"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ValueError(f"{name} must have three components")
            object.__setattr__(self, name, v)
        if min(self.size) <= 0:
            raise ValueError("primitive size must be positive")
        if min(self.rgb) < 0 or max(self.rgb) > 1:
            raise ValueError("primitive color must lie in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("primitive alpha must lie in (0, 1]")

    def contains(self, x, y, z):
        cx, cy, cz = self.center
        sx, sy, sz = self.size
        dx, dy, dz = (x - cx) / sx, (y - cy) / sy, (z - cz) / sz
        if self.kind == "sphere":
            return dx * dx + dy * dy + dz * dz <= 1.0
        if self.kind == "box":
            return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0) & (np.abs(dz) <= 1.0)
        return (dx * dx + dz * dz <= 1.0) & (np.abs(dy) <= 1.0)


@dataclass(frozen=True)
class ProceduralSpec:
    primitives: tuple
    dims: tuple = (64, 64, 64)
    seed: int = 0

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ValueError("a procedural scene needs at least one primitive")
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "dims", check_dims(self.dims))

    @classmethod
    def random(cls, seed, n_primitives=2, dims=(64, 64, 64), alpha=(0.5, 1.0)):
        """Seeded random scene of primitives kept inside the unit ball."""
        rng = np.random.default_rng(seed)
        prims = []
        for _ in range(n_primitives):
            kind = _KINDS[rng.integers(len(_KINDS))]
            size = rng.uniform(0.15, 0.35, size=3)
            if kind == "sphere":
                size[:] = size[0]
            center = rng.uniform(-0.35, 0.35, size=3)
            rgb = rng.uniform(0.05, 0.95, size=3)
            prims.append(Primitive(kind, tuple(center), tuple(size), tuple(rgb), float(rng.uniform(*alpha))))
        return cls(tuple(prims), dims, seed)


def normalized_centers(dims):
    """Normalized ``[-1, 1]`` coordinates of voxel centers as ``(x, y, z)`` grids."""
    d, h, w = check_dims(dims)
    z = (np.arange(d) + 0.5) / d * 2.0 - 1.0
    y = (np.arange(h) + 0.5) / h * 2.0 - 1.0
    x = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    Z, Y, X = np.meshgrid(z, y, x, indexing="ij")
    return X, Y, Z


def generate_scene(spec: ProceduralSpec):
    """Voxelize the primitives into a ``(4, D, H, W)`` float32 RGBA volume.

    Membership is tested at voxel centers; later primitives overwrite
    earlier ones; everything else has zero color and opacity.
    """
    X, Y, Z = normalized_centers(spec.dims)
    vol = np.zeros((4,) + spec.dims, dtype=np.float32)
    for prim in spec.primitives:
        inside = prim.contains(X, Y, Z)
        for c in range(3):
            vol[c][inside] = prim.rgb[c]
        vol[3][inside] = prim.alpha
    return vol


def render_dataset(
    vol,
    poses,
    k: Intrinsics,
    f: FrustumSpec,
    opts: RenderOptions | None,
    out_dir,
    voxel_size=None,
    manifest_name="manifest.txt",
    seed=0,
):
    """Render a world-frame volume from ``poses`` and write images plus manifest.

    ``poses`` is either a list of world-to-camera poses or an ``int``, in
    which case that many seeded sphere poses at ``f.center_depth`` are used.
    Views are rendered with the matched-mode reference renderer.
    """
    if isinstance(poses, int):
        poses = sphere_poses(poses, f.center_depth, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    vs = f.default_voxel_size(np.shape(vol)[1]) if voxel_size is None else float(voxel_size)
    opts = opts or RenderOptions()
    base = canonical_pose(f)
    views = []
    for i, pose in enumerate(poses):
        img = reference_render(vol, relative_pose(base, pose), k, f, opts, vs).rgb
        name = f"view_{i:04d}.ppm"
        write_image(img, os.path.join(out_dir, name))
        views.append(View(f"{i:04d}", pose, name))
    manifest = SceneManifest(k, f, vs, views, root=os.path.abspath(out_dir))
    write_manifest(manifest, os.path.join(out_dir, manifest_name))
    return manifest
