"""Scene I/O and a synthetic piecewise-planar scene renderer.

On-disk scene layout::

    scene/images/NNNN.pgm | NNNN.ppm   8-bit grayscale or RGB
    scene/cams/NNNN.txt                R (9, row-major) t (3) fx fy cx cy dmin dmax
    scene/gt/NNNN.dmap                 optional ground-truth depth (DMAP1)
    scene/masks/NNNN.pgm               optional low-texture masks (nonzero = low texture)

DMAP1 layout: ``b"DMAP1\\n"``, ASCII ``"width height\\n"``, then ``width*height``
little-endian float32 values in row-major order. NMAP1 is identical with
three float32 components per pixel.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import FormatError, LoadError, RenderError, ValidationError
from .geometry import CameraModel, look_at, pixel_rays

DMAP_MAGIC = b"DMAP1\n"
NMAP_MAGIC = b"NMAP1\n"
_IMAGE_SUFFIXES = (".pgm", ".ppm")


@dataclass
class DepthMap:
    """Per-pixel depth; 0 marks an invalid pixel."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValidationError("depth map must be 2-D")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0


@dataclass
class NormalMap:
    """Per-pixel unit normal in camera coordinates; the zero vector marks invalid."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValidationError("normal map must have shape (H, W, 3)")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class SceneDataset:
    images: list[np.ndarray]
    cameras: list[CameraModel]
    depth_ranges: list[tuple[float, float]]
    gt_depth: list[DepthMap] | None = None
    colors: list[np.ndarray] | None = None
    lowtex_masks: list[np.ndarray] | None = None
    names: list[str] | None = None

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise ValidationError(
                f"{len(self.images)} images but {len(self.cameras)} cameras"
            )
        if len(self.images) < 2:
            raise ValidationError("a scene needs at least two views")
        if len(self.depth_ranges) != len(self.images):
            raise ValidationError("one depth range per image is required")
        for i, (dmin, dmax) in enumerate(self.depth_ranges):
            if not (0 < dmin < dmax):
                raise ValidationError(f"view {i}: invalid depth range ({dmin}, {dmax})")
        for i, (img, cam) in enumerate(zip(self.images, self.cameras)):
            if img.shape != (cam.height, cam.width):
                raise ValidationError(
                    f"view {i}: image is {img.shape[::-1]}, camera expects {(cam.width, cam.height)}"
                )
        if self.gt_depth is not None and len(self.gt_depth) != len(self.images):
            raise ValidationError("ground-truth list length differs from image count")
        if self.names is None:
            self.names = [f"{i:04d}" for i in range(len(self.images))]

    def __len__(self) -> int:
        return len(self.images)


# --- depth / normal map files ---------------------------------------------

def atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_map(path, magic: bytes, values: np.ndarray) -> None:
    h, w = values.shape[:2]
    header = magic + f"{w} {h}\n".encode("ascii")
    atomic_write(path, header + np.ascontiguousarray(values, dtype="<f4").tobytes())


def _read_map(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    end = data.find(b"\n", len(magic))
    if end < 0:
        raise FormatError(f"{path}: truncated header")
    try:
        w, h = (int(tok) for tok in data[len(magic) : end].split())
    except ValueError as exc:
        raise FormatError(f"{path}: malformed size line") from exc
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: non-positive size {w}x{h}")
    payload = data[end + 1 :]
    expected = w * h * channels * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return arr.reshape((h, w, channels) if channels > 1 else (h, w))


def save_depth_map(dmap: DepthMap | np.ndarray, path) -> None:
    values = dmap.values if isinstance(dmap, DepthMap) else np.asarray(dmap)
    _write_map(path, DMAP_MAGIC, values)


def load_depth_map(path) -> DepthMap:
    return DepthMap(_read_map(path, DMAP_MAGIC, 1))


def save_normal_map(nmap: NormalMap | np.ndarray, path) -> None:
    values = nmap.values if isinstance(nmap, NormalMap) else np.asarray(nmap)
    _write_map(path, NMAP_MAGIC, values)


def load_normal_map(path) -> NormalMap:
    return NormalMap(_read_map(path, NMAP_MAGIC, 3))


# --- images and cameras ----------------------------------------------------

def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255.0


def load_image(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(gray in [0, 1], rgb uint8)`` for an 8-bit PGM/PPM file."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise LoadError(f"{path}: cannot read image ({exc})") from exc
    if mode == "L":
        gray = arr.astype(np.float64) / 255.0
        rgb = np.repeat(arr[..., None], 3, axis=2)
    elif mode == "RGB":
        rgb = arr
        gray = rgb_to_gray(arr)
    else:
        raise LoadError(f"{path}: unsupported image mode {mode!r} (8-bit PGM/PPM only)")
    return gray, np.ascontiguousarray(rgb, dtype=np.uint8)


def save_image(gray: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(np.asarray(gray) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def format_camera(cam: CameraModel, depth_range: tuple[float, float]) -> str:
    vals = list(cam.R.ravel()) + list(cam.t) + [cam.fx, cam.fy, cam.cx, cam.cy, *depth_range]
    rows = [vals[0:3], vals[3:6], vals[6:9], vals[9:12], vals[12:16], vals[16:18]]
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in rows) + "\n"


def parse_camera(text: str, width: int, height: int, source: str = "<camera>"):
    try:
        vals = [float(tok) for tok in text.split()]
    except ValueError as exc:
        raise LoadError(f"{source}: non-numeric camera entry") from exc
    if len(vals) != 18:
        raise LoadError(f"{source}: expected 18 values, found {len(vals)}")
    R = np.array(vals[0:9]).reshape(3, 3)
    t = np.array(vals[9:12])
    fx, fy, cx, cy, dmin, dmax = vals[12:18]
    try:
        cam = CameraModel(fx, fy, cx, cy, R, t, width, height)
    except ValidationError as exc:
        raise ValidationError(f"{source}: {exc}") from exc
    return cam, (dmin, dmax)


def _stems(directory: Path, suffixes: Sequence[str]) -> dict[str, Path]:
    if not directory.is_dir():
        raise LoadError(f"missing directory {directory}")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in suffixes}


def load_scene(path) -> SceneDataset:
    root = Path(path)
    images = _stems(root / "images", _IMAGE_SUFFIXES)
    cams = _stems(root / "cams", (".txt",))
    if not images:
        raise LoadError(f"{root / 'images'}: no PGM/PPM images")
    if len(images) != len(cams):
        raise LoadError(f"{len(images)} images but {len(cams)} camera files in {root}")
    for stem in images:
        if stem not in cams:
            raise LoadError(f"image {images[stem].name} has no camera file cams/{stem}.txt")
    names = sorted(images)
    gt_dir = root / "gt"
    mask_dir = root / "masks"
    grays, colors, cameras, ranges, gts, masks = [], [], [], [], [], []
    for stem in names:
        gray, rgb = load_image(images[stem])
        h, w = gray.shape
        cam, drange = parse_camera(cams[stem].read_text(), w, h, source=str(cams[stem]))
        grays.append(gray)
        colors.append(rgb)
        cameras.append(cam)
        ranges.append(drange)
        gt_path = gt_dir / f"{stem}.dmap"
        if gt_path.exists():
            gt = load_depth_map(gt_path)
            if gt.values.shape != gray.shape:
                raise LoadError(f"{gt_path}: size {gt.values.shape[::-1]} differs from image")
            gts.append(gt)
        mask_path = mask_dir / f"{stem}.pgm"
        if mask_path.exists():
            m, _ = load_image(mask_path)
            masks.append(m > 0)
    if gts and len(gts) != len(names):
        raise LoadError(f"{gt_dir}: ground truth present for only {len(gts)} of {len(names)} views")
    return SceneDataset(
        images=grays,
        cameras=cameras,
        depth_ranges=ranges,
        gt_depth=gts or None,
        colors=colors,
        lowtex_masks=masks if len(masks) == len(names) else None,
        names=names,
    )


def save_scene(ds: SceneDataset, path) -> None:
    root = Path(path)
    for i, name in enumerate(ds.names):
        save_image(ds.images[i], root / "images" / f"{name}.pgm")
        atomic_write(
            root / "cams" / f"{name}.txt",
            format_camera(ds.cameras[i], ds.depth_ranges[i]).encode("ascii"),
        )
        if ds.gt_depth is not None:
            save_depth_map(ds.gt_depth[i], root / "gt" / f"{name}.dmap")
        if ds.lowtex_masks is not None:
            save_image(ds.lowtex_masks[i].astype(np.float64), root / "masks" / f"{name}.pgm")


# --- synthetic rendering -----------------------------------------------------

@dataclass
class PlaneSpec:
    """A (possibly bounded) textured or uniform plane in world coordinates.

    ``extent`` gives half-sizes along the plane's in-plane axes; ``None``
    makes the plane unbounded. A uniform plane may keep a textured frame of
    width ``border`` along its edges.
    """

    point: Sequence[float]
    normal: Sequence[float]
    extent: tuple[float, float] | None = None
    texture: str = "noise"
    intensity: float = 0.5
    contrast: float = 0.35
    texel: float = 0.03
    border: float = 0.0
    noise: float = 0.0


@dataclass
class SceneSpec:
    planes: list[PlaneSpec]
    poses: list[tuple[np.ndarray, np.ndarray]]
    width: int = 320
    height: int = 240
    fx: float = 300.0
    fy: float = 300.0
    cx: float | None = None
    cy: float | None = None
    supersample: int = 2
    depth_margin: float = 0.1
    texture_extent: float = 12.0

    def cameras(self) -> list[CameraModel]:
        cx = (self.width - 1) / 2.0 if self.cx is None else self.cx
        cy = (self.height - 1) / 2.0 if self.cy is None else self.cy
        return [CameraModel(self.fx, self.fy, cx, cy, R, t, self.width, self.height) for R, t in self.poses]


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 1.0, 0.0]) if abs(normal[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, normal)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(normal, e1)


@dataclass
class _PreparedPlane:
    spec: PlaneSpec
    point: np.ndarray
    normal: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    grids: list[tuple[float, np.ndarray]] = field(default_factory=list)
    half: float = 0.0


def _prepare_planes(spec: SceneSpec, rng: np.random.Generator) -> list[_PreparedPlane]:
    out = []
    for ps in spec.planes:
        n = np.asarray(ps.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        e1, e2 = _plane_basis(n)
        if ps.extent is not None:
            half = max(ps.extent) + 2 * ps.texel
        else:
            half = spec.texture_extent
        pp = _PreparedPlane(ps, np.asarray(ps.point, dtype=np.float64), n, e1, e2, half=half)
        # two octaves of value noise, normalised to unit standard deviation
        for scale in (1.0, 2.0):
            cell = ps.texel * scale
            size = int(math.ceil(2 * half / cell)) + 2
            pp.grids.append((cell, rng.standard_normal((size, size))))
        out.append(pp)
    return out


def _bilinear_grid(grid: np.ndarray, gu: np.ndarray, gv: np.ndarray) -> np.ndarray:
    n = grid.shape[0]
    gu = np.clip(gu, 0.0, n - 1.000001)
    gv = np.clip(gv, 0.0, n - 1.000001)
    i0 = np.floor(gu).astype(np.int64)
    j0 = np.floor(gv).astype(np.int64)
    au, av = gu - i0, gv - j0
    return (
        grid[i0, j0] * (1 - au) * (1 - av)
        + grid[i0 + 1, j0] * au * (1 - av)
        + grid[i0, j0 + 1] * (1 - au) * av
        + grid[i0 + 1, j0 + 1] * au * av
    )


def _plane_hits(pp: _PreparedPlane, origin: np.ndarray, dirs: np.ndarray):
    """Ray parameter (== camera z-depth for unit-z rays) and in-plane coords."""
    denom = dirs @ pp.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        tpar = ((pp.point - origin) @ pp.normal) / denom
    X = origin + tpar[..., None] * dirs
    rel = X - pp.point
    a = rel @ pp.e1
    b = rel @ pp.e2
    ok = np.isfinite(tpar) & (tpar > 1e-9)
    if pp.spec.extent is not None:
        ok &= (np.abs(a) <= pp.spec.extent[0]) & (np.abs(b) <= pp.spec.extent[1])
    return np.where(ok, tpar, np.inf), a, b


def _shade(pp: _PreparedPlane, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Surface intensity and a boolean "uniform region" flag."""
    ps = pp.spec
    tex = np.zeros_like(a)
    for k, (cell, grid) in enumerate(pp.grids):
        weight = 1.0 if k == 0 else 0.7
        tex += weight * _bilinear_grid(grid, (a + pp.half) / cell, (b + pp.half) / cell)
    tex /= math.sqrt(1.0 + 0.7**2)
    textured = ps.intensity + ps.contrast * 0.5 * tex
    if ps.texture == "noise":
        return textured, np.zeros(a.shape, dtype=bool)
    if ps.texture != "uniform":
        raise RenderError(f"unknown texture kind {ps.texture!r}")
    uniform = np.ones(a.shape, dtype=bool)
    if ps.border > 0 and ps.extent is not None:
        uniform = (np.abs(a) <= ps.extent[0] - ps.border) & (np.abs(b) <= ps.extent[1] - ps.border)
    return np.where(uniform, ps.intensity, textured), uniform


def _trace(planes, cam: CameraModel, offsets_px: tuple[float, float]):
    rays = pixel_rays(cam)
    rays[..., 0] += offsets_px[0] / cam.fx
    rays[..., 1] += offsets_px[1] / cam.fy
    dirs = rays @ cam.R  # camera -> world direction, keeps unit camera-z
    origin = cam.center
    best = np.full(rays.shape[:2], np.inf)
    shade = np.zeros(rays.shape[:2])
    uniform = np.zeros(rays.shape[:2], dtype=bool)
    noise_amp = np.zeros(rays.shape[:2])
    for pp in planes:
        tpar, a, b = _plane_hits(pp, origin, dirs)
        closer = tpar < best
        if not closer.any():
            continue
        val, uni = _shade(pp, a, b)
        best = np.where(closer, tpar, best)
        shade = np.where(closer, val, shade)
        uniform = np.where(closer, uni, uniform)
        noise_amp = np.where(closer & uni, pp.spec.noise, np.where(closer, 0.0, noise_amp))
    return best, shade, uniform, noise_amp


def render_synthetic_scene(spec: SceneSpec, seed: int = 0) -> SceneDataset:
    """Ray-trace every camera against the plane set and return exact ground truth.

    Images are quantized to 8 bits so the in-memory dataset matches what
    :func:`save_scene`/:func:`load_scene` round-trip.
    """
    if not spec.planes:
        raise RenderError("scene has no planes")
    if len(spec.poses) < 2:
        raise RenderError("scene needs at least two camera poses")
    ss = max(1, int(spec.supersample))
    root = np.random.SeedSequence(seed)
    tex_seq, noise_seq = root.spawn(2)
    planes = _prepare_planes(spec, np.random.default_rng(tex_seq))
    noise_rngs = [np.random.default_rng(s) for s in noise_seq.spawn(len(spec.poses))]
    cams = spec.cameras()
    images, gts, masks, ranges = [], [], [], []
    sub = [((i + 0.5) / ss - 0.5, (j + 0.5) / ss - 0.5) for j in range(ss) for i in range(ss)]
    for k, cam in enumerate(cams):
        depth, _, uniform, noise_amp = _trace(planes, cam, (0.0, 0.0))
        valid = np.isfinite(depth)
        if not valid.any():
            raise RenderError(f"camera {k} sees no plane")
        acc = np.zeros(depth.shape)
        for off in sub:
            _, val, uni, _ = _trace(planes, cam, off)
            acc += val
            uniform &= uni  # low-texture only if every subsample is uniform
        img = acc / len(sub)
        if np.any(noise_amp > 0):
            img = img + noise_amp * noise_rngs[k].standard_normal(img.shape)
        img = np.where(valid, img, 0.0)
        img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
        gt = np.where(valid, depth, 0.0)
        d = gt[valid]
        ranges.append((float(d.min()) * (1 - spec.depth_margin), float(d.max()) * (1 + spec.depth_margin)))
        images.append(img)
        gts.append(DepthMap(gt))
        masks.append(uniform & valid)
    return SceneDataset(
        images=images,
        cameras=cams,
        depth_ranges=ranges,
        gt_depth=gts,
        colors=[np.repeat(np.rint(im * 255).astype(np.uint8)[..., None], 3, axis=2) for im in images],
        lowtex_masks=masks,
    )


# --- scene presets ------------------------------------------------------------

def cross_rig(
    n_views: int = 5,
    baseline: float = 0.3,
    target=(0.0, 0.0, 3.5),
) -> list[tuple[np.ndarray, np.ndarray]]:
    """A center camera plus cameras spread on a circle, all aimed at ``target``."""
    eyes = [np.zeros(3)]
    for k in range(n_views - 1):
        ang = 2 * math.pi * k / (n_views - 1)
        eyes.append(np.array([baseline * math.cos(ang), baseline * math.sin(ang), 0.0]))
    return [look_at(e, target) for e in eyes]


def _tilted_normal(deg_about_y: float, deg_about_x: float = 0.0) -> np.ndarray:
    ay, ax = math.radians(deg_about_y), math.radians(deg_about_x)
    n = np.array([math.sin(ay), 0.0, -math.cos(ay)])
    c, s = math.cos(ax), math.sin(ax)
    return np.array([n[0], c * n[1] - s * n[2], s * n[1] + c * n[2]])


def textured_scene_spec(width: int = 320, height: int = 240, n_views: int = 5) -> SceneSpec:
    """Slanted textured backdrop with a fronto-parallel textured panel in front."""
    f = 300.0 * width / 320.0
    planes = [
        PlaneSpec(point=(0.0, 0.0, 3.4), normal=(0.0, 0.0, -1.0), extent=(0.55, 0.45), texel=0.025),
        PlaneSpec(point=(0.0, 0.0, 4.0), normal=_tilted_normal(25.0, 10.0), texel=0.03),
    ]
    return SceneSpec(planes=planes, poses=cross_rig(n_views), width=width, height=height, fx=f, fy=f)


def low_texture_scene_spec(width: int = 320, height: int = 240, n_views: int = 5) -> SceneSpec:
    """A large uniform panel (textured only along its rim) before a textured backdrop."""
    f = 300.0 * width / 320.0
    planes = [
        PlaneSpec(
            point=(0.0, 0.0, 3.0),
            normal=_tilted_normal(-15.0, 5.0),
            extent=(1.25, 0.95),
            texture="uniform",
            intensity=0.55,
            border=0.18,
            texel=0.025,
        ),
        PlaneSpec(point=(0.0, 0.0, 4.2), normal=_tilted_normal(20.0), texel=0.03),
    ]
    return SceneSpec(planes=planes, poses=cross_rig(n_views), width=width, height=height, fx=f, fy=f)


PRESETS = {
    "textured": textured_scene_spec,
    "lowtex": low_texture_scene_spec,
}
