"""Gray images, sequence loading, subset grids and synthetic speckle pairs.

Images are stored as read-only ``float64`` arrays indexed ``data[y, x]``.
The synthetic generator doubles as the accuracy oracle: a reference speckle
pattern is resampled through a known warp with bilinear interpolation so
the true displacement of every point is known analytically.
"""

from __future__ import annotations

import csv
import glob
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage


class ImageError(ValueError):
    """Raised for unreadable, unsupported or malformed images."""


class TexturelessPatternError(ValueError):
    """Raised when a synthetic pattern carries too little texture to correlate."""


class WarpOutOfBoundsError(ValueError):
    """Raised when a synthetic warp leaves no valid pixel in the target."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 2D grid of gray levels.

    Attributes:
        data: ``(height, width)`` float64 array, row-major, read-only.
        id: position of the image in its sequence (``-1`` if standalone).
    """

    data: np.ndarray
    id: int = -1

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True, order="C")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageError(f"image must be a non-empty 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite gray levels")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_id(self, new_id: int) -> "GrayImage":
        return GrayImage(self.data, id=new_id)


@dataclass(frozen=True)
class SubsetSpec:
    """A point of interest and the half-width ``M`` of its square subset."""

    center_x: int
    center_y: int
    half_width: int

    def __post_init__(self):
        if self.half_width < 1:
            raise ValueError("half_width must be >= 1")

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1

    def fits(self, width: int, height: int, dx: int = 0, dy: int = 0) -> bool:
        m = self.half_width
        x, y = self.center_x + dx, self.center_y + dy
        return m <= x <= width - 1 - m and m <= y <= height - 1 - m

    def window(self, data: np.ndarray, dx: int = 0, dy: int = 0) -> np.ndarray:
        """View of the (optionally displaced) subset inside ``data``."""
        m = self.half_width
        x, y = self.center_x + dx, self.center_y + dy
        return data[y - m:y + m + 1, x - m:x + m + 1]


# ---------------------------------------------------------------------------
# Portable graymap I/O
# ---------------------------------------------------------------------------

def _read_pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    """Parse ``count`` whitespace-separated header integers, skipping comments."""
    tokens: list[int] = []
    pos = 2
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageError("unreadable: malformed PGM header")
        tokens.append(int(buf[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise ImageError("unreadable: malformed PGM header")
    return tokens, pos + 1


def _decode_pgm(buf: bytes) -> np.ndarray:
    width, height, maxval = 0, 0, 0
    (width, height, maxval), offset = _read_pgm_tokens(buf, 3)
    if width < 1 or height < 1:
        raise ImageError("zero-dimension image")
    if not 1 <= maxval <= 255:
        raise ImageError(f"unsupported format: PGM maxval {maxval} (8-bit only)")
    raster = buf[offset:offset + width * height]
    if len(raster) < width * height:
        raise ImageError("unreadable: truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def load_image(path: str | os.PathLike, image_id: int = -1) -> GrayImage:
    """Load an 8-bit grayscale image; byte value ``n`` maps to gray level ``n``.

    Binary PGM (``P5``) is parsed natively. Other raster formats are read
    through Pillow and must already be single-channel 8-bit.
    """
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ImageError(f"unreadable: {path}: {exc}") from exc
    if buf[:2] == b"P5":
        pixels = _decode_pgm(buf)
    else:
        pixels = _load_with_pillow(path)
    return GrayImage(pixels.astype(np.float64), id=image_id)


def _load_with_pillow(path: str) -> np.ndarray:
    try:
        from PIL import Image, UnidentifiedImageError
    except ImportError as exc:  # pragma: no cover - Pillow is optional
        raise ImageError(f"unsupported format: {path} (install Pillow for non-PGM input)") from exc
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise ImageError(f"unsupported format: {path} has mode {im.mode}, expected 8-bit gray")
            pixels = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageError(f"unsupported format: {path}") from exc
    except OSError as exc:
        raise ImageError(f"unreadable: {path}: {exc}") from exc
    if pixels.size == 0:
        raise ImageError("zero-dimension image")
    return pixels


def save_pgm(image: GrayImage | np.ndarray, path: str | os.PathLike) -> None:
    """Write a binary PGM; gray levels are rounded and clipped to ``[0, 255]``."""
    data = image.data if isinstance(image, GrayImage) else np.asarray(image)
    pixels = np.clip(np.rint(data), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def load_sequence(directory: str | os.PathLike, pattern: str = "*.pgm") -> list[GrayImage]:
    """Load all files matching ``pattern`` in lexicographic filename order."""
    paths = sorted(glob.glob(os.path.join(os.fspath(directory), pattern)))
    if len(paths) < 2:
        raise ImageError(f"insufficient images: found {len(paths)} matching {pattern!r}, need >= 2")
    images = [load_image(p, image_id=i) for i, p in enumerate(paths)]
    shape = images[0].shape
    for p, im in zip(paths, images):
        if im.shape != shape:
            raise ImageError(f"dimension mismatch: {p} is {im.shape}, expected {shape}")
    return images


def consecutive_pairs(n_images: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(n_images - 1)]


# ---------------------------------------------------------------------------
# Subset grid
# ---------------------------------------------------------------------------

def default_margin(half_width: int, search_radius: int) -> int:
    """Edge distance that keeps a subset, its search window and a 2 px guard inside."""
    return half_width + search_radius + 2


def grid_subsets(image: GrayImage | tuple[int, int], half_width: int = 15,
                 spacing: int = 10, margin: int | None = None,
                 search_radius: int = 25) -> list[SubsetSpec]:
    """Regular row-major grid of subset centers.

    Centers run from ``margin`` to ``size - margin`` in steps of ``spacing``
    on both axes, restricted to positions where the full subset fits.
    ``image`` may also be a ``(height, width)`` tuple; pixel values are never read.
    """
    if spacing < 1:
        raise ValueError("spacing must be >= 1")
    height, width = image.shape if isinstance(image, GrayImage) else image
    if margin is None:
        margin = default_margin(half_width, search_radius)
    m = half_width

    def axis(size: int) -> range:
        lo = max(margin, m)
        hi = min(size - margin, size - 1 - m)
        return range(lo, hi + 1, spacing) if hi >= lo else range(0)

    xs, ys = axis(width), axis(height)
    if len(xs) == 0 or len(ys) == 0:
        raise ValueError(
            f"image {width}x{height} too small for subsets with M={m}, margin={margin}")
    return [SubsetSpec(x, y, m) for y in ys for x in xs]


# ---------------------------------------------------------------------------
# Synthetic speckle and warped pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeckleParams:
    """Gaussian-blob speckle recipe.

    ``blob_count=None`` picks one blob per ``area_per_blob`` pixels.
    """

    blob_count: int | None = None
    blob_sigma: float = 3.0
    contrast: float = 90.0
    background: float = 128.0
    area_per_blob: float = 26.0
    variance_floor: float = 25.0
    floor_window: int = 31


def synth_speckle(width: int, height: int, seed: int = 0,
                  params: SpeckleParams = SpeckleParams()) -> GrayImage:
    """Sum of randomly placed Gaussian blobs on a mid-gray background.

    Blob signs and amplitudes are random so the pattern has both dark and
    bright speckles. Raises ``TexturelessPatternError`` if any
    ``floor_window``-sized window has gray variance below ``variance_floor``.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    count = params.blob_count
    if count is None:
        count = int(round(width * height / params.area_per_blob))
    if count <= 0 or params.contrast == 0 or params.blob_sigma <= 0:
        raise TexturelessPatternError("textureless pattern: no visible blobs")

    rng = np.random.default_rng(seed)
    pad = 3.0 * params.blob_sigma
    cx = rng.uniform(-pad, width - 1 + pad, count)
    cy = rng.uniform(-pad, height - 1 + pad, count)
    amp = params.contrast * rng.uniform(-1.0, 1.0, count)

    # splat blob centers with bilinear weights, then blur: equivalent to
    # summing analytic Gaussians up to the splat kernel and far cheaper
    ipad = int(np.ceil(pad)) + 1
    canvas = np.zeros((height + 2 * ipad, width + 2 * ipad))
    x0 = np.floor(cx).astype(int)
    y0 = np.floor(cy).astype(int)
    fx, fy = cx - x0, cy - y0
    for ox, oy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        np.add.at(canvas, (y0 + oy + ipad, x0 + ox + ipad), amp * wgt)
    norm = 2.0 * np.pi * params.blob_sigma ** 2
    canvas = ndimage.gaussian_filter(canvas, params.blob_sigma, mode="constant", truncate=4.0) * norm
    pattern = np.clip(params.background + canvas[ipad:ipad + height, ipad:ipad + width], 0.0, 255.0)

    _check_texture(pattern, params)
    return GrayImage(pattern)


def _check_texture(pattern: np.ndarray, params: SpeckleParams) -> None:
    if np.ptp(pattern) == 0:
        raise TexturelessPatternError("textureless pattern: constant image")
    k = min(params.floor_window, *pattern.shape)
    mean = ndimage.uniform_filter(pattern, k, mode="reflect")
    sq = ndimage.uniform_filter(pattern * pattern, k, mode="reflect")
    h0 = k // 2
    var = (sq - mean * mean)[h0:pattern.shape[0] - (k - 1 - h0), h0:pattern.shape[1] - (k - 1 - h0)]
    if var.size and var.min() < params.variance_floor:
        raise TexturelessPatternError(
            f"textureless pattern: window variance {var.min():.3g} below floor {params.variance_floor}")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Exact first-order warp used to synthesize a target image.

    The displacement of a reference point ``(x, y)`` is
    ``u + u_x (x - ox) + u_y (y - oy)`` horizontally and
    ``v + v_x (x - ox) + v_y (y - oy)`` vertically, with ``(ox, oy)`` the origin.
    """

    warp: tuple[float, float, float, float, float, float]
    origin: tuple[float, float] = (0.0, 0.0)
    valid: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_translation(self) -> bool:
        _, ux, uy, _, vx, vy = self.warp
        return ux == 0 and uy == 0 and vx == 0 and vy == 0

    def displacement_at(self, x, y) -> tuple:
        u, ux, uy, v, vx, vy = self.warp
        if self.is_translation:
            return (np.zeros_like(np.asarray(x, float)) + u, np.zeros_like(np.asarray(y, float)) + v)
        dx = np.asarray(x, float) - self.origin[0]
        dy = np.asarray(y, float) - self.origin[1]
        return u + ux * dx + uy * dy, v + vx * dx + vy * dy

    def for_subsets(self, subsets: Sequence[SubsetSpec]) -> np.ndarray:
        """``(n, 4)`` array of ``x, y, u, v`` rows, one per subset."""
        xs = np.array([s.center_x for s in subsets], float)
        ys = np.array([s.center_y for s in subsets], float)
        u, v = self.displacement_at(xs, ys)
        return np.column_stack([xs, ys, u, v])

    def to_csv(self, path: str | os.PathLike, subsets: Sequence[SubsetSpec]) -> None:
        write_truth_csv(path, self.for_subsets(subsets))


def write_truth_csv(path, rows: Iterable[Sequence[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u", "v"])
        for x, y, u, v in rows:
            w.writerow([f"{x:.17g}", f"{y:.17g}", f"{u:.17g}", f"{v:.17g}"])


def read_truth_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["x", "y", "u", "v"]:
            raise ValueError(f"unexpected truth header {header}")
        return np.array([[float(c) for c in row] for row in reader]).reshape(-1, 4)


def _as_warp6(warp) -> tuple[float, ...]:
    w = tuple(float(c) for c in warp)
    if len(w) == 2:
        return (w[0], 0.0, 0.0, w[1], 0.0, 0.0)
    if len(w) == 6:
        return w
    raise ValueError("warp must be a translation (u, v) or a 6-vector (u, u_x, u_y, v, v_x, v_y)")


def synth_warped_pair(reference: GrayImage, warp,
                      origin: tuple[float, float] | None = None) -> tuple[GrayImage, GroundTruth]:
    """Resample ``reference`` through a known warp to build a target image.

    ``target(x_t) = reference(x)`` where ``x_t = x + displacement(x)``;
    the inverse map is evaluated with bilinear interpolation. Integer
    translations are applied as exact array shifts. Target pixels whose
    source falls outside the reference are filled with the reference mean
    and flagged ``False`` in ``GroundTruth.valid``.
    """
    w6 = _as_warp6(warp)
    h, w = reference.shape
    if origin is None:
        origin = ((w - 1) / 2.0, (h - 1) / 2.0)
    u, ux, uy, v, vx, vy = w6
    fill = float(reference.data.mean())
    ref = reference.data

    if ux == uy == vx == vy == 0 and float(u).is_integer() and float(v).is_integer():
        iu, iv = int(u), int(v)
        target = np.full((h, w), fill)
        valid = np.zeros((h, w), bool)
        ys_dst = slice(max(iv, 0), min(h, h + iv))
        xs_dst = slice(max(iu, 0), min(w, w + iu))
        ys_src = slice(max(-iv, 0), min(h, h - iv))
        xs_src = slice(max(-iu, 0), min(w, w - iu))
        if ys_dst.stop > ys_dst.start and xs_dst.stop > xs_dst.start:
            target[ys_dst, xs_dst] = ref[ys_src, xs_src]
            valid[ys_dst, xs_dst] = True
    else:
        yt, xt = np.mgrid[0:h, 0:w].astype(np.float64)
        ox, oy = origin
        # x_t - o - t = A (x - o)  with  A = I + gradient matrix
        a = np.array([[1.0 + ux, uy], [vx, 1.0 + vy]])
        if abs(np.linalg.det(a)) < 1e-8:
            raise ValueError("warp is not invertible")
        ainv = np.linalg.inv(a)
        rx, ry = xt - ox - u, yt - oy - v
        if ux == uy == vx == vy == 0:
            xs, ys = xt - u, yt - v
        else:
            xs = ainv[0, 0] * rx + ainv[0, 1] * ry + ox
            ys = ainv[1, 0] * rx + ainv[1, 1] * ry + oy
        valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
        target = np.full((h, w), fill)
        target[valid] = bilinear_sample(ref, xs[valid], ys[valid])

    if not valid.any():
        raise WarpOutOfBoundsError("warp out of bounds: no target pixel maps inside the reference")
    valid.setflags(write=False)
    return GrayImage(target), GroundTruth(w6, tuple(map(float, origin)), valid)


def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear gray levels at in-domain coordinates (no bounds checking)."""
    h, w = data.shape
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2) if w > 1 else np.zeros_like(xs, np.intp)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2) if h > 1 else np.zeros_like(ys, np.intp)
    fx, fy = xs - x0, ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    f00 = data[y0, x0]
    f10 = data[y0, x1]
    f01 = data[y1, x0]
    f11 = data[y1, x1]
    a10 = f10 - f00
    a01 = f01 - f00
    a11 = f11 - f10 - f01 + f00
    return f00 + a10 * fx + a01 * fy + a11 * fx * fy


def synth_sequence(width: int, height: int, n_images: int, seed: int = 0,
                   step: tuple[float, float] = (0.35, -0.2),
                   params: SpeckleParams = SpeckleParams()) -> tuple[list[GrayImage], list[GroundTruth]]:
    """A speckle sequence where frame ``k`` is frame 0 translated by ``k * step``.

    Returned truths are relative to frame 0.
    """
    if n_images < 2:
        raise ValueError("a sequence needs at least 2 images")
    base = synth_speckle(width, height, seed, params)
    images = [base.with_id(0)]
    truths = [GroundTruth((0.0,) * 6)]
    for k in range(1, n_images):
        tgt, gt = synth_warped_pair(base, (k * step[0], k * step[1]))
        images.append(tgt.with_id(k))
        truths.append(gt)
    return images, truths
