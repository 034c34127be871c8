"""Zero-normalized cross-correlation between square subsets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .image_core import GrayImage, SubsetSpec


class WindowOutOfRangeError(ValueError):
    """The displaced subset does not fit inside the target image."""


class DegenerateSubsetError(ValueError):
    """A subset has zero gray-level variance, so ZNCC is undefined."""


@dataclass(frozen=True, eq=False)
class SubsetStats:
    """Mean, zero-mean values and centered norm of one subset."""

    mean: float
    norm: float
    centered: np.ndarray = field(repr=False)

    @property
    def normalized(self) -> np.ndarray:
        return self.centered / self.norm


def stats_of(values: np.ndarray) -> SubsetStats:
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if np.ptp(values) == 0:
        # constant subsets get an exactly zero norm
        centered = np.zeros_like(values)
        return SubsetStats(float(values.flat[0]), 0.0, centered)
    centered = values - mean
    return SubsetStats(mean, float(np.sqrt(np.sum(centered * centered))), centered)


def subset_stats(image: GrayImage, spec: SubsetSpec) -> SubsetStats:
    if not spec.fits(image.width, image.height):
        raise WindowOutOfRangeError(f"window out of range: {spec}")
    return stats_of(spec.window(image.data))


def zncc(ref_stats: SubsetStats, image: GrayImage, spec: SubsetSpec,
         displacement: tuple[int, int]) -> float:
    """Correlation of the reference subset with the target subset shifted by
    the integer ``displacement = (dx, dy)``."""
    dx, dy = displacement
    if not spec.fits(image.width, image.height, dx, dy):
        raise WindowOutOfRangeError(f"window out of range: displacement ({dx}, {dy}) for {spec}")
    if ref_stats.norm == 0:
        raise DegenerateSubsetError("degenerate reference subset")
    # raw ufunc reductions: this is the hot path of the swarm searches
    g = spec.window(image.data, dx, dy).ravel()
    if np.maximum.reduce(g) == np.minimum.reduce(g):
        raise DegenerateSubsetError("degenerate target subset")
    gc = g - np.add.reduce(g) / g.size
    gnorm = np.sqrt(np.dot(gc, gc))
    return float(np.dot(ref_stats.centered.ravel(), gc) / (ref_stats.norm * gnorm))


class CorrelationMemo:
    """Look-up table of correlation values keyed by integer displacement.

    One memo serves one reference subset against one target image. Failed
    evaluations are cached too, so a repeated probe re-raises the same
    error without recomputing.
    """

    def __init__(self):
        self._table: dict[tuple[int, int], float | Exception] = {}
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._table)

    def __contains__(self, key):
        return key in self._table

    def lookup(self, key: tuple[int, int], compute: Callable[[], float]) -> float:
        try:
            value = self._table[key]
        except KeyError:
            self.misses += 1
            try:
                value = compute()
            except (DegenerateSubsetError, WindowOutOfRangeError) as exc:
                value = exc
            self._table[key] = value
        else:
            self.hits += 1
        if isinstance(value, Exception):
            raise value
        return value

    @property
    def counters(self) -> tuple[int, int]:
        return self.hits, self.misses


def zncc_memo(memo: CorrelationMemo, ref_stats: SubsetStats, image: GrayImage,
              spec: SubsetSpec, displacement: tuple[int, int]) -> float:
    key = (int(displacement[0]), int(displacement[1]))
    return memo.lookup(key, lambda: zncc(ref_stats, image, spec, key))


def zncc_map(ref_stats: SubsetStats, data: np.ndarray, spec: SubsetSpec,
             x_range: range, y_range: range, rows_per_chunk: int = 32) -> np.ndarray:
    """Correlation for every displacement in ``y_range x x_range``.

    Rows of the result follow ``dy``, columns ``dx``. Constant target
    windows yield ``nan``. Values agree with :func:`zncc` to rounding but are
    not guaranteed bit-identical; callers needing the exact figure
    re-evaluate at the chosen displacement.
    """
    m = spec.half_width
    n = spec.size
    cx, cy = spec.center_x, spec.center_y
    x0 = cx + x_range.start - m
    ncols = len(x_range)
    out = np.empty((len(y_range), ncols))
    f = ref_stats.centered
    for r0 in range(0, len(y_range), rows_per_chunk):
        r1 = min(r0 + rows_per_chunk, len(y_range))
        ya = cy + y_range[r0] - m
        yb = cy + y_range[r1 - 1] + m + 1
        block = data[ya:yb, x0:x0 + ncols + n - 1]
        win = np.lib.stride_tricks.sliding_window_view(block, (n, n))
        # sum(f_c * g) equals sum(f_c * (g - mean g)) because f_c sums to zero
        num = np.tensordot(win, f, axes=([2, 3], [0, 1]))
        s1 = _box_sum(block, n)
        s2 = _box_sum(block * block, n)
        var = s2 - s1 * s1 / (n * n)
        flat = (ndimage.maximum_filter(block, n, origin=-(n // 2))[:r1 - r0, :ncols]
                == ndimage.minimum_filter(block, n, origin=-(n // 2))[:r1 - r0, :ncols])
        with np.errstate(invalid="ignore", divide="ignore"):
            c = num / (ref_stats.norm * np.sqrt(np.maximum(var, 0.0)))
        c[flat] = np.nan
        out[r0:r1] = c
    return out


def _box_sum(a: np.ndarray, n: int) -> np.ndarray:
    """Sums over every ``n x n`` window (valid positions only)."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=c[1:, 1:])
    return c[n:, n:] - c[:-n, n:] - c[n:, :-n] + c[:-n, :-n]
