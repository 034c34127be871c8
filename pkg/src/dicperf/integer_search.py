"""Integer-pixel displacement search: brute force, PSO and star-search PSO."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .correlation import (
    CorrelationMemo,
    DegenerateSubsetError,
    SubsetStats,
    WindowOutOfRangeError,
    zncc,
    zncc_map,
    zncc_memo,
)
from .image_core import GrayImage, SubsetSpec


class SearchError(ValueError):
    """No valid displaced position could be evaluated."""


@dataclass(frozen=True)
class SearchConfig:
    """Integer search settings.

    ``c1``/``c2`` are the cognitive and social acceleration coefficients,
    ``max_generations`` the update generations after initialization.
    """

    search_radius: int = 25
    bfs_domain: Literal["window", "whole_image"] = "whole_image"
    particle_count: int = 50
    max_generations: int = 5
    stop_threshold: float = 0.995
    c1: float = 2.0
    c2: float = 2.0
    rng_seed: int = 0
    init_velocity: float = 0.5
    max_velocity: float | None = 4.0

    def __post_init__(self):
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if not 0 < self.stop_threshold <= 1:
            raise ValueError("stop_threshold must lie in (0, 1]")
        if self.search_radius < 1:
            raise ValueError("search_radius must be >= 1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("acceleration coefficients must be positive")
        if self.init_velocity < 0:
            raise ValueError("init_velocity must be >= 0")
        if self.max_velocity is not None and self.max_velocity <= 0:
            raise ValueError("max_velocity must be positive")
        if self.bfs_domain not in ("window", "whole_image"):
            raise ValueError(f"unknown bfs_domain {self.bfs_domain!r}")


@dataclass(frozen=True)
class IntegerResult:
    """Outcome of one integer search.

    ``evaluations`` counts distinct correlation computations;
    ``update_evaluations`` is the part spent after initialization.
    """

    displacement: tuple[int, int]
    correlation: float
    evaluations: int
    generations_used: int = 0
    update_evaluations: int = 0


def inertia_weight(t: int, max_generations: int) -> float:
    """Linearly decaying inertia, 0.9 at ``t = 0`` down to 0.4 at ``t = G_max``."""
    return 0.9 - t / (2.0 * max_generations)


def displacement_bounds(spec: SubsetSpec, shape: tuple[int, int],
                        radius: int | None) -> tuple[int, int, int, int]:
    """Inclusive ``(dx_lo, dx_hi, dy_lo, dy_hi)`` keeping the subset inside the image,
    optionally limited to ``|d| <= radius``."""
    h, w = shape
    m = spec.half_width
    dx_lo, dx_hi = m - spec.center_x, w - 1 - m - spec.center_x
    dy_lo, dy_hi = m - spec.center_y, h - 1 - m - spec.center_y
    if radius is not None:
        dx_lo, dx_hi = max(dx_lo, -radius), min(dx_hi, radius)
        dy_lo, dy_hi = max(dy_lo, -radius), min(dy_hi, radius)
    if dx_lo > dx_hi or dy_lo > dy_hi:
        raise SearchError(f"no valid displaced position for {spec}")
    return dx_lo, dx_hi, dy_lo, dy_hi


def subset_rng(seed: int, pair_index: int, subset_index: int) -> np.random.Generator:
    """Independent stream per (seed, pair, subset); scheduling cannot perturb it."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, pair_index, subset_index])


def bfs_search(ref_stats: SubsetStats, target: GrayImage, spec: SubsetSpec,
               cfg: SearchConfig = SearchConfig()) -> IntegerResult:
    """Exhaustive search over every admissible displacement.

    Ties go to the smallest ``(dy, dx)``.
    """
    if ref_stats.norm == 0:
        raise DegenerateSubsetError("degenerate reference subset")
    radius = cfg.search_radius if cfg.bfs_domain == "window" else None
    dx_lo, dx_hi, dy_lo, dy_hi = displacement_bounds(spec, target.shape, radius)
    cmap = zncc_map(ref_stats, target.data, spec,
                    range(dx_lo, dx_hi + 1), range(dy_lo, dy_hi + 1))
    valid = ~np.isnan(cmap)
    n_eval = int(valid.sum())
    if n_eval == 0:
        raise SearchError("all candidate positions are degenerate")
    # row-major argmax already prefers the smallest (dy, dx) among ties
    iy, ix = np.unravel_index(np.argmax(np.where(valid, cmap, -np.inf)), cmap.shape)
    best = (int(dx_lo + ix), int(dy_lo + iy))
    return IntegerResult(best, zncc(ref_stats, target, spec, best), n_eval, 0, n_eval)


class _Probe:
    """Memoized scoring: degenerate or out-of-range positions score ``-inf``."""

    def __init__(self, ref_stats, target, spec, memo):
        self.args = (ref_stats, target, spec)
        self.memo = memo

    def __call__(self, dx: int, dy: int) -> float:
        try:
            return zncc_memo(self.memo, *self.args, (dx, dy))
        except (DegenerateSubsetError, WindowOutOfRangeError):
            return -np.inf


def _better(c_new, pos_new, c_old, pos_old) -> bool:
    """Strictly higher correlation, or equal correlation at a smaller (dy, dx)."""
    if c_new != c_old:
        return c_new > c_old
    return (pos_new[1], pos_new[0]) < (pos_old[1], pos_old[0])


_STAR = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


def _swarm_search(ref_stats, target, spec, cfg, memo, rng, star: bool) -> IntegerResult:
    if ref_stats.norm == 0:
        raise DegenerateSubsetError("degenerate reference subset")
    dx_lo, dx_hi, dy_lo, dy_hi = displacement_bounds(spec, target.shape, cfg.search_radius)
    lo = np.array([dx_lo, dy_lo], float)
    hi = np.array([dx_hi, dy_hi], float)
    probe = _Probe(ref_stats, target, spec, memo)
    n = cfg.particle_count
    v0 = cfg.search_radius * cfg.init_velocity

    pos = rng.uniform(lo, hi, size=(n, 2))
    vel = rng.uniform(-v0, v0, size=(n, 2))

    def evaluate(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Score particles at their rounded positions; the star variant moves
        each particle to the best of its 4-neighbourhood."""
        cells = np.clip(np.rint(p), lo, hi).astype(int)
        scores = np.empty(len(p))
        for i, (x, y) in enumerate(cells):
            best_c, best = probe(x, y), (x, y)
            if star:
                for ox, oy in _STAR[1:]:
                    nx, ny = x + ox, y + oy
                    if dx_lo <= nx <= dx_hi and dy_lo <= ny <= dy_hi:
                        c = probe(nx, ny)
                        if c > best_c:
                            best_c, best = c, (nx, ny)
            cells[i] = best
            scores[i] = best_c
        return cells, scores

    cells, scores = evaluate(pos)
    if star:
        pos = cells.astype(float)
    p_best = cells.astype(float)
    c_best = scores.copy()
    g_idx = _argbest(c_best, p_best)
    g_best, g_c = p_best[g_idx].copy(), c_best[g_idx]
    init_misses = memo.misses
    generations = 0

    for t in range(cfg.max_generations):
        if g_c >= cfg.stop_threshold:
            break
        w = inertia_weight(t, cfg.max_generations)
        r1 = rng.random((n, 2))
        r2 = rng.random((n, 2))
        vel = w * vel + cfg.c1 * r1 * (p_best - pos) + cfg.c2 * r2 * (g_best - pos)
        if cfg.max_velocity is not None:
            vel = np.clip(vel, -cfg.max_velocity, cfg.max_velocity)
        pos = np.clip(pos + vel, lo, hi)
        cells, scores = evaluate(pos)
        if star:
            pos = cells.astype(float)
        improved = scores > c_best
        p_best[improved] = cells[improved]
        c_best[improved] = scores[improved]
        i = _argbest(c_best, p_best)
        if _better(c_best[i], p_best[i], g_c, g_best):
            g_best, g_c = p_best[i].copy(), c_best[i]
        generations = t + 1

    if not np.isfinite(g_c):
        raise SearchError("all probed positions are degenerate")
    disp = (int(g_best[0]), int(g_best[1]))
    return IntegerResult(disp, float(g_c), memo.misses, generations, memo.misses - init_misses)


def _argbest(c: np.ndarray, p: np.ndarray) -> int:
    top = np.flatnonzero(c == c.max())
    if len(top) == 1:
        return int(top[0])
    # lexicographic (dy, dx) tie-break
    order = np.lexsort((p[top, 0], p[top, 1]))
    return int(top[order[0]])


def pso_search(ref_stats: SubsetStats, target: GrayImage, spec: SubsetSpec,
               cfg: SearchConfig = SearchConfig(), memo: CorrelationMemo | None = None,
               rng: np.random.Generator | None = None) -> IntegerResult:
    """Particle swarm search in the ``±search_radius`` window.

    Stops once the swarm best reaches ``stop_threshold`` or after
    ``max_generations`` updates. ``rng`` defaults to the stream for
    ``(cfg.rng_seed, 0, 0)``.
    """
    memo = CorrelationMemo() if memo is None else memo
    rng = subset_rng(cfg.rng_seed, 0, 0) if rng is None else rng
    return _swarm_search(ref_stats, target, spec, cfg, memo, rng, star=False)


def mpso_search(ref_stats: SubsetStats, target: GrayImage, spec: SubsetSpec,
                cfg: SearchConfig = SearchConfig(), memo: CorrelationMemo | None = None,
                rng: np.random.Generator | None = None) -> IntegerResult:
    """PSO in which every particle takes one star-search step per generation.

    Each evaluation probes the rounded position and its four neighbours;
    the particle is moved to the best of the five before the personal and
    swarm bests are updated.
    """
    memo = CorrelationMemo() if memo is None else memo
    rng = subset_rng(cfg.rng_seed, 0, 0) if rng is None else rng
    return _swarm_search(ref_stats, target, spec, cfg, memo, rng, star=True)


SEARCHERS = {"bfs": bfs_search, "pso": pso_search, "mpso": mpso_search}
