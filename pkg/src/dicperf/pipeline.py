"""Image-pair and sequence analysis under serial and parallel schedules.

Three schedules produce bit-identical fields:

``serial``
    one process; pairs in order, subsets in grid order.
``subimage_parallel``
    pairs one after another; each pair's subsets are split into contiguous
    chunks, one per worker.
``image_parallel``
    pairs are split into contiguous chunks, one per worker; each worker
    analyses its pairs serially.

Every worker receives its own copy of the images it needs. Results are
reassembled in pair and grid order regardless of completion order.
"""

from __future__ import annotations

import csv
import logging
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .correlation import CorrelationMemo, subset_stats
from .image_core import GrayImage, SubsetSpec, grid_subsets
from .integer_search import SearchConfig, bfs_search, mpso_search, pso_search, subset_rng
from .subpixel_refine import RefineConfig, TargetTables, icgn_precompute, refine_icgn, refine_nr

log = logging.getLogger(__name__)

INTEGER_METHODS = ("bfs", "pso", "mpso")
SUBPIXEL_METHODS = ("nr", "icgn", "none")
MODES = ("serial", "subimage_parallel", "image_parallel")
POLICIES = ("update_every_pair", "fixed_first")

FIELD_HEADER = ["x", "y", "u", "v", "zncc", "converged", "iterations", "evaluations"]


@dataclass(frozen=True)
class RunConfig:
    integer_method: Literal["bfs", "pso", "mpso"] = "mpso"
    subpixel_method: Literal["nr", "icgn", "none"] = "nr"
    mode: Literal["serial", "subimage_parallel", "image_parallel"] = "serial"
    reference_policy: Literal["update_every_pair", "fixed_first"] = "update_every_pair"
    worker_count: int = 4
    search: SearchConfig = SearchConfig()
    refine: RefineConfig = RefineConfig()
    half_width: int = 15
    spacing: int = 10
    margin: int | None = None

    def __post_init__(self):
        if self.integer_method not in INTEGER_METHODS:
            raise ValueError(f"unknown integer method {self.integer_method!r}")
        if self.subpixel_method not in SUBPIXEL_METHODS:
            raise ValueError(f"unknown sub-pixel method {self.subpixel_method!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.reference_policy not in POLICIES:
            raise ValueError(f"unknown reference policy {self.reference_policy!r}")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")

    @property
    def effective_workers(self) -> int:
        return 1 if self.mode == "serial" else self.worker_count

    def subsets(self, shape: tuple[int, int]) -> list[SubsetSpec]:
        return grid_subsets(shape, self.half_width, self.spacing, self.margin,
                            self.search.search_radius)

    def label(self) -> str:
        return f"{self.integer_method}+{self.subpixel_method}/{self.mode}"


@dataclass(frozen=True)
class PoiRecord:
    x: int
    y: int
    u: float
    v: float
    zncc: float
    converged: bool
    iterations: int
    evaluations: int


@dataclass
class DisplacementField:
    pair_index: int
    reference_index: int
    target_index: int
    records: list[PoiRecord] = field(default_factory=list)
    error: str | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def evaluations(self) -> int:
        return int(sum(r.evaluations for r in self.records))

    @property
    def convergence_rate(self) -> float:
        return float(np.mean([r.converged for r in self.records])) if self.records else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FIELD_HEADER)
            for r in self.records:
                w.writerow([r.x, r.y, repr(float(r.u)), repr(float(r.v)), repr(float(r.zncc)),
                            int(r.converged), r.iterations, r.evaluations])

    @classmethod
    def from_csv(cls, path, pair_index: int = 0) -> "DisplacementField":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if next(reader) != FIELD_HEADER:
                raise ValueError(f"{path}: unexpected field header")
            records = [PoiRecord(int(x), int(y), float(u), float(v), float(c), bool(int(ok)),
                                 int(it), int(ev))
                       for x, y, u, v, c, ok, it, ev in reader]
        return cls(pair_index, -1, -1, records)


def field_filename(pair_index: int) -> str:
    return f"field_{pair_index:04d}.csv"


def write_fields(fields: Sequence[DisplacementField], out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for f in fields:
        p = os.path.join(out_dir, field_filename(f.pair_index))
        f.to_csv(p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Per-subset work
# ---------------------------------------------------------------------------

def _failed(spec: SubsetSpec, evaluations: int = 0, u=np.nan, v=np.nan, c=np.nan) -> PoiRecord:
    return PoiRecord(spec.center_x, spec.center_y, float(u), float(v), float(c), False, 0, evaluations)


def analyze_subset(ref: GrayImage, tgt: GrayImage, tables: TargetTables | None,
                   spec: SubsetSpec, subset_index: int, pair_index: int,
                   cfg: RunConfig) -> PoiRecord:
    """Integer search then optional refinement for one subset; never raises."""
    try:
        stats = subset_stats(ref, spec)
        if cfg.integer_method == "bfs":
            hit = bfs_search(stats, tgt, spec, cfg.search)
        else:
            search = pso_search if cfg.integer_method == "pso" else mpso_search
            rng = subset_rng(cfg.search.rng_seed, pair_index, subset_index)
            hit = search(stats, tgt, spec, cfg.search, CorrelationMemo(), rng)
    except ValueError as exc:
        log.debug("integer search failed for %s: %s", spec, exc)
        return _failed(spec)

    dx, dy = hit.displacement
    if cfg.subpixel_method == "none":
        return PoiRecord(spec.center_x, spec.center_y, float(dx), float(dy), hit.correlation,
                         True, 0, hit.evaluations)
    try:
        if cfg.subpixel_method == "nr":
            res = refine_nr(stats, tables, spec, (dx, dy), cfg.refine)
        else:
            res = refine_icgn(icgn_precompute(ref, spec), tables, spec, (dx, dy), cfg.refine)
    except ValueError as exc:
        log.debug("refinement failed for %s: %s", spec, exc)
        return _failed(spec, hit.evaluations, dx, dy, hit.correlation)
    return PoiRecord(spec.center_x, spec.center_y, res.warp.u, res.warp.v, res.correlation,
                     res.converged, res.iterations, hit.evaluations)


def _analyze_chunk(ref: GrayImage, tgt: GrayImage, specs: Sequence[tuple[int, SubsetSpec]],
                   pair_index: int, cfg: RunConfig) -> list[PoiRecord]:
    tables = TargetTables.build(tgt) if cfg.subpixel_method != "none" else None
    return [analyze_subset(ref, tgt, tables, spec, i, pair_index, cfg) for i, spec in specs]


def _check_pair(ref: GrayImage, tgt: GrayImage) -> None:
    if ref.shape != tgt.shape:
        raise ValueError(f"dimension mismatch: {ref.shape} vs {tgt.shape}")


def analyze_pair(ref: GrayImage, tgt: GrayImage, cfg: RunConfig = RunConfig(),
                 pair_index: int = 0, subsets: Sequence[SubsetSpec] | None = None) -> DisplacementField:
    """Displacement field of ``tgt`` relative to ``ref`` on the subset grid.

    Runs in the calling process; ``cfg.mode`` is honoured by
    :func:`analyze_sequence`.
    """
    _check_pair(ref, tgt)
    specs = list(subsets) if subsets is not None else cfg.subsets(ref.shape)
    if not specs:
        raise ValueError("empty subset grid")
    records = _analyze_chunk(ref, tgt, list(enumerate(specs)), pair_index, cfg)
    return DisplacementField(pair_index, ref.id, tgt.id, records)


# ---------------------------------------------------------------------------
# Sequences and schedules
# ---------------------------------------------------------------------------

def pair_indices(n_images: int, policy: str) -> list[tuple[int, int]]:
    if n_images < 2:
        raise ValueError("insufficient images: need at least 2")
    if policy == "update_every_pair":
        return [(i, i + 1) for i in range(n_images - 1)]
    if policy == "fixed_first":
        return [(0, i) for i in range(1, n_images)]
    raise ValueError(f"unknown reference policy {policy!r}")


def partition(n: int, k: int) -> list[range]:
    """Split ``range(n)`` into at most ``k`` contiguous, balanced, non-empty chunks."""
    k = max(1, min(k, n))
    base, extra = divmod(n, k)
    chunks, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        chunks.append(range(start, start + size))
        start += size
    return [c for c in chunks if len(c)]


def _pair_job(ref: GrayImage, tgt: GrayImage, pair_index: int, cfg: RunConfig,
              subsets: Sequence[SubsetSpec] | None) -> DisplacementField:
    try:
        return analyze_pair(ref, tgt, cfg, pair_index, subsets)
    except ValueError as exc:
        specs = subsets if subsets is not None else _safe_subsets(cfg, ref.shape)
        return DisplacementField(pair_index, ref.id, tgt.id, [_failed(s) for s in specs], str(exc))


def _safe_subsets(cfg: RunConfig, shape) -> list[SubsetSpec]:
    try:
        return cfg.subsets(shape)
    except ValueError:
        return []


def _pairs_job(jobs: list[tuple[GrayImage, GrayImage, int]], cfg: RunConfig,
               subsets) -> list[DisplacementField]:
    return [_pair_job(ref, tgt, k, cfg, subsets) for ref, tgt, k in jobs]


_warned: set[int] = set()


def _pool(workers: int) -> ProcessPoolExecutor:
    available = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    if workers > (available or 1) and workers not in _warned:
        _warned.add(workers)
        log.warning("worker_count %d exceeds available parallelism %s", workers, available)
    methods = mp.get_all_start_methods()
    ctx = mp.get_context("fork" if "fork" in methods else None)
    return ProcessPoolExecutor(max_workers=workers, mp_context=ctx)


def analyze_sequence(images: Sequence[GrayImage], cfg: RunConfig = RunConfig(),
                     subsets: Sequence[SubsetSpec] | None = None) -> list[DisplacementField]:
    """Analyse every pair of ``images`` selected by ``cfg.reference_policy``.

    A failing pair yields a field with ``error`` set and all records marked
    unconverged; it never aborts the sequence.
    """
    pairs = pair_indices(len(images), cfg.reference_policy)
    if subsets is None:
        subsets = cfg.subsets(images[0].shape)
    if cfg.mode == "serial" or cfg.worker_count == 1:
        return run_mode_serial(images, pairs, cfg, subsets)
    if cfg.mode == "image_parallel":
        return run_mode_image(images, pairs, cfg, subsets)
    return run_mode_subimage(images, pairs, cfg, subsets)


def run_mode_serial(images, pairs, cfg: RunConfig, subsets) -> list[DisplacementField]:
    return [_pair_job(images[a], images[b], k, cfg, subsets) for k, (a, b) in enumerate(pairs)]


def run_mode_image(images, pairs, cfg: RunConfig, subsets) -> list[DisplacementField]:
    chunks = partition(len(pairs), cfg.worker_count)
    jobs = [[(images[pairs[k][0]], images[pairs[k][1]], k) for k in chunk] for chunk in chunks]
    with _pool(len(chunks)) as ex:
        futures = [ex.submit(_pairs_job, job, cfg, subsets) for job in jobs]
        results = [f.result() for f in futures]
    return [fld for chunk in results for fld in chunk]


def run_mode_subimage(images, pairs, cfg: RunConfig, subsets) -> list[DisplacementField]:
    specs = list(enumerate(subsets))
    chunks = partition(len(specs), cfg.worker_count)
    fields = []
    with _pool(len(chunks)) as ex:
        for k, (a, b) in enumerate(pairs):
            ref, tgt = images[a], images[b]
            try:
                _check_pair(ref, tgt)
            except ValueError as exc:
                fields.append(DisplacementField(k, ref.id, tgt.id, [_failed(s) for s in subsets], str(exc)))
                continue
            futures = [ex.submit(_analyze_chunk, ref, tgt, [specs[i] for i in c], k, cfg)
                       for c in chunks]
            records = [r for f in futures for r in f.result()]
            fields.append(DisplacementField(k, ref.id, tgt.id, records))
    return fields


def with_mode(cfg: RunConfig, mode: str, workers: int | None = None) -> RunConfig:
    return replace(cfg, mode=mode, worker_count=workers or cfg.worker_count)
