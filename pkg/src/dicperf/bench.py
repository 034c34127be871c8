"""Repeated whole-process timing over the method x mode matrix.

One timed run covers: load every image of the dataset from disk, analyse
the sequence, write one field CSV per pair. Writing the bench report itself
is outside the timed region. Each cell gets one untimed warm-up run.
"""

from __future__ import annotations

import csv
import datetime as _dt
import os
import platform
import shutil
import statistics
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .image_core import SpeckleParams, load_sequence, save_pgm, synth_sequence
from .pipeline import INTEGER_METHODS, MODES, RunConfig, analyze_sequence, write_fields

TIMING_BOUNDARY = "load images -> analyse all pairs -> field CSVs flushed; bench report excluded"

# (lower bound of the warm-up duration in seconds, repeats); only the top
# band is open at its lower end: > 60 s, 10-60 s, 1-10 s, < 1 s
REPEAT_BANDS = ((60.0, 25), (10.0, 100), (1.0, 250), (0.0, 1000))


def auto_repeats(duration: float) -> int:
    """Repeat count for a cell whose single run took ``duration`` seconds."""
    top_lower, top_reps = REPEAT_BANDS[0]
    if duration > top_lower:
        return top_reps
    for lower, reps in REPEAT_BANDS[1:-1]:
        if duration >= lower:
            return reps
    return REPEAT_BANDS[-1][1]


@dataclass
class BenchRecord:
    integer_method: str
    subpixel_method: str
    mode: str
    dataset: str
    repeats: int
    mean_time: float
    stddev: float
    pairs: int
    evaluations: int
    workers: int = 1
    failed_pairs: int = 0
    error: str | None = None
    times: list[float] = field(default_factory=list, repr=False)

    @property
    def per_pair_time(self) -> float:
        return self.mean_time / self.pairs if self.pairs else float("nan")

    @property
    def frame_rate(self) -> float:
        return self.pairs / self.mean_time if self.mean_time > 0 else float("nan")

    @property
    def failed(self) -> bool:
        return self.error is not None or self.failed_pairs > 0

    @property
    def combo(self) -> tuple[str, str]:
        return self.integer_method, self.subpixel_method


@dataclass
class Ratio:
    kind: str
    key: str
    numerator: str
    denominator: str
    value: float | None
    expected: str = ""
    note: str = ""


@dataclass
class BenchReport:
    records: list[BenchRecord]
    environment: dict[str, str]
    config: dict[str, str] = field(default_factory=dict)

    @property
    def ratios(self) -> list[Ratio]:
        return derive_ratios(self)

    def find(self, integer_method: str, subpixel_method: str, mode: str,
             dataset: str) -> BenchRecord | None:
        for r in self.records:
            if (r.integer_method, r.subpixel_method, r.mode, r.dataset) == (
                    integer_method, subpixel_method, mode, dataset):
                return r
        return None

    @property
    def total_evaluations(self) -> int:
        return sum(r.evaluations for r in self.records)

    @property
    def ok(self) -> bool:
        return not any(r.failed for r in self.records)


def capture_environment(workers: int | None = None) -> dict[str, str]:
    avail = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    return {
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": str(os.cpu_count()),
        "available_cpus": str(avail),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "workers": str(workers) if workers is not None else "",
        "timing_boundary": TIMING_BOUNDARY,
    }


@dataclass(frozen=True)
class Dataset:
    """A directory of frames, loaded from disk inside every timed run."""

    name: str
    directory: str
    pattern: str = "*.pgm"


def synthetic_dataset(directory: str, pairs: int = 10, size: tuple[int, int] = (200, 200),
                      seed: int = 0, step: tuple[float, float] = (0.35, -0.2),
                      name: str = "synthetic", params: SpeckleParams = SpeckleParams()) -> Dataset:
    """Write ``pairs + 1`` translated speckle frames as PGM files."""
    os.makedirs(directory, exist_ok=True)
    images, _ = synth_sequence(size[0], size[1], pairs + 1, seed, step, params)
    for k, im in enumerate(images):
        save_pgm(im, os.path.join(directory, f"frame_{k:04d}.pgm"))
    return Dataset(name, directory)


def default_matrix(base: RunConfig = RunConfig(), subpixel_methods=("nr", "icgn"),
                   integer_methods=INTEGER_METHODS, modes=MODES) -> list[RunConfig]:
    return [replace(base, integer_method=i, subpixel_method=s, mode=m)
            for i, s, m in product(integer_methods, subpixel_methods, modes)]


def _timed_run(cfg: RunConfig, dataset: Dataset, out_dir: str):
    t0 = time.perf_counter()
    images = load_sequence(dataset.directory, dataset.pattern)
    fields = analyze_sequence(images, cfg)
    write_fields(fields, out_dir)
    elapsed = time.perf_counter() - t0
    return elapsed, fields


def run_bench(matrix: Sequence[RunConfig], dataset: Dataset, repeats: int | str = "auto",
              warmup: bool = True, max_repeats: int | None = None,
              scratch_dir: str | None = None, progress=None) -> BenchReport:
    """Time every cell of ``matrix`` on ``dataset``.

    ``repeats`` is a count or ``"auto"``, which picks 25/100/250/1000 from
    the warm-up duration. ``max_repeats`` optionally caps the auto count.
    Cells run strictly one after another.
    """
    if not matrix:
        raise ValueError("empty benchmark matrix")
    if repeats != "auto" and (not isinstance(repeats, int) or repeats < 1):
        raise ValueError("repeats must be a positive integer or 'auto'")
    own_scratch = scratch_dir is None
    scratch = tempfile.mkdtemp(prefix="dicperf-bench-") if own_scratch else scratch_dir
    records = []
    try:
        for idx, cfg in enumerate(matrix):
            out_dir = os.path.join(scratch, f"cell_{idx:03d}")
            records.append(_bench_cell(cfg, dataset, repeats, warmup, max_repeats, out_dir))
            if progress is not None:
                progress(records[-1])
    finally:
        if own_scratch:
            shutil.rmtree(scratch, ignore_errors=True)
    cfg_echo = {f"cell.{i}": _config_line(c) for i, c in enumerate(matrix)}
    cfg_echo.update({"dataset": dataset.name, "dataset.directory": dataset.directory,
                     "dataset.pattern": dataset.pattern, "repeats": str(repeats),
                     "max_repeats": str(max_repeats), "warmup": str(warmup)})
    workers = max(c.effective_workers for c in matrix)
    return BenchReport(records, capture_environment(workers), cfg_echo)


def _bench_cell(cfg: RunConfig, dataset: Dataset, repeats, warmup: bool,
                max_repeats: int | None, out_dir: str) -> BenchRecord:
    rec = BenchRecord(cfg.integer_method, cfg.subpixel_method, cfg.mode, dataset.name,
                      0, float("nan"), float("nan"), 0, 0, cfg.effective_workers)
    try:
        first_time, fields = _timed_run(cfg, dataset, out_dir)
        evaluations = sum(f.evaluations for f in fields)
        rec.pairs = len(fields)
        rec.evaluations = evaluations
        rec.failed_pairs = sum(f.error is not None for f in fields)
        n = auto_repeats(first_time) if repeats == "auto" else repeats
        if max_repeats is not None:
            n = min(n, max_repeats)
        times = [] if warmup else [first_time]
        while len(times) < n:
            t, fields = _timed_run(cfg, dataset, out_dir)
            if sum(f.evaluations for f in fields) != evaluations:
                raise RuntimeError("evaluation count changed between repeats")
            times.append(t)
        rec.times = times
        rec.repeats = len(times)
        rec.mean_time = statistics.fmean(times)
        rec.stddev = statistics.stdev(times) if len(times) > 1 else 0.0
    except Exception as exc:  # recorded, never silently skipped
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _config_line(cfg: RunConfig) -> str:
    d = asdict(cfg)
    flat = []
    for k, v in d.items():
        if isinstance(v, dict):
            flat.extend(f"{k}.{kk}={vv}" for kk, vv in v.items())
        else:
            flat.append(f"{k}={v}")
    return " ".join(flat)


# ---------------------------------------------------------------------------
# Ratios
# ---------------------------------------------------------------------------

def derive_ratios(report: BenchReport) -> list[Ratio]:
    """Integer-method slowdowns and schedule speedups between matching cells.

    Ratios are time(numerator) / time(denominator). Pairs with a cell
    outside the matrix are skipped; a failed cell gives ``None`` with a note.
    """
    recs = report.records
    datasets = sorted({r.dataset for r in recs})
    subs = sorted({r.subpixel_method for r in recs})
    modes = [m for m in MODES if any(r.mode == m for r in recs)]
    combos = sorted({r.combo for r in recs})
    out: list[Ratio] = []

    for ds, sub, mode in product(datasets, subs, modes):
        for fast, expected in (("pso", "3-5"), ("mpso", "3-5")):
            out.append(_ratio(report, "bfs_vs_" + fast, f"{sub}/{mode}/{ds}",
                              ("bfs", sub, mode, ds), (fast, sub, mode, ds), expected))
    for ds, (im, sub) in product(datasets, combos):
        out.append(_ratio(report, "serial_vs_image", f"{im}+{sub}/{ds}",
                          (im, sub, "serial", ds), (im, sub, "image_parallel", ds), "2-3"))
        r = _ratio(report, "serial_vs_subimage", f"{im}+{sub}/{ds}",
                   (im, sub, "serial", ds), (im, sub, "subimage_parallel", ds), "<1 mostly")
        if r.value is not None:
            r.note = "sub-image faster than serial" if r.value > 1 else "sub-image slower than serial"
        out.append(r)
    return [r for r in out if not (r.value is None and r.note == "absent")]


def _ratio(report: BenchReport, kind: str, key: str, num_key, den_key, expected: str) -> Ratio:
    num, den = report.find(*num_key), report.find(*den_key)
    label = lambda k: "+".join(k[:2]) + "/" + k[2]  # noqa: E731
    ratio = Ratio(kind, key, label(num_key), label(den_key), None, expected)
    if num is None or den is None:
        ratio.note = "absent"
    elif num.failed or den.failed:
        ratio.note = "failed cell"
    else:
        ratio.value = ratio_of(num.mean_time, den.mean_time)
    return ratio


def ratio_of(numerator_time: float, denominator_time: float) -> float:
    return numerator_time / denominator_time


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def write_tables_csv(report: BenchReport, path) -> None:
    """Mean seconds; rows ``(integer, sub-pixel)``, columns ``dataset/mode``."""
    datasets = sorted({r.dataset for r in report.records})
    modes = [m for m in MODES if any(r.mode == m for r in report.records)]
    combos = []
    for r in report.records:
        if r.combo not in combos:
            combos.append(r.combo)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["integer_method", "subpixel_method"] + [f"{d}/{m}" for d in datasets for m in modes])
        for im, sub in combos:
            row = [im, sub]
            for d, m in product(datasets, modes):
                rec = report.find(im, sub, m, d)
                row.append("" if rec is None or rec.failed else f"{rec.mean_time:.6g}")
            w.writerow(row)


def write_records_csv(report: BenchReport, path) -> None:
    cols = ["integer_method", "subpixel_method", "mode", "dataset", "workers", "repeats",
            "mean_time_s", "stddev_s", "pairs", "per_pair_s", "frame_rate_hz", "evaluations",
            "failed_pairs", "error"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in report.records:
            w.writerow([r.integer_method, r.subpixel_method, r.mode, r.dataset, r.workers, r.repeats,
                        f"{r.mean_time:.6g}", f"{r.stddev:.6g}", r.pairs, f"{r.per_pair_time:.6g}",
                        f"{r.frame_rate:.6g}", r.evaluations, r.failed_pairs, r.error or ""])


def write_ratios_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "key", "numerator", "denominator", "ratio", "expected", "note"])
        for r in derive_ratios(report):
            w.writerow([r.kind, r.key, r.numerator, r.denominator,
                        "" if r.value is None else f"{r.value:.4g}", r.expected, r.note])


def write_manifest(path, config: dict[str, str], environment: dict[str, str],
                   extra: dict[str, str] | None = None) -> None:
    """``key = value`` lines; ``config.*`` echoes settings, ``env.*`` the machine."""
    with open(path, "w") as fh:
        fh.write("# dicperf run manifest\n")
        for prefix, d in (("config", config), ("env", environment), ("result", extra or {})):
            for k, v in d.items():
                fh.write(f"{prefix}.{k} = {v}\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition(" = ")
            out[k] = v
    return out


def write_report(report: BenchReport, out_dir) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in
             ("tables.csv", "records.csv", "ratios.csv", "manifest.txt")}
    write_tables_csv(report, paths["tables.csv"])
    write_records_csv(report, paths["records.csv"])
    write_ratios_csv(report, paths["ratios.csv"])
    write_manifest(paths["manifest.txt"], report.config, report.environment,
                   {"total_evaluations": str(report.total_evaluations), "ok": str(report.ok)})
    return paths


def record_line(r: BenchRecord) -> str:
    if r.failed:
        return f"{r.integer_method}+{r.subpixel_method}/{r.mode}: FAILED {r.error or ''}"
    return (f"{r.integer_method:>4}+{r.subpixel_method:<4} {r.mode:<17} "
            f"{r.mean_time:9.4f}s +- {r.stddev:.4f} x{r.repeats} "
            f"{r.frame_rate:7.3f} Hz evals={r.evaluations}")


def ratio_lines(report: BenchReport) -> Iterable[str]:
    for q in derive_ratios(report):
        val = "n/a" if q.value is None else f"{q.value:.2f}"
        yield f"{q.kind:<18} {q.key:<32} {val:>6} (expected {q.expected}) {q.note}".rstrip()


def summary_lines(report: BenchReport) -> Iterable[str]:
    for r in report.records:
        yield record_line(r)
    yield from ratio_lines(report)
