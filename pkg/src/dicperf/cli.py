"""``dicperf`` command line: analyze, synth, validate, bench."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import asdict, replace

from . import bench as benchmod
from .image_core import (
    GroundTruth,
    ImageError,
    SpeckleParams,
    TexturelessPatternError,
    WarpOutOfBoundsError,
    default_margin,
    grid_subsets,
    load_sequence,
    save_pgm,
    synth_speckle,
    synth_warped_pair,
)
from .integer_search import SearchConfig
from .pipeline import RunConfig, analyze_sequence, write_fields
from .subpixel_refine import RefineConfig
from .validation import validate_accuracy

WORKERS_ENV = "DICPERF_WORKERS"

MODE_NAMES = {"serial": "serial", "subimage": "subimage_parallel", "image": "image_parallel"}
DOMAIN_NAMES = {"window": "window", "whole": "whole_image"}
POLICY_NAMES = {"update": "update_every_pair", "fixed": "fixed_first"}

_SEARCH = SearchConfig()
_REFINE = RefineConfig()
_RUN = RunConfig()


class UsageError(Exception):
    pass


def _default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}")
    return _RUN.worker_count


def _add_run_flags(p: argparse.ArgumentParser, methods: bool = True) -> None:
    if methods:
        p.add_argument("--int", dest="int_method", choices=["bfs", "pso", "mpso"],
                       default=_RUN.integer_method, help="integer-pixel search (default %(default)s)")
        p.add_argument("--sub", dest="sub_method", choices=["nr", "icgn", "none"],
                       default=_RUN.subpixel_method, help="sub-pixel refiner (default %(default)s)")
        p.add_argument("--mode", choices=list(MODE_NAMES), default="serial",
                       help="execution schedule (default %(default)s)")
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default ${WORKERS_ENV} or {_RUN.worker_count})")
    p.add_argument("--policy", choices=list(POLICY_NAMES), default="update",
                   help="reference policy: update every pair or fixed first image (default %(default)s)")
    p.add_argument("--seed", type=int, default=_SEARCH.rng_seed, help="global RNG seed (default %(default)s)")
    p.add_argument("--radius", type=int, default=_SEARCH.search_radius,
                   help="search radius in px (default %(default)s)")
    p.add_argument("--bfs-domain", choices=list(DOMAIN_NAMES), default="whole",
                   help="brute-force domain (default %(default)s)")
    p.add_argument("--particles", type=int, default=_SEARCH.particle_count,
                   help="swarm size (default %(default)s)")
    p.add_argument("--generations", type=int, default=_SEARCH.max_generations,
                   help="max generations (default %(default)s)")
    p.add_argument("--threshold", type=float, default=_SEARCH.stop_threshold,
                   help="swarm stop correlation (default %(default)s)")
    p.add_argument("--c1", type=float, default=_SEARCH.c1, help="cognitive coefficient (default %(default)s)")
    p.add_argument("--c2", type=float, default=_SEARCH.c2, help="social coefficient (default %(default)s)")
    p.add_argument("--vmax", type=float, default=_SEARCH.max_velocity,
                   help="particle speed clamp in px/generation, 0 disables (default %(default)s)")
    p.add_argument("--tol", type=float, default=_REFINE.tolerance,
                   help="refinement stop tolerance in px (default %(default)s)")
    p.add_argument("--max-iter", type=int, default=_REFINE.max_iter,
                   help="refinement iteration cap (default %(default)s)")
    p.add_argument("--half-width", type=int, default=_RUN.half_width,
                   help="subset half-width M (default %(default)s)")
    p.add_argument("--spacing", type=int, default=_RUN.spacing, help="grid spacing (default %(default)s)")
    p.add_argument("--margin", type=int, default=None,
                   help="grid edge margin (default: half-width + radius + 2)")


def _str_arg(args, name: str, default: str) -> str:
    value = getattr(args, name, None)
    return value if isinstance(value, str) else default


def _run_config(args, int_method=None, sub_method=None, mode=None) -> RunConfig:
    workers = args.workers if args.workers is not None else _default_workers()
    search = SearchConfig(
        search_radius=args.radius, bfs_domain=DOMAIN_NAMES[args.bfs_domain],
        particle_count=args.particles, max_generations=args.generations,
        stop_threshold=args.threshold, c1=args.c1, c2=args.c2, rng_seed=args.seed,
        max_velocity=args.vmax if args.vmax else None)
    refine = RefineConfig(tolerance=args.tol, max_iter=args.max_iter)
    return RunConfig(
        integer_method=int_method or _str_arg(args, "int_method", _RUN.integer_method),
        subpixel_method=sub_method or _str_arg(args, "sub_method", _RUN.subpixel_method),
        mode=mode or MODE_NAMES[getattr(args, "mode", "serial")],
        reference_policy=POLICY_NAMES[args.policy], worker_count=workers,
        search=search, refine=refine, half_width=args.half_width,
        spacing=args.spacing, margin=args.margin)


def _flatten(cfg: RunConfig) -> dict[str, str]:
    out = {}
    for k, v in asdict(cfg).items():
        if isinstance(v, dict):
            out.update({f"{k}.{kk}": str(vv) for kk, vv in v.items()})
        else:
            out[k] = str(v)
    if cfg.margin is None:
        out["margin"] = f"{default_margin(cfg.half_width, cfg.search.search_radius)} (auto)"
    return out


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    cfg = _run_config(args)
    t0 = time.perf_counter()
    images = load_sequence(args.sequence, args.pattern)
    fields = analyze_sequence(images, cfg)
    write_fields(fields, args.out)
    elapsed = time.perf_counter() - t0
    n_poi = sum(len(f) for f in fields)
    conv = sum(r.converged for f in fields for r in f.records) / n_poi if n_poi else 0.0
    evals = sum(f.evaluations for f in fields)
    failed_pairs = [f.pair_index for f in fields if f.error]
    hz = len(fields) / elapsed if elapsed > 0 else float("inf")
    summary = {"pairs": str(len(fields)), "pois": str(n_poi), "convergence_rate": f"{conv:.4f}",
               "elapsed_s": f"{elapsed:.4f}", "rate_hz": f"{hz:.4f}", "evaluations": str(evals),
               "failed_pairs": ",".join(map(str, failed_pairs))}
    config = _flatten(cfg)
    config.update({"sequence": os.path.abspath(args.sequence), "pattern": args.pattern,
                   "out": os.path.abspath(args.out)})
    benchmod.write_manifest(os.path.join(args.out, "manifest.txt"), config,
                            benchmod.capture_environment(cfg.effective_workers), summary)
    print(f"pairs={len(fields)} pois={n_poi} converged={conv:.1%} elapsed={elapsed:.3f}s "
          f"rate={hz:.3f}Hz evaluations={evals}")
    for f in fields:
        if f.error:
            print(f"pair {f.pair_index} failed: {f.error}", file=sys.stderr)
    return 1 if failed_pairs else 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        size = int(w), int(h)
    except ValueError:
        raise UsageError(f"size must look like 512x512, got {text!r}")
    if min(size) < 1:
        raise UsageError("size must be positive")
    return size


WARP_KEYS = ("u", "ux", "uy", "v", "vx", "vy")


def parse_warp(text: str) -> tuple[float, ...]:
    """``"u=3.25,v=-1.5"`` plus optional ``ux, uy, vx, vy`` gradients."""
    vals = dict.fromkeys(WARP_KEYS, 0.0)
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, num = part.partition("=")
        key = key.strip().replace("_", "")
        if not sep or key not in vals:
            raise UsageError(f"invalid warp spec {text!r}: expected keys {', '.join(WARP_KEYS)}")
        try:
            vals[key] = float(num)
        except ValueError:
            raise UsageError(f"invalid warp spec {text!r}: {num!r} is not a number")
    return tuple(vals[k] for k in WARP_KEYS)


def cmd_synth(args) -> int:
    width, height = parse_size(args.size)
    warp = parse_warp(args.warp)
    params = SpeckleParams(blob_sigma=args.blob_sigma)
    ref = synth_speckle(width, height, args.seed, params)
    os.makedirs(args.out, exist_ok=True)
    try:
        subsets = grid_subsets(ref, args.half_width, args.spacing, args.margin, args.radius)
    except ValueError:
        subsets = []  # image too small for any POI; truth CSV keeps only its header
    if args.frames > 2:
        # frame k carries k times the warp's translation
        if any(warp[i] for i in (1, 2, 4, 5)):
            raise UsageError("--frames supports translations only")
        save_pgm(ref, os.path.join(args.out, "frame_0000.pgm"))
        for k in range(1, args.frames):
            tgt, gt = synth_warped_pair(ref, (k * warp[0], k * warp[3]))
            save_pgm(tgt, os.path.join(args.out, f"frame_{k:04d}.pgm"))
            gt.to_csv(os.path.join(args.out, f"truth_{k:04d}.csv"), subsets)
        print(f"wrote {args.frames} frames to {args.out}")
        return 0
    tgt, gt = synth_warped_pair(ref, warp)
    save_pgm(ref, os.path.join(args.out, "reference.pgm"))
    save_pgm(tgt, os.path.join(args.out, "target.pgm"))
    gt.to_csv(os.path.join(args.out, "truth.csv"), subsets)
    print(f"wrote reference.pgm, target.pgm, truth.csv ({len(subsets)} POIs) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    base = _run_config(args, mode=MODE_NAMES[args.mode])
    ints = args.int_methods or ["bfs", "pso", "mpso"]
    subs = [args.sub_method] if args.sub_method else ["nr", "icgn"]
    t0 = time.perf_counter()
    results = validate_accuracy(ints, subs, base, parse_size(args.size), args.synth_seed,
                                args.grid_spacing)
    for r in results:
        print(r.line())
    print(f"elapsed={time.perf_counter() - t0:.1f}s")
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def parse_only(items: list[str]) -> dict[str, set[str]]:
    allowed = {"int": {"bfs", "pso", "mpso"}, "sub": {"nr", "icgn", "none"}, "mode": set(MODE_NAMES)}
    out: dict[str, set[str]] = {}
    for item in items:
        for part in filter(None, item.split(",")):
            key, sep, val = part.partition("=")
            if not sep or key not in allowed or val not in allowed[key]:
                raise UsageError(f"invalid --only filter {part!r}")
            out.setdefault(key, set()).add(val)
    return out


def cmd_bench(args) -> int:
    if not args.synthetic and not args.dataset:
        raise UsageError("bench needs a dataset directory or --synthetic")
    only = parse_only(args.only or [])
    ints = [m for m in ("bfs", "pso", "mpso") if m in only.get("int", {"bfs", "pso", "mpso"})]
    subs_all = ("nr", "icgn", "none") if args.with_none else ("nr", "icgn")
    subs = [s for s in subs_all if s in only.get("sub", set(subs_all))]
    if "none" in only.get("sub", set()) and "none" not in subs:
        subs.append("none")
    modes = [MODE_NAMES[m] for m in MODE_NAMES if m in only.get("mode", set(MODE_NAMES))]
    base = _run_config(args, "bfs", "nr", "serial")
    matrix = benchmod.default_matrix(base, subs, ints, modes)
    if not matrix:
        raise UsageError("--only filters leave an empty matrix")
    if args.repeats == "auto":
        repeats: int | str = "auto"
    else:
        try:
            repeats = int(args.repeats)
        except ValueError:
            raise UsageError("--repeats must be an integer or 'auto'")

    os.makedirs(args.out, exist_ok=True)
    if args.synthetic:
        dataset = benchmod.synthetic_dataset(os.path.join(args.out, "dataset"), args.pairs,
                                             parse_size(args.size), args.synth_seed)
    else:
        if not os.path.isdir(args.dataset):
            raise UsageError(f"dataset directory not found: {args.dataset}")
        dataset = benchmod.Dataset(os.path.basename(os.path.normpath(args.dataset)),
                                   args.dataset, args.pattern)

    report = benchmod.run_bench(matrix, dataset, repeats, warmup=not args.no_warmup,
                                max_repeats=args.max_repeats,
                                progress=lambda r: print(benchmod.record_line(r), flush=True))
    report.config.update({f"base.{k}": v for k, v in _flatten(base).items()})
    paths = benchmod.write_report(report, args.out)
    print(f"{len(report.records)} cells")
    for line in benchmod.ratio_lines(report):
        print(line)
    print("wrote " + ", ".join(sorted(paths)))
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dicperf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="analyse an image sequence")
    p.add_argument("sequence", help="directory of frames")
    p.add_argument("--pattern", default="*.pgm", help="filename glob (default %(default)s)")
    p.add_argument("--out", default="fields", help="output directory (default %(default)s)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="write a synthetic speckle pair and its ground truth")
    p.add_argument("--size", default="512x512", help="WIDTHxHEIGHT (default %(default)s)")
    p.add_argument("--warp", default="u=0,v=0", help='e.g. "u=3.25,v=-1.5,ux=0.01" (default %(default)s)')
    p.add_argument("--seed", type=int, default=0, help="speckle seed (default %(default)s)")
    p.add_argument("--blob-sigma", type=float, default=SpeckleParams().blob_sigma,
                   help="speckle blob radius in px (default %(default)s)")
    p.add_argument("--frames", type=int, default=2,
                   help="frames to write; >2 writes a sequence of multiples of the translation")
    p.add_argument("--out", default="synth", help="output directory (default %(default)s)")
    p.add_argument("--half-width", type=int, default=_RUN.half_width)
    p.add_argument("--spacing", type=int, default=_RUN.spacing)
    p.add_argument("--margin", type=int, default=None)
    p.add_argument("--radius", type=int, default=_SEARCH.search_radius)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="synthetic accuracy sweep")
    p.add_argument("--int", dest="int_methods", action="append", choices=["bfs", "pso", "mpso"],
                   help="integer method(s) to check (default: all)")
    p.add_argument("--sub", dest="sub_method", choices=["nr", "icgn", "none"], default=None,
                   help="sub-pixel method (default: nr and icgn)")
    p.add_argument("--mode", choices=list(MODE_NAMES), default="serial")
    p.add_argument("--size", default="160x160", help="synthetic image size (default %(default)s)")
    p.add_argument("--synth-seed", type=int, default=7, help="speckle seed (default %(default)s)")
    p.add_argument("--grid-spacing", type=int, default=25, help="POI spacing (default %(default)s)")
    _add_run_flags(p, methods=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="time the method x mode matrix")
    p.add_argument("dataset", nargs="?", help="directory of frames")
    p.add_argument("--synthetic", action="store_true", help="generate a synthetic dataset")
    p.add_argument("--pairs", type=int, default=10, help="synthetic pair count (default %(default)s)")
    p.add_argument("--size", default="200x200", help="synthetic image size (default %(default)s)")
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("--pattern", default="*.pgm")
    p.add_argument("--repeats", default="auto", help="count or 'auto' (default %(default)s)")
    p.add_argument("--max-repeats", type=int, default=None, help="cap for auto repeats")
    p.add_argument("--no-warmup", action="store_true", help="skip the untimed warm-up run")
    p.add_argument("--only", action="append", help="filter, e.g. int=bfs,mode=image")
    p.add_argument("--with-none", action="store_true", help="include integer-only cells")
    p.add_argument("--out", default="bench", help="report directory (default %(default)s)")
    _add_run_flags(p, methods=False)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ImageError, WarpOutOfBoundsError, TexturelessPatternError, ValueError, OSError) as exc:
        print(f"dicperf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
