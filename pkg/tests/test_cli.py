import os
import subprocess
import sys

import numpy as np
import pytest

from dicperf.bench import read_manifest
from dicperf.cli import main, parse_warp
from dicperf.image_core import load_image, read_truth_csv, save_pgm, synth_speckle, synth_warped_pair


def test_synth_example(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["synth", "--size", "512x512", "--warp", "u=3.25,v=-1.5", "--seed", "7", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["reference.pgm", "target.pgm", "truth.csv"]
    rows = read_truth_csv(out / "truth.csv")
    assert len(rows) > 0 and (rows[:, 2] == 3.25).all() and (rows[:, 3] == -1.5).all()
    first = [open(out / n, "rb").read() for n in ("reference.pgm", "target.pgm")]
    main(["synth", "--size", "512x512", "--warp", "u=3.25,v=-1.5", "--seed", "7", "--out", str(out)])
    assert first == [open(out / n, "rb").read() for n in ("reference.pgm", "target.pgm")]


def test_synth_identity(tmp_path):
    out = tmp_path / "z"
    assert main(["synth", "--size", "64x48", "--warp", "u=0,v=0", "--out", str(out)]) == 0
    np.testing.assert_array_equal(load_image(out / "reference.pgm").data, load_image(out / "target.pgm").data)


def test_synth_out_of_bounds(tmp_path, capsys):
    rc = main(["synth", "--size", "512x512", "--warp", "u=9999,v=0", "--out", str(tmp_path)])
    assert rc != 0
    assert "warp out of bounds" in capsys.readouterr().err


@pytest.mark.parametrize("spec", ["u=1,w=2", "u=abc", "u"])
def test_invalid_warp_is_usage_error(tmp_path, spec):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--warp", spec, "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_parse_warp_affine():
    assert parse_warp("u=1, v=-2, ux=0.01, v_y=0.5") == (1.0, 0.01, 0.0, -2.0, 0.0, 0.5)


@pytest.fixture
def two_frames(tmp_path):
    ref = synth_speckle(100, 90, seed=1)
    tgt, _ = synth_warped_pair(ref, (1.4, -0.6))
    d = tmp_path / "seq"
    d.mkdir()
    save_pgm(ref, d / "a.pgm")
    save_pgm(tgt, d / "b.pgm")
    return d


def test_analyze_image_mode(two_frames, tmp_path, capsys):
    out = tmp_path / "fields"
    rc = main(["analyze", "--int", "mpso", "--sub", "nr", "--mode", "image", "--workers", "4",
               "--radius", "10", str(two_frames), "--out", str(out)])
    assert rc == 0
    assert sorted(os.listdir(out)) == ["field_0000.csv", "manifest.txt"]
    summary = capsys.readouterr().out
    assert "pairs=1" in summary and "converged=100.0%" in summary
    m = read_manifest(out / "manifest.txt")
    # all defaults materialized
    for key in ("config.search.particle_count", "config.search.c1", "config.refine.tolerance",
                "config.margin", "config.worker_count", "env.cpu_count", "result.rate_hz"):
        assert key in m
    assert m["config.mode"] == "image_parallel" and m["config.search.search_radius"] == "10"


def test_worker_env_override(two_frames, tmp_path, monkeypatch):
    monkeypatch.setenv("DICPERF_WORKERS", "3")
    out = tmp_path / "f"
    assert main(["analyze", "--sub", "none", "--radius", "5", str(two_frames), "--out", str(out)]) == 0
    assert read_manifest(out / "manifest.txt")["config.worker_count"] == "3"


def test_unknown_method(two_frames):
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "--int", "simplex", str(two_frames)])
    assert exc.value.code == 2


def test_analyze_missing_dir(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "insufficient images" in err and len(err.strip().splitlines()) == 1


def test_analyze_whole_image_bfs_count(tmp_path, capsys):
    d = tmp_path / "big"
    d.mkdir()
    img = synth_speckle(1000, 500, seed=2)
    save_pgm(img, d / "0.pgm")
    save_pgm(img, d / "1.pgm")
    rc = main(["analyze", "--int", "bfs", "--bfs-domain", "whole", "--sub", "none", "--half-width", "15",
               "--margin", "200", "--spacing", "1000", str(d), "--out", str(tmp_path / "o")])
    assert rc == 0
    assert "pois=1 " in capsys.readouterr().out
    assert read_manifest(tmp_path / "o" / "manifest.txt")["result.evaluations"] == "455900"


def test_bench_requires_dataset():
    with pytest.raises(SystemExit) as exc:
        main(["bench"])
    assert exc.value.code == 2


def test_bench_only_filter(tmp_path, capsys):
    out = tmp_path / "b"
    rc = main(["bench", "--synthetic", "--pairs", "1", "--size", "80x80", "--repeats", "1",
               "--only", "int=bfs", "--radius", "5", "--spacing", "30", "--out", str(out)])
    assert rc == 0
    assert "6 cells" in capsys.readouterr().out
    rows = open(out / "records.csv").read().strip().splitlines()
    assert len(rows) == 7
    assert sorted(os.listdir(out)) == ["dataset", "manifest.txt", "ratios.csv", "records.csv", "tables.csv"]


def test_bench_bad_filter(tmp_path):
    with pytest.raises(SystemExit):
        main(["bench", "--synthetic", "--only", "int=annealing", "--out", str(tmp_path)])


def test_validate_integer_only(capsys):
    rc = main(["validate", "--int", "mpso", "--sub", "none", "--size", "110x110"])
    out = capsys.readouterr().out
    assert "mpso+none" in out and "PASS" in out
    assert rc == 0


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dicperf", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("analyze", "synth", "validate", "bench"):
        assert sub in res.stdout


def test_flag_defaults_match_library():
    from dicperf.cli import build_parser
    from dicperf.integer_search import SearchConfig
    from dicperf.pipeline import RunConfig
    from dicperf.subpixel_refine import RefineConfig
    args = build_parser().parse_args(["analyze", "x"])
    s, r, run = SearchConfig(), RefineConfig(), RunConfig()
    assert (args.radius, args.particles, args.generations, args.threshold, args.c1, args.c2, args.seed,
            args.vmax) == (s.search_radius, s.particle_count, s.max_generations, s.stop_threshold,
                           s.c1, s.c2, s.rng_seed, s.max_velocity)
    assert (args.tol, args.max_iter) == (r.tolerance, r.max_iter)
    assert (args.int_method, args.sub_method, args.half_width, args.spacing) == \
        (run.integer_method, run.subpixel_method, run.half_width, run.spacing)
