import os
from dataclasses import replace

import pytest

from dicperf.bench import (
    BenchRecord, BenchReport, auto_repeats, default_matrix, derive_ratios, ratio_of,
    read_manifest, run_bench, synthetic_dataset, write_report,
)
from dicperf.integer_search import SearchConfig
from dicperf.pipeline import DisplacementField, RunConfig

BASE = RunConfig(spacing=25, worker_count=2, search=SearchConfig(search_radius=8))


def record(i, s, mode, t, pairs=10, evals=100):
    return BenchRecord(i, s, mode, "set1", 25, t, 0.0, pairs, evals)


@pytest.mark.parametrize("duration,reps", [(61, 25), (60, 100), (30, 100), (10, 100),
                                           (9.9, 250), (1, 250), (0.99, 1000), (0, 1000)])
def test_auto_repeat_bands(duration, reps):
    assert auto_repeats(duration) == reps


def test_reference_ratios():
    assert ratio_of(3345.5, 582.4) == pytest.approx(5.74, abs=5e-3)
    assert ratio_of(582.4, 152.8) == pytest.approx(3.81, abs=5e-3)
    assert ratio_of(2.0, 2.0) == 1.0


def test_derived_ratios_cite_records():
    report = BenchReport([record("bfs", "nr", "serial", 3345.5), record("pso", "nr", "serial", 582.4),
                          record("pso", "nr", "image_parallel", 152.8),
                          record("pso", "nr", "subimage_parallel", 700.0)], {})
    by_kind = {(r.kind, r.key): r for r in derive_ratios(report)}
    assert by_kind[("bfs_vs_pso", "nr/serial/set1")].value == pytest.approx(5.744, abs=1e-3)
    assert by_kind[("serial_vs_image", "pso+nr/set1")].value == pytest.approx(3.812, abs=1e-3)
    sub = by_kind[("serial_vs_subimage", "pso+nr/set1")]
    assert sub.value < 1 and "slower" in sub.note
    # cells outside the matrix produce no ratio
    assert ("bfs_vs_mpso", "nr/serial/set1") not in by_kind
    for r in by_kind.values():
        num = report.find(*r.numerator.replace("/", "+").split("+"), "set1")
        den = report.find(*r.denominator.replace("/", "+").split("+"), "set1")
        assert r.value == num.mean_time / den.mean_time


def test_failed_cell_ratio_is_none():
    bad = record("pso", "nr", "serial", float("nan"))
    bad.error = "boom"
    report = BenchReport([record("bfs", "nr", "serial", 10.0), bad], {})
    (r,) = [q for q in derive_ratios(report) if q.kind == "bfs_vs_pso"]
    assert r.value is None and r.note == "failed cell"
    assert not report.ok


def test_frame_rate():
    r = record("pso", "nr", "image_parallel", 4.0, pairs=10)
    assert r.frame_rate == 2.5 and r.per_pair_time == 0.4


def test_default_matrix_shape():
    assert len(default_matrix()) == 18
    assert len(default_matrix(subpixel_methods=("nr", "icgn", "none"))) == 27
    assert len(default_matrix(integer_methods=("bfs",))) == 6


def test_empty_matrix(tmp_path):
    ds = synthetic_dataset(str(tmp_path / "d"), pairs=1, size=(70, 70))
    with pytest.raises(ValueError, match="empty"):
        run_bench([], ds)


@pytest.fixture(scope="module")
def small_report(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    ds = synthetic_dataset(str(root / "data"), pairs=3, size=(80, 80), seed=4)
    matrix = default_matrix(BASE, ("nr",), ("pso", "bfs"))
    return run_bench(matrix, ds, repeats=2), ds, root


def test_run_bench_counts(small_report):
    report, ds, _ = small_report
    assert len(report.records) == 6 and report.ok
    for r in report.records:
        assert r.repeats == 2 and len(r.times) == 2 and r.pairs == 3
        assert r.stddev >= 0 and r.frame_rate > 0
    # evaluations match a direct per-record recount
    from dicperf.image_core import load_sequence
    from dicperf.pipeline import analyze_sequence
    images = load_sequence(ds.directory)
    for r in report.records:
        cfg = replace(BASE, integer_method=r.integer_method, subpixel_method=r.subpixel_method, mode=r.mode)
        fields = analyze_sequence(images, cfg)
        assert r.evaluations == sum(rec.evaluations for f in fields for rec in f.records)
    assert report.total_evaluations == sum(r.evaluations for r in report.records)
    # all modes do identical work
    assert len({r.evaluations for r in report.records if r.integer_method == "pso"}) == 1


def test_rerun_gives_same_counts(small_report):
    report, ds, _ = small_report
    again = run_bench(default_matrix(BASE, ("nr",), ("pso",), ("serial",)), ds, repeats=1, warmup=False)
    assert again.records[0].evaluations == report.find("pso", "nr", "serial", ds.name).evaluations


def test_auto_repeats_with_cap(small_report):
    _, ds, _ = small_report
    rep = run_bench(default_matrix(BASE, ("none",), ("pso",), ("serial",)), ds, "auto", max_repeats=3)
    assert rep.records[0].repeats == 3


def test_report_files(small_report, tmp_path):
    report, _, _ = small_report
    paths = write_report(report, tmp_path)
    assert set(paths) == {"tables.csv", "records.csv", "ratios.csv", "manifest.txt"}
    manifest = read_manifest(paths["manifest.txt"])
    assert manifest["env.timing_boundary"].startswith("load images")
    assert manifest["result.total_evaluations"] == str(report.total_evaluations)
    assert any(k.startswith("config.cell.") for k in manifest)
    header = open(paths["tables.csv"]).readline().strip().split(",")
    assert header[:2] == ["integer_method", "subpixel_method"]
    assert "frame_rate_hz" in open(paths["records.csv"]).readline()


def test_missing_dataset_is_recorded(tmp_path):
    from dicperf.bench import Dataset
    rep = run_bench(default_matrix(BASE, ("nr",), ("pso",), ("serial",)),
                    Dataset("ghost", str(tmp_path / "none")), repeats=1)
    assert rep.records[0].failed and "insufficient" in rep.records[0].error
