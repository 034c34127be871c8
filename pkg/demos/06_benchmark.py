"""A small timing matrix and the ratios derived from it.

Real runs use ``dicperf bench``; this keeps the dataset tiny so it
finishes in well under a minute. Whole-image BFS cost grows with image
area, so at this size its lead over the swarms is much smaller than on
full-size frames.

Run: python demos/06_benchmark.py
"""

import tempfile

from dicperf import RunConfig
from dicperf.bench import default_matrix, run_bench, summary_lines, synthetic_dataset


def main():
    with tempfile.TemporaryDirectory() as tmp:
        ds = synthetic_dataset(tmp, pairs=2, size=(140, 140))
        matrix = default_matrix(RunConfig(worker_count=2), ("nr",), ("bfs", "pso", "mpso"),
                                ("serial", "image_parallel"))
        report = run_bench(matrix, ds, repeats=1, warmup=False)
    for line in summary_lines(report):
        print(line)
    print("environment:", report.environment["available_cpus"], "cpu(s) available")


if __name__ == "__main__":
    main()
