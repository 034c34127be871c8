"""Correlation coefficients between speckle subsets.

Run: python demos/01_correlation.py
"""

import numpy as np

from dicperf import CorrelationMemo, GrayImage, SubsetSpec, subset_stats, synth_speckle, zncc, zncc_memo


def main():
    ref = synth_speckle(96, 96, seed=1)
    spec = SubsetSpec(48, 48, 15)  # 31 x 31 subset around the image centre
    stats = subset_stats(ref, spec)
    print(f"subset mean {stats.mean:.2f}, centred norm {stats.norm:.1f}")

    # zero-normalisation removes gain and offset: all three print +-1
    print("same image      :", zncc(stats, ref, spec, (0, 0)))
    print("2*ref + 10      :", zncc(stats, GrayImage(2 * ref.data + 10), spec, (0, 0)))
    print("inverted (255-x):", zncc(stats, GrayImage(255 - ref.data), spec, (0, 0)))

    # a displaced window decorrelates within a couple of pixels
    for d in range(5):
        print(f"shift ({d}, 0): C = {zncc(stats, ref, spec, (d, 0)):.4f}")

    # the look-up table counts each distinct displacement once
    memo = CorrelationMemo()
    probes = np.random.default_rng(0).integers(-3, 4, size=(60, 2))
    for dx, dy in probes:
        zncc_memo(memo, stats, ref, spec, (dx, dy))
    print(f"{len(probes)} probes -> {memo.misses} computed, {memo.hits} served from the table")


if __name__ == "__main__":
    main()
