"""Accuracy over sub-pixel translations for a couple of method combinations.

The full sweep (all integer x sub-pixel combos) is ``dicperf validate``.

Run: python demos/05_accuracy_sweep.py
"""

from dicperf.validation import sweep_translations, validate_accuracy


def main():
    shifts = sweep_translations()
    print(f"{len(shifts)} translations, e.g. {shifts[:3]}")
    for res in validate_accuracy(("mpso",), ("nr", "icgn", "none"), size=(140, 140)):
        print(res.line())


if __name__ == "__main__":
    main()
