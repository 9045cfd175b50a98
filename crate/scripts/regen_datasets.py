#!/usr/bin/env python3
"""Regenerates the committed UCI dataset CSVs from scikit-learn.

Each file is numeric CSV without a header; the label is the last column.
Feature values are written with repr-precision so the files round-trip
exactly. Row order is the scikit-learn loader order.

Usage: python3 scripts/regen_datasets.py [out_dir=data]
"""

import sys

from sklearn.datasets import load_digits, load_iris, load_wine


def write_csv(path, X, y):
    with open(path, "w", newline="\n") as f:
        for row, label in zip(X, y):
            cells = [repr(float(v)) for v in row]
            cells.append(str(int(label)))
            f.write(",".join(cells) + "\n")
    print(f"wrote {path}: {X.shape[0]} rows, {X.shape[1]} features")


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "data"
    wine = load_wine()
    write_csv(f"{out}/wine.csv", wine.data, wine.target)
    iris = load_iris()
    write_csv(f"{out}/iris.csv", iris.data, iris.target)
    digits = load_digits()
    write_csv(f"{out}/digits.csv", digits.data, digits.target)


if __name__ == "__main__":
    main()
