#!/usr/bin/env python3
# Copyright 2026 The ExciteFuzz Authors.
# Licensed under the Apache License, Version 2.0.
"""Exports the 8x8 handwritten digits set to the project's CSV dataset format.

Each row is `label,p0,...,p63` with pixels rescaled from 0..16 to 0..255.
"""
import sys

from sklearn.datasets import load_digits


def main(path):
    digits = load_digits()
    with open(path, "w") as out:
        for image, label in zip(digits.data, digits.target):
            pixels = [str(int(round(v * 255.0 / 16.0))) for v in image]
            out.write(f"{int(label)}," + ",".join(pixels) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/digits.csv")
