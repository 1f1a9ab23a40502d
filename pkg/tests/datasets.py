"""Synthetic data sets shared by the CLI and acceptance tests."""

import csv

import numpy as np


def kyphosis_like(seed=0, n=81):
    """Binary outcome with three integer covariates on the scale of the kyphosis study.

    Age in months (1 to 206), number of vertebrae involved (2 to 10) and the
    topmost vertebra operated on (1 to 18).  Roughly a fifth of the outcomes
    are positive.
    """
    rng = np.random.default_rng(seed)
    age = rng.integers(1, 207, n).astype(float)
    number = rng.integers(2, 11, n).astype(float)
    start = rng.integers(1, 19, n).astype(float)
    a = age / 206
    eta = -2.6 + 3.0 * a * (1 - a) + 0.35 * (number - 4) - 0.2 * (start - 10)
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return {"Kyphosis": y, "Age": age, "Number": number, "Start": start}


def write_columns(path, columns):
    names = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(columns[c] for c in names)):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_artifact(path):
    """Return ``(header_line, names, float_array)`` of a CSV artifact."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        rows = list(csv.reader(fh))
    return first, rows[0], np.array(rows[1:], dtype=float)
