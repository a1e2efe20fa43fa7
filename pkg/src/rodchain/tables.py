"""Readers for the CSV and JSON files written by the package."""
from __future__ import annotations

import csv
import json

import numpy as np


def read_csv(path) -> dict:
    """Read a headed CSV into columns.

    Numeric columns become float arrays; anything else stays a list of
    strings.  Lines starting with ``#`` are skipped.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty table")
    header, body = rows[0], rows[1:]
    out = {}
    for i, name in enumerate(header):
        col = [r[i] for r in body]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = col
    return out


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
