"""CSV and JSON readers/writers for matrices, margins, potentials, and reports.

Matrix CSV: first line is the header "m,n", then m rows of n values.
All floats are written with 17 significant digits so files round-trip.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DimensionMismatch
from .scaling import Gauge, MarginPair, Potentials

__all__ = [
    "fmt17",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_matrix_json",
    "read_matrix_json",
    "read_matrix",
    "write_columns_csv",
    "write_json",
    "write_margins_json",
    "read_margins_json",
    "write_potentials_json",
    "read_potentials_json",
]


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, M: np.ndarray) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    m, n = M.shape
    with open(path, "w") as fh:
        fh.write(f"{m},{n}\n")
        for row in M:
            fh.write(",".join(fmt17(v) for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
        try:
            m, n = (int(v) for v in header.split(","))
        except ValueError:
            raise DimensionMismatch(f"bad matrix header {header!r}; expected 'm,n'") from None
        M = np.loadtxt(fh, delimiter=",", ndmin=2)
    if M.shape != (m, n):
        raise DimensionMismatch(f"matrix body {M.shape} does not match header ({m}, {n})")
    return M


def write_matrix_json(path, M: np.ndarray) -> None:
    write_json(path, np.atleast_2d(np.asarray(M, dtype=float)))


def read_matrix_json(path) -> np.ndarray:
    with open(path) as fh:
        M = np.asarray(json.load(fh), dtype=float)
    if M.ndim != 2:
        raise DimensionMismatch("matrix JSON must be a nested array of rows")
    return M


def read_matrix(path) -> np.ndarray:
    """Dispatch on extension: .json as a nested array, anything else as CSV."""
    if str(path).endswith(".json"):
        return read_matrix_json(path)
    return read_matrix_csv(path)


def write_columns_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    cols = [np.asarray(c) for c in columns]

    def cell(v):
        if isinstance(v, str):
            return v
        if isinstance(v, (bool, np.bool_, int, np.integer)):
            return str(int(v))
        return fmt17(v)

    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(cell(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):  # bool is an int subclass: check first
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def write_margins_json(path, margins: MarginPair) -> None:
    write_json(path, {"r": margins.r, "c": margins.c})


def read_margins_json(path) -> MarginPair:
    with open(path) as fh:
        d = json.load(fh)
    return MarginPair(np.asarray(d["r"], dtype=float), np.asarray(d["c"], dtype=float))


def write_potentials_json(path, pot: Potentials) -> None:
    write_json(path, {"alpha": pot.alpha, "beta": pot.beta, "gauge": pot.gauge.value})


def read_potentials_json(path) -> Potentials:
    with open(path) as fh:
        d = json.load(fh)
    return Potentials(np.asarray(d["alpha"], dtype=float),
                      np.asarray(d["beta"], dtype=float),
                      Gauge(d["gauge"]))
