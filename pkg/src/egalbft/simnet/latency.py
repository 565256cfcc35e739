"""Latency matrices (one-way delays in ms)."""
from __future__ import annotations

# Synthetic four-site matrix inside the 59-127 ms band of a wide-area
# deployment. Exact pairs are configuration, not measurements.
GEO4_SITES = ("oregon", "ireland", "mumbai", "seoul")
GEO4 = (
    (0.0, 66.0, 110.0, 70.0),
    (66.0, 0.0, 61.0, 127.0),
    (110.0, 61.0, 0.0, 75.0),
    (70.0, 127.0, 75.0, 0.0),
)


def symmetric(n: int, delay: float):
    return tuple(tuple(0.0 if i == j else float(delay) for j in range(n)) for i in range(n))


def validate(matrix, n: int):
    if len(matrix) != n or any(len(row) != n for row in matrix):
        raise ValueError(f"latency matrix must be {n}x{n}")
    for row in matrix:
        for v in row:
            if v < 0:
                raise ValueError("latencies must be non-negative")
    return tuple(tuple(float(v) for v in row) for row in matrix)


def named(name: str, n: int):
    if name == "geo4":
        if n != 4:
            raise ValueError("geo4 has four sites")
        return GEO4
    if name.startswith("uniform"):
        _, _, d = name.partition(":")
        return symmetric(n, float(d or 100))
    raise ValueError(f"unknown latency matrix {name!r}")
