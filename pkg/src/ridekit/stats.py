"""Mergeable descriptive statistics and quantile conventions."""

from __future__ import annotations

import numpy as np


class StreamingStats:
    """Single-pass mean/variance accumulator with an associative merge.

    Uses the pairwise update of Chan et al., so partial summaries computed
    on separate workers can be combined without revisiting samples.
    """

    __slots__ = ("n", "mean", "m2", "min", "max")

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.min = np.inf
        self.max = -np.inf

    def push(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)
        if x < self.min:
            self.min = x
        if x > self.max:
            self.max = x

    def push_many(self, values) -> None:
        for x in np.asarray(values, dtype=float):
            self.push(float(x))

    def merge(self, other: "StreamingStats") -> "StreamingStats":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n = other.n
            self.mean = other.mean
            self.m2 = other.m2
            self.min = other.min
            self.max = other.max
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean += delta * other.n / n
        self.m2 += other.m2 + delta * delta * self.n * other.n / n
        self.n = n
        self.min = min(self.min, other.min)
        self.max = max(self.max, other.max)
        return self

    def variance(self) -> float:
        """Population variance (ddof=0)."""
        return self.m2 / self.n if self.n else 0.0

    def std(self) -> float:
        return float(np.sqrt(max(self.variance(), 0.0)))


def quantile_sorted(sorted_values: np.ndarray, q) -> np.ndarray:
    """Linear-interpolation quantiles (the type-7 convention) of a sorted array."""
    v = np.asarray(sorted_values, dtype=float)
    if v.size == 0:
        raise ValueError("quantile of empty array")
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    pos = qs * (v.size - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, v.size - 1)
    frac = pos - lo
    out = v[lo] * (1.0 - frac) + v[hi] * frac
    return out if np.ndim(q) else float(out[0])
