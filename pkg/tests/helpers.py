"""Independent oracles and small utilities shared across the test suite.

Everything here is deliberately written from first principles (dense
enumeration, brute force, alternative geometry) so it cannot share a bug
with the implementation it checks.
"""

from __future__ import annotations

import itertools
import math
from math import comb

import numpy as np

EARTH_R = 6_371_000.0


def brute_force_moving_average(t: np.ndarray, v: np.ndarray, window: float) -> np.ndarray:
    """Per-point mean over |t_j - t_i| <= window/2 (inclusive, 1e-9 slack)."""
    out = np.empty(len(t))
    half = window / 2.0 + 1e-9
    for i in range(len(t)):
        mask = np.abs(t - t[i]) <= half
        out[i] = v[mask].mean()
    return out


def bin_mean_oracle(t: np.ndarray, v: np.ndarray):
    """Integer-second bin means over [k-0.5, k+0.5), k spanning the input."""
    k_min = int(math.ceil(t[0] - 1e-9))
    k_max = int(math.floor(t[-1] + 1e-9))
    ks = np.arange(k_min, k_max + 1)
    means = []
    for k in ks:
        mask = np.floor(t + 0.5).astype(int) == k
        means.append(v[mask].mean() if mask.any() else None)
    return ks, means


def qp_difference_l1_oracle(y: np.ndarray, lam: float, order: int):
    """Exhaustive active-set enumeration for min 0.5||x-y||^2 + lam*||D x||_1.

    Enumerates every sign pattern of the dual variable (0 meaning the
    corresponding difference is pinned to zero), solves the implied linear
    system, and keeps the candidate with the smallest objective. Exact for
    small n; the optimal pattern is always among the candidates.
    """
    n = len(y)
    D = np.diff(np.eye(n), n=order, axis=0)
    m = D.shape[0]
    best_x, best_obj = None, np.inf
    for signs in itertools.product((-1, 0, 1), repeat=m):
        s = np.asarray(signs, dtype=float)
        active = np.flatnonzero(s == 0.0)
        bound = np.flatnonzero(s != 0.0)
        nu = np.zeros(m)
        nu[bound] = s[bound] * lam
        if len(active):
            DA = D[active]
            rhs = DA @ (y - D[bound].T @ nu[bound]) if len(bound) else DA @ y
            try:
                nu[active] = np.linalg.solve(DA @ DA.T, rhs)
            except np.linalg.LinAlgError:
                continue
        x = y - D.T @ nu
        obj = 0.5 * float(np.sum((x - y) ** 2)) + lam * float(np.sum(np.abs(D @ x)))
        if obj < best_obj:
            best_obj, best_x = obj, x
    return best_x, best_obj


def _ecef(lat, lon):
    p = math.radians(lat)
    l = math.radians(lon)
    return np.array([math.cos(p) * math.cos(l), math.cos(p) * math.sin(l), math.sin(p)])


def chord_point_segment_m(lat, lon, a_latlon, b_latlon) -> float:
    """Point-to-segment distance via 3D chord geometry (independent path)."""
    p = _ecef(lat, lon)
    a = _ecef(*a_latlon)
    b = _ecef(*b_latlon)
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom <= 0 else float((p - a) @ ab) / denom
    t = min(max(t, 0.0), 1.0)
    q = a + t * ab
    q /= np.linalg.norm(q)
    chord = float(np.linalg.norm(p - q))
    return 2.0 * EARTH_R * math.asin(min(chord / 2.0, 1.0))


def nearest_segment_brute_force(lat, lon, segments) -> tuple[str, float]:
    """Exhaustive nearest segment over all polyline edges; ties to smaller id."""
    best = (math.inf, None)
    for seg in sorted(segments, key=lambda s: s.segment_id):
        poly = seg.polyline
        d = min(
            chord_point_segment_m(lat, lon, poly[i], poly[i + 1])
            for i in range(len(poly) - 1)
        )
        if d < best[0]:
            best = (d, seg.segment_id)
    return best[1], best[0]


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected partition agreement from the contingency table."""
    a_vals = {v: i for i, v in enumerate(sorted(set(labels_a), key=str))}
    b_vals = {v: i for i, v in enumerate(sorted(set(labels_b), key=str))}
    table = np.zeros((len(a_vals), len(b_vals)), dtype=int)
    for x, y in zip(labels_a, labels_b, strict=True):
        table[a_vals[x], b_vals[y]] += 1
    n = table.sum()
    index = sum(comb(int(nij), 2) for nij in table.flat)
    rows = sum(comb(int(r), 2) for r in table.sum(axis=1))
    cols = sum(comb(int(c), 2) for c in table.sum(axis=0))
    expected = rows * cols / comb(int(n), 2)
    max_index = (rows + cols) / 2.0
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def spearman_rho(x, y) -> float:
    """Rank correlation with midranks for ties."""

    def midranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="stable")
        ranks = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            ranks[order[i : j + 1]] = (i + j) / 2.0
            i = j + 1
        return ranks

    rx = midranks(x)
    ry = midranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(rx @ ry) / denom if denom else 0.0


def exhaustive_kmeans_oracle(X: np.ndarray, k: int):
    """Optimal WSS by enumerating every assignment of n points to k groups."""
    n = len(X)
    best = np.inf
    best_assign = None
    for assign in itertools.product(range(k), repeat=n):
        assign = np.asarray(assign)
        if len(set(assign.tolist())) < k:
            continue
        wss = 0.0
        for j in range(k):
            pts = X[assign == j]
            wss += float(np.sum((pts - pts.mean(axis=0)) ** 2))
        if wss < best:
            best = wss
            best_assign = assign
    return best_assign, best
