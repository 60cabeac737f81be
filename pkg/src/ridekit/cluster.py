"""k-means clustering with multi-restart Lloyd iterations and elbow selection.

Everything here is deterministic for a fixed seed: each restart draws its
initialization from an independent substream keyed by the restart index,
so the best-of-restarts result does not depend on execution order, and
cluster labels are canonicalized (descending size, then centroid order)
so reports are stable across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import RidekitError


class ClusterError(RidekitError):
    pass


class TooFewRows(ClusterError):
    pass


class CurveTooShort(ClusterError):
    pass


def zscore_columns(X: np.ndarray):
    """Standardize columns; drop those with (population) std below 1e-12.

    Returns (standardized matrix, kept column indices, means, stds). Means
    and stds are reported for the kept columns only.
    """
    X = np.asarray(X, dtype=float)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    kept = np.flatnonzero(stds >= 1e-12)
    Xs = (X[:, kept] - means[kept]) / stds[kept]
    return Xs, kept, means[kept], stds[kept]


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    wss: float
    seed: int
    restarts: int
    n_iter: int
    wss_history: list[float] = field(default_factory=list)
    row_ids: list[str] | None = None


@dataclass
class WssCurve:
    ks: list[int]
    wss: list[float]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ClusterError("k values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.ks)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances, clipped against negative roundoff
    d = (
        np.sum(X * X, axis=1)[:, None]
        - 2.0 * X @ C.T
        + np.sum(C * C, axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    idx = int(rng.integers(n))
    centroids = [X[idx]]
    d2 = np.sum((X - X[idx]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.asarray(centroids)


def _lloyd(X: np.ndarray, C: np.ndarray, max_iter: int, tol: float):
    history: list[float] = []
    assign = None
    for it in range(max_iter):
        d = _sq_dists(X, C)
        assign = np.argmin(d, axis=1)
        own = d[np.arange(len(X)), assign]

        # Re-seed empty clusters with the point currently farthest from its
        # centroid; this strictly lowers that point's cost, preserving the
        # monotone objective.
        for e in range(len(C)):
            if not np.any(assign == e):
                far = int(np.argmax(own))
                C[e] = X[far]
                assign[far] = e
                own[far] = 0.0

        wss = float(own.sum())
        if history and wss > history[-1] * (1 + 1e-9) + 1e-12:
            raise ClusterError("objective increased during Lloyd iteration")
        history.append(wss)

        new_C = np.empty_like(C)
        for j in range(len(C)):
            new_C[j] = X[assign == j].mean(axis=0)
        shift = float(np.max(np.sqrt(np.sum((new_C - C) ** 2, axis=1))))
        C = new_C
        if shift < tol:
            break
    d = _sq_dists(X, C)
    assign = np.argmin(d, axis=1)
    wss = float(d[np.arange(len(X)), assign].sum())
    if not history or wss <= history[-1] * (1 + 1e-9) + 1e-12:
        history.append(wss)
    return C, assign, wss, history


def _canonicalize(C: np.ndarray, assign: np.ndarray):
    sizes = np.bincount(assign, minlength=len(C))
    order = sorted(range(len(C)), key=lambda j: (-sizes[j], tuple(C[j])))
    relabel = np.empty(len(C), dtype=int)
    for new, old in enumerate(order):
        relabel[old] = new
    return C[order], relabel[assign]


def kmeans(
    X,
    k: int,
    restarts: int = 20,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    row_ids: list[str] | None = None,
) -> ClusterModel:
    """Best-of-restarts Lloyd with k-means++ initialization.

    Deterministic for fixed (X, k, restarts, seed): restart r draws from a
    substream spawned as (seed, r), so results are identical however the
    restarts are scheduled. Assignment ties go to the lowest centroid
    index; the best restart on a WSS tie is the lowest restart index.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ClusterError("X must be 2-dimensional")
    if k < 1 or len(X) < k:
        raise TooFewRows(f"need at least k={k} rows, have {len(X)}")

    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
        C0 = _kmeans_pp_init(X, k, rng)
        C, assign, wss, history = _lloyd(X, C0.copy(), max_iter, tol)
        if best is None or wss < best[2]:
            best = (C, assign, wss, history)

    C, assign, wss, history = best
    C, assign = _canonicalize(C.copy(), assign)
    return ClusterModel(
        k=k,
        centroids=C,
        assignments=assign,
        wss=wss,
        seed=seed,
        restarts=restarts,
        n_iter=len(history),
        wss_history=history,
        row_ids=list(row_ids) if row_ids is not None else None,
    )


def wss_curve(X, k_range=None, restarts: int = 20, seed: int = 0) -> WssCurve:
    """Best WSS per k over the given range (default 1..10)."""
    ks = sorted(k_range) if k_range is not None else list(range(1, 11))
    out = [kmeans(X, k, restarts=restarts, seed=seed).wss for k in ks]
    return WssCurve(ks=ks, wss=out)


def select_k(curve: WssCurve) -> int:
    """Elbow pick: the interior k with the largest second difference.

    Ties break toward smaller k. The curve needs at least 3 entries.
    """
    if len(curve) < 3:
        raise CurveTooShort("elbow selection needs at least 3 curve points")
    best_k = None
    best_curv = -np.inf
    for i in range(1, len(curve) - 1):
        curv = curve.wss[i - 1] - 2.0 * curve.wss[i] + curve.wss[i + 1]
        if curv > best_curv:
            best_curv = curv
            best_k = curve.ks[i]
    return best_k


CLUSTER_LABELS = (
    "conformer",
    "slow-cautious",
    "aggressive-longitudinal",
    "sharp-turner",
    "other",
)

_LONGITUDINAL_FEATURES = (
    "hard_accel_rate",
    "hard_brake_rate",
    "mean_abs_jerk",
    "mean_abs_lon_accel",
)


def _label_cluster(z: dict[str, float]) -> str:
    if not z:
        return "conformer"
    top = max(z, key=lambda f: z[f])
    if top == "sharp_turn_rate" and z[top] > 1.0:
        return "sharp-turner"
    # slow drivers are judged on speed before event rates; heavy braking is
    # part of the slow-cautious signature, not aggression
    if z.get("mean_speed_ratio", 0.0) < -0.4:
        return "slow-cautious"
    top_abs = max(z, key=lambda f: abs(z[f]))
    if top_abs in _LONGITUDINAL_FEATURES and z[top_abs] > 1.0:
        return "aggressive-longitudinal"
    if all(abs(v) <= 0.5 for v in z.values()):
        return "conformer"
    return "other"


@dataclass
class ClusterSummary:
    cluster: int
    size: int
    label: str
    raw_means: dict[str, float]
    z_offsets: dict[str, float]


@dataclass
class ClusterReport:
    clusters: list[ClusterSummary]

    def to_csv(self, path) -> None:
        import csv

        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cluster", "label", "size", "feature", "raw_mean", "z_offset"])
            for c in self.clusters:
                for feature in c.raw_means:
                    writer.writerow(
                        [
                            c.cluster, c.label, c.size, feature,
                            repr(c.raw_means[feature]), repr(c.z_offsets[feature]),
                        ]
                    )


def characterize_clusters(model: ClusterModel, matrix) -> ClusterReport:
    """Per-cluster sizes, raw feature means, and z-offsets with an auto label.

    `matrix` is a features.FeatureMatrix; z-offsets are cluster means of
    the standardized columns (population mean 0, std 1), and the labeling
    rules are fixed so planted behavior archetypes come out by name.
    """
    summaries = []
    for j in range(model.k):
        members = np.flatnonzero(model.assignments == j)
        z = {
            name: float(matrix.X[members, idx].mean()) if len(members) else 0.0
            for idx, name in enumerate(matrix.column_names)
        }
        raw = {
            name: float(matrix.raw[members, idx].mean()) if len(members) else 0.0
            for idx, name in enumerate(matrix.all_column_names)
        }
        label = "conformer" if model.k == 1 else _label_cluster(z)
        # constant columns were dropped from the standardized matrix; their
        # offset from the population is zero by definition
        z_full = {name: z.get(name, 0.0) for name in matrix.all_column_names}
        summaries.append(
            ClusterSummary(
                cluster=j, size=len(members), label=label, raw_means=raw, z_offsets=z_full
            )
        )
    return ClusterReport(clusters=summaries)


def export_model_json(
    model: ClusterModel,
    curve: WssCurve | None,
    column_names,
    dropped_columns,
    path=None,
) -> str:
    payload = {
        "k": model.k,
        "seed": model.seed,
        "restarts": model.restarts,
        "wss": model.wss,
        "centroids": [[float(v) for v in row] for row in model.centroids],
        "column_names": list(column_names),
        "dropped_columns": list(dropped_columns),
        "assignments": {
            (model.row_ids[i] if model.row_ids else str(i)): int(a)
            for i, a in enumerate(model.assignments)
        },
        "wss_curve": None if curve is None else {"k": curve.ks, "wss": curve.wss},
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    if path is not None:
        Path(path).write_text(text)
    return text
