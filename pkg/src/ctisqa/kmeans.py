"""Global stream: K-means over patch features and centroid averaging.

Lloyd iterations start from greedy k-means++ seeding (or explicit centroids)
and stop once the largest centroid move is within ``tol``. Seeded runs are
then polished with Hartigan single-point transfers followed by a final Lloyd
pass; explicit-init runs are plain Lloyd. The best of ``n_restarts`` seeded
runs is kept. The slide-level vector is the plain mean of the K centroids.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EmptyInput, TooFewPoints
from .features import PatchFeatureMatrix, read_matrix, write_matrix


@dataclass(frozen=True)
class ClusterConfig:
    n_clusters: int = 16
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    n_restarts: int = 4
    refine: bool = True

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if not self.tol >= 0:
            raise ValueError("tol must be >= 0")


@dataclass
class ClusteringResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    # objective after each assignment step, initial assignment included
    inertia_history: list = field(default_factory=list)
    restart: int = 0

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


@dataclass
class GlobalRepresentation:
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def _points(x) -> np.ndarray:
    data = x.data if isinstance(x, PatchFeatureMatrix) else np.asarray(x)
    if data.ndim != 2:
        raise DimensionMismatch(f"points must be 2-D, got shape {data.shape}")
    if data.dtype not in (np.float32, np.float64):
        data = data.astype(np.float64)
    return np.ascontiguousarray(data)


def assign(points, centroids) -> np.ndarray:
    """Index of the nearest centroid per row; ties go to the lowest index."""
    points = _points(points)
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[1] != points.shape[1]:
        raise DimensionMismatch(
            f"points have d={points.shape[1]}, centroids have shape {centroids.shape}")
    return _kernels.assign_nearest(points, centroids)[0]


def inertia_of(points, centroids, assignments) -> float:
    """Sum of squared distances from each point to its assigned centroid."""
    points = np.asarray(_points(points), dtype=np.float64)
    diff = points - np.asarray(centroids, dtype=np.float64)[np.asarray(assignments)]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans_plusplus(x, k, rng, n_trials=None, xx=None) -> np.ndarray:
    """Greedy k-means++ seeding.

    Each new center is the best of ``n_trials`` D^2-sampled candidates
    (default ``2 + floor(ln k)``), judged by the resulting potential.
    """
    n = x.shape[0]
    if n_trials is None:
        n_trials = 2 + int(np.log(k))
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    mind = _kernels.sq_dist_to_point(x, centers[0])
    batched = _kernels.use_gemm(n, n_trials, x.shape[1])
    for j in range(1, k):
        cum = np.cumsum(mind)
        total = cum[-1]
        if total > 0:
            picks = np.searchsorted(cum, rng.random(n_trials) * total, side="right")
            picks = np.minimum(picks, n - 1)
        else:
            # every point already coincides with a center
            picks = rng.integers(n, size=n_trials)
        best_pot, best_idx, best_d = np.inf, -1, None
        dists = _kernels.sq_dists_gemm(x, x[picks], xx) if batched else None
        for t, idx in enumerate(picks):
            dt = dists[:, t] if batched else _kernels.sq_dist_to_point(x, x[idx])
            cand = np.minimum(mind, dt)
            pot = cand.sum()
            if pot < best_pot:
                best_pot, best_idx, best_d = pot, int(idx), cand
        centers[j] = x[best_idx]
        mind = best_d
    return centers


def _update(x, labels, k, old):
    sums, counts = _kernels.cluster_sums(x, labels, k)
    centroids = old.copy()
    filled = counts > 0
    centroids[filled] = sums[filled] / counts[filled, None]
    for j in np.flatnonzero(~filled):
        # move the worst-fitting point of the largest cluster into the empty one
        big = int(np.argmax(counts))
        if counts[big] < 2:
            continue
        members = np.flatnonzero(labels == big)
        diff = x[members].astype(np.float64) - centroids[big]
        far = members[int(np.argmax(np.einsum("ij,ij->i", diff, diff)))]
        labels[far] = j
        counts[big] -= 1
        counts[j] = 1
        sums[big] -= x[far]
        centroids[big] = sums[big] / counts[big]
        centroids[j] = x[far]
    return centroids


def lloyd(x, init, max_iters=100, tol=1e-6, xx=None) -> ClusteringResult:
    """Run Lloyd iterations from explicit starting centroids."""
    centroids = np.array(init, dtype=np.float64)
    k = centroids.shape[0]
    labels, mind = _kernels.assign_nearest(x, centroids, xx)
    history = [float(mind.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        new = _update(x, labels, k, centroids)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        labels, mind = _kernels.assign_nearest(x, centroids, xx)
        history.append(float(mind.sum()))
        if shift <= tol:
            break
    return ClusteringResult(centroids=centroids, assignments=labels, inertia=history[-1],
                            iterations=it, inertia_history=history)


def hartigan_refine(x, result: ClusteringResult, max_passes=100, xx=None) -> ClusteringResult:
    """Single-point transfer polish, then Lloyd to recompute exact means.

    Never increases the objective; a transfer-stable partition is also a
    Lloyd fixed point, so the closing Lloyd run usually takes one step.
    """
    labels = result.assignments.copy()
    k = result.centroids.shape[0]
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    centroids = result.centroids.copy()
    passes = 0
    for passes in range(1, max_passes + 1):
        if _kernels.hartigan_pass(x, labels, centroids, counts, 1e-12, xx) == 0:
            break
    if passes == 1:
        return result
    polished = lloyd(x, centroids, max_iters=100, tol=0.0, xx=xx)
    polished.iterations += result.iterations
    polished.inertia_history = result.inertia_history + polished.inertia_history
    return polished


def kmeans_fit(x, cfg: ClusterConfig | None = None, init=None) -> ClusteringResult:
    """Cluster patch features; returns the lowest-inertia restart."""
    cfg = cfg or ClusterConfig()
    pts = _points(x)
    n, d = pts.shape
    if n == 0:
        raise EmptyInput("cannot cluster an empty feature matrix")
    if init is not None:
        init = np.asarray(init, dtype=np.float64)
        if init.ndim != 2 or init.shape[1] != d:
            raise DimensionMismatch(f"init has shape {init.shape}, data has d={d}")
        if not np.isfinite(init).all():
            raise ValueError("explicit init centroids must be finite")
        return lloyd(pts, init, cfg.max_iters, cfg.tol)
    k = cfg.n_clusters
    if n < k:
        raise TooFewPoints(f"{n} points cannot form {k} clusters")
    if _kernels.use_gemm(n, k, d) and pts.dtype != np.float64:
        # one float64 copy up front instead of one per BLAS call
        pts = pts.astype(np.float64)
    xx = _kernels.row_norms(pts) if _kernels.use_gemm(n, k, d) else None

    best = None
    for r, ss in enumerate(np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts)):
        rng = np.random.default_rng(ss)
        res = lloyd(pts, kmeans_plusplus(pts, k, rng, xx=xx), cfg.max_iters, cfg.tol, xx)
        if cfg.refine and k > 1:
            res = hartigan_refine(pts, res, xx=xx)
        res.restart = r
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def global_representation(r: ClusteringResult) -> GlobalRepresentation:
    return GlobalRepresentation(vector=np.asarray(r.centroids, dtype=np.float64).mean(axis=0))


def save_clustering(result: ClusteringResult, path, cfg: ClusterConfig | None = None) -> int:
    """Centroids go to a container at ``path``; the rest to ``path + '.json'``."""
    checksum = write_matrix(path, result.centroids, label="centroids", float64=True)
    sidecar = {
        "assignments": [int(a) for a in result.assignments],
        "inertia": result.inertia,
        "iterations": result.iterations,
        "inertia_history": result.inertia_history,
        "restart": result.restart,
        "config": asdict(cfg) if cfg is not None else None,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar) + "\n", encoding="utf-8")
    return checksum


def load_clustering(path) -> ClusteringResult:
    centroids, _, _ = read_matrix(path)
    side = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    return ClusteringResult(
        centroids=centroids,
        assignments=np.asarray(side["assignments"], dtype=np.int64),
        inertia=float(side["inertia"]),
        iterations=int(side["iterations"]),
        inertia_history=list(side.get("inertia_history", [])),
        restart=int(side.get("restart", 0)),
    )
