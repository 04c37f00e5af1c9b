"""K-means over embedded frames, per-cluster diagonal Gaussians and temporal ordering."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Dataset

VARIANCE_FLOOR = 1e-6
TCLM_MAGIC = b"TCLM1"
_CHUNK = 4096


class EmptyClusterError(ValueError):
    pass


def sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(N, K)``."""
    out = np.empty((points.shape[0], centers.shape[0]))
    for start in range(0, points.shape[0], _CHUNK):
        diff = points[start:start + _CHUNK, None, :] - centers[None, :, :]
        out[start:start + _CHUNK] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _kmeans_pp(points, K, rng):
    n = points.shape[0]
    centers = np.empty((K, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = sq_distances(points, centers[:1])[:, 0]
    for k in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[k] = points[idx]
        closest = np.minimum(closest, sq_distances(points, centers[k:k + 1])[:, 0])
    return centers


def _assign(points, centers):
    d2 = sq_distances(points, centers)
    a = np.argmin(d2, axis=1)
    return a, d2[np.arange(len(a)), a]


def _update(points, assign, dist, centers):
    """Centroid step; an empty cluster takes over the point farthest from its center."""
    K = centers.shape[0]
    new = centers.copy()
    counts = np.bincount(assign, minlength=K)
    for k in np.flatnonzero(counts):
        new[k] = points[assign == k].mean(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        taken = set()
        order = np.argsort(-dist, kind="stable")
        it = iter(order)
        for k in empty:
            for i in it:
                if counts[assign[i]] > 1 and i not in taken:
                    taken.add(i)
                    counts[assign[i]] -= 1
                    new[k] = points[i]
                    break
    return new


def kmeans(points, K: int, rng_seed: int, max_iter: int = 300, tol: float = 1e-6,
           history: Optional[list] = None):
    """Lloyd's algorithm with k-means++ seeding.

    Parameters
    ----------
    points : ndarray, shape (N, D)
    K : int
        Number of clusters, ``K <= N``.
    rng_seed : int
    history : list, optional
        Receives the objective (sum of squared distances) after every assignment step.

    Returns
    -------
    centers : ndarray, shape (K, D)
    assignments : ndarray of int, shape (N,)
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if K < 1 or n < K:
        raise ValueError(f"k-means needs at least K={K} points, got {n}")
    if not np.all(np.isfinite(points)):
        raise ValueError("points must be finite")
    rng = np.random.default_rng(rng_seed)
    centers = _kmeans_pp(points, K, rng)
    assign, dist = _assign(points, centers)
    obj = math.fsum(dist)
    if history is not None:
        history.append(obj)
    for _ in range(max_iter):
        centers = _update(points, assign, dist, centers)
        assign, dist = _assign(points, centers)
        new_obj = math.fsum(dist)
        if history is not None:
            history.append(new_obj)
        all_used = np.bincount(assign, minlength=K).min() > 0
        converged = obj - new_obj <= tol * obj
        obj = new_obj
        if converged and all_used:
            break
    if np.bincount(assign, minlength=K).min() == 0:
        # degenerate input (duplicated points): hand one point to each empty cluster
        counts = np.bincount(assign, minlength=K)
        for k in np.flatnonzero(counts == 0):
            donors = np.flatnonzero(counts[assign] > 1)
            i = donors[np.argmax(dist[donors])]
            counts[assign[i]] -= 1
            assign[i] = k
            counts[k] = 1
            centers[k] = points[i]
    return centers, assign


def kmeans_objective(points, centers, assignments) -> float:
    diff = points - centers[assignments]
    return math.fsum(np.einsum("nd,nd->n", diff, diff))


# --------------------------------------------------------------------------- Gaussians


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    var: np.ndarray


def fit_gaussians(points, assignments, K: int, floor: float = VARIANCE_FLOOR) -> list[Gaussian]:
    """Per-cluster mean and population variance (diagonal), variance clamped at ``floor``."""
    points = np.asarray(points, dtype=np.float64)
    out = []
    for k in range(K):
        members = points[assignments == k]
        if len(members) == 0:
            raise EmptyClusterError(f"cluster {k} has no members")
        mu = members.mean(axis=0)
        var = np.maximum(((members - mu) ** 2).mean(axis=0), floor)
        out.append(Gaussian(mu, var))
    return out


def log_likelihood(g: Gaussian, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(-0.5 * np.sum((x - g.mean) ** 2 / g.var + np.log(2 * np.pi * g.var)))


def log_likelihood_matrix(points, means, variances) -> np.ndarray:
    """Log-density of every point under every diagonal Gaussian, shape ``(N, K)``."""
    points = np.asarray(points, dtype=np.float64)
    inv = 1.0 / variances                                    # (K, D)
    maha = (points ** 2) @ inv.T - 2 * points @ (means * inv).T + np.sum(means ** 2 * inv, axis=1)
    log_norm = np.sum(np.log(2 * np.pi * variances), axis=1)
    return -0.5 * (np.maximum(maha, 0.0) + log_norm)


def likelihood_assignments(points, means, variances) -> np.ndarray:
    """Hard membership by maximal Gaussian likelihood; ties go to the lowest index."""
    return np.argmax(log_likelihood_matrix(points, means, variances), axis=1)


def order_clusters(assignments, timestamps, K: int):
    """Mean timestamp per cluster and the permutation sorting clusters by it.

    ``order[j]`` is the (0-based) cluster placed at temporal position ``j``.
    """
    assignments = np.asarray(assignments)
    timestamps = np.asarray(timestamps, dtype=np.float64)
    counts = np.bincount(assignments, minlength=K)
    if counts.min() == 0:
        empty = np.flatnonzero(counts == 0).tolist()
        raise EmptyClusterError(
            f"clusters {empty} own no frames under maximum-likelihood membership; try a smaller K"
        )
    time_means = np.bincount(assignments, weights=timestamps, minlength=K) / counts
    order = np.argsort(time_means, kind="stable")
    return time_means, order


def background_count(tau: float, size: int) -> int:
    """``ceil(tau * size)``, robust to products like ``0.3 * 10 = 3.0000000000000004``."""
    return math.ceil(round(tau * size, 9))


def mark_background(points, centers, assignments, tau: float) -> np.ndarray:
    """Flag the ``ceil(tau * |cluster|)`` members farthest from each cluster's center."""
    if not 0 <= tau < 1:
        raise ValueError("tau must lie in [0, 1)")
    points = np.asarray(points, dtype=np.float64)
    assignments = np.asarray(assignments)
    mask = np.zeros(len(points), dtype=bool)
    if tau == 0:
        return mask
    dist = np.linalg.norm(points - centers[assignments], axis=1)
    for k in range(centers.shape[0]):
        idx = np.flatnonzero(assignments == k)
        n_bg = background_count(tau, len(idx))
        if n_bg == 0:
            continue
        # farthest first; among equal distances the later frame goes first
        ranked = idx[np.lexsort((-idx, -dist[idx]))]
        mask[ranked[:n_bg]] = True
    return mask


# --------------------------------------------------------------------------- model


@dataclass
class ClusterModel:
    centers: np.ndarray       # (K, D) k-means centers
    means: np.ndarray         # (K, D) Gaussian means
    variances: np.ndarray     # (K, D) diagonal variances
    time_means: np.ndarray    # (K,)
    order: np.ndarray         # (K,) cluster index at each temporal position
    bg_radius: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def gaussians(self) -> list[Gaussian]:
        return [Gaussian(m, v) for m, v in zip(self.means, self.variances)]

    def ordered_log_likelihoods(self, points, order=None) -> np.ndarray:
        """Emission matrix: column ``j`` scores the cluster at temporal position ``j``."""
        order = self.order if order is None else np.asarray(order)
        return log_likelihood_matrix(points, self.means[order], self.variances[order])

    def background_mask(self, points) -> np.ndarray:
        """Frames lying beyond the kept radius of their nearest k-means center."""
        if self.bg_radius is None:
            return np.zeros(len(points), dtype=bool)
        points = np.asarray(points, dtype=np.float64)
        a, _ = _assign(points, self.centers)
        # same distance formula as the radii, so training frames reproduce their marks
        return np.linalg.norm(points - self.centers[a], axis=1) > self.bg_radius[a]


def build_cluster_model(embedded: Dataset, K: int, tau: float, rng_seed: int,
                        refit_after_background: bool = False) -> ClusterModel:
    """k-means, Gaussian fit, likelihood reassignment, temporal ordering and background radii."""
    X = embedded.all_frames()
    ts = embedded.all_timestamps()
    centers, assign = kmeans(X, K, rng_seed)
    bg = mark_background(X, centers, assign, tau)
    if refit_after_background and tau > 0:
        gaussians = fit_gaussians(X[~bg], assign[~bg], K)
    else:
        gaussians = fit_gaussians(X, assign, K)
    means = np.array([g.mean for g in gaussians])
    variances = np.array([g.var for g in gaussians])
    ml_assign = likelihood_assignments(X, means, variances)
    time_means, order = order_clusters(ml_assign, ts, K)
    bg_radius = None
    if tau > 0:
        dist = np.linalg.norm(X - centers[assign], axis=1)
        bg_radius = np.zeros(K)
        for k in range(K):
            kept = dist[(assign == k) & ~bg]
            bg_radius[k] = kept.max() if kept.size else 0.0
    return ClusterModel(centers, means, variances, time_means, order, bg_radius)


def save_cluster_model(model: ClusterModel, path) -> None:
    has_bg = model.bg_radius is not None
    parts = [TCLM_MAGIC, struct.pack("<III", model.K, model.dim, int(has_bg))]
    for arr in (model.centers, model.means, model.variances, model.time_means):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(model.order, dtype="<u4").tobytes())
    if has_bg:
        parts.append(np.ascontiguousarray(model.bg_radius, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_cluster_model(path) -> ClusterModel:
    raw = Path(path).read_bytes()
    if raw[:5] != TCLM_MAGIC:
        raise ValueError(f"{path}: not a cluster checkpoint")
    K, D, has_bg = struct.unpack("<III", raw[5:17])
    offset = 17

    def take(count, dtype):
        nonlocal offset
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).copy()
        offset += arr.itemsize * count
        return arr

    centers = take(K * D, "<f8").reshape(K, D)
    means = take(K * D, "<f8").reshape(K, D)
    variances = take(K * D, "<f8").reshape(K, D)
    time_means = take(K, "<f8")
    order = take(K, "<u4").astype(np.int64)
    bg_radius = take(K, "<f8") if has_bg else None
    return ClusterModel(centers, means, variances, time_means, order, bg_radius)
