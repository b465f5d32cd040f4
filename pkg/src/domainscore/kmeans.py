"""Deterministic k-means with optional triangle-inequality acceleration.

Both paths run the same Lloyd iteration: assign every point to its nearest
center (ties to the lowest index), recompute centers as (mass-weighted)
means, stop when no assignment changes or after ``max_iter`` rounds.  The
accelerated path maintains Elkan-style upper/lower distance bounds to skip
provably redundant distance computations; it must produce the same
assignments and centers as the plain sweep from the same initialization.

Determinism notes: distances are computed per-center with ``np.einsum``
over explicit differences (no BLAS matmul), so results do not depend on
BLAS thread count.  All randomness flows through a ``numpy`` Generator
seeded by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class KMeansResult:
    centers: np.ndarray  # (k, d); k can be smaller than requested
    labels: np.ndarray  # (n,) indices into centers
    inertia: float  # sum of squared distances to assigned centers
    n_iter: int
    inertia_history: tuple[float, ...] = ()  # filled by the plain path only


def _distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """True Euclidean distances, (n_points, n_centers)."""
    out = np.empty((points.shape[0], centers.shape[0]))
    for j in range(centers.shape[0]):
        diff = points - centers[j]
        out[:, j] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


def _distance_to(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = points - center
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _sq_distance_to(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = points - center
    return np.einsum("ij,ij->i", diff, diff)


def _inertia(points, centers, labels, weights=None) -> float:
    total = 0.0
    for j in range(centers.shape[0]):
        mask = labels == j
        if not mask.any():
            continue
        sq = _sq_distance_to(points[mask], centers[j])
        if weights is not None:
            sq = sq * weights[mask]
        total += float(sq.sum())
    return total


def _update_centers(points, weights, labels, centers) -> np.ndarray:
    """Mean (mass-weighted mean) per cluster; empty clusters keep position."""
    new = centers.copy()
    for j in range(centers.shape[0]):
        mask = labels == j
        if not mask.any():
            continue
        if weights is None:
            new[j] = points[mask].mean(axis=0)
        else:
            w = weights[mask]
            new[j] = (points[mask] * w[:, None]).sum(axis=0) / w.sum()
    return new


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator, weights=None) -> np.ndarray:
    """D^2-sampling initialization.

    Stops early when every remaining point coincides with a chosen center,
    so the returned array can hold fewer than ``k`` rows.
    """
    n = points.shape[0]
    mass = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    probs = mass / mass.sum()
    first = int(rng.choice(n, p=probs))
    centers = [points[first]]
    d2 = _sq_distance_to(points, points[first])
    while len(centers) < k:
        scores = mass * d2
        total = scores.sum()
        if total <= 0.0:
            break
        idx = int(rng.choice(n, p=scores / total))
        centers.append(points[idx])
        d2 = np.minimum(d2, _sq_distance_to(points, points[idx]))
    return np.array(centers)


def _lloyd_plain(points, centers, weights, max_iter) -> KMeansResult:
    dist = _distances(points, centers)
    labels = dist.argmin(axis=1)
    history = [_history_entry(dist, labels, weights)]
    n_iter = 0
    for it in range(1, max_iter + 1):
        n_iter = it
        centers = _update_centers(points, weights, labels, centers)
        dist = _distances(points, centers)
        new_labels = dist.argmin(axis=1)
        history.append(_history_entry(dist, new_labels, weights))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = _inertia(points, centers, labels, weights)
    return KMeansResult(centers, labels, inertia, n_iter, tuple(history))


def _history_entry(dist, labels, weights) -> float:
    chosen = dist[np.arange(dist.shape[0]), labels]
    sq = chosen * chosen
    if weights is not None:
        sq = sq * weights
    return float(sq.sum())


def _lloyd_accelerated(points, centers, weights, max_iter) -> KMeansResult:
    n = points.shape[0]
    k = centers.shape[0]
    dist = _distances(points, centers)
    labels = dist.argmin(axis=1)
    upper = dist[np.arange(n), labels]
    lower = dist
    n_iter = 0
    for it in range(1, max_iter + 1):
        n_iter = it
        new_centers = _update_centers(points, weights, labels, centers)
        shift = np.sqrt(np.einsum("ij,ij->i", new_centers - centers, new_centers - centers))
        upper = upper + shift[labels]
        lower = np.maximum(lower - shift[None, :], 0.0)
        centers = new_centers

        cc = _distances(centers, centers)
        np.fill_diagonal(cc, np.inf)
        half_nearest = 0.5 * cc.min(axis=1)

        old_labels = labels.copy()
        active = np.where(upper > half_nearest[labels])[0]
        if active.size:
            # tighten the upper bound to the exact distance once per point
            exact = np.empty(active.size)
            for j in np.unique(labels[active]):
                sel = labels[active] == j
                exact[sel] = _distance_to(points[active[sel]], centers[j])
            upper[active] = exact
            lower[active, labels[active]] = exact
            for j in range(k):
                lab = labels[active]
                cand = (lab != j) & (upper[active] > lower[active, j]) & (
                    upper[active] > 0.5 * cc[lab, j]
                )
                if not cand.any():
                    continue
                sub = active[cand]
                dj = _distance_to(points[sub], centers[j])
                lower[sub, j] = dj
                better = dj < upper[sub]
                if better.any():
                    moved = sub[better]
                    labels[moved] = j
                    upper[moved] = dj[better]
        if np.array_equal(labels, old_labels):
            break
    inertia = _inertia(points, centers, labels, weights)
    return KMeansResult(centers, labels, inertia, n_iter)


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    *,
    weights: np.ndarray | None = None,
    init: np.ndarray | None = None,
    accelerated: bool = True,
    max_iter: int = 100,
) -> KMeansResult:
    """Cluster ``points`` into at most ``k`` groups.

    ``init`` overrides k-means++ seeding (used for warm starts and for
    acceleration-equivalence checks).  With ``weights`` given, centers are
    mass-weighted means and inertia is mass-weighted.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if points.shape[0] < 1:
        raise ValueError("at least one point is required")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (points.shape[0],):
            raise ValueError("weights must align with points")
        if (weights < 0).any() or weights.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive total")
    if init is None:
        rng = np.random.default_rng(seed)
        init = kmeans_plusplus(points, k, rng, weights=weights)
    else:
        init = np.asarray(init, dtype=float)
    runner = _lloyd_accelerated if accelerated else _lloyd_plain
    return runner(points, init.copy(), weights, max_iter)
