"""Color signatures: per-image k-means summaries and dataset aggregation.

A signature compresses a pixel-color distribution into a handful of RGB
centroids with normalized weights.  Per-image signatures come straight
from k-means over the pixels; the dataset signature re-clusters the pooled
per-image centroids, with each centroid's per-image weight acting as its
point mass.  Signatures of unequal sizes are fine: empty clusters are
dropped, never re-seeded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kmeans import kmeans, KMeansResult
from .manifest import DatasetManifest, load_pixels, manifest_content_hash
from .util import stable_seed

DEFAULT_MAX_PIXELS = 1 << 18
DEFAULT_K_MAX = 16
DEFAULT_DROP_THRESHOLD = 0.05
DEFAULT_SAMPLE_SIZE = 64

_WEIGHT_SUM_TOL = 1e-9


def _validate_signature(centroids: np.ndarray, weights: np.ndarray):
    if centroids.ndim != 2 or centroids.shape[1] != 3:
        raise ValueError("centroids must be (k, 3)")
    if centroids.shape[0] < 1:
        raise ValueError("a signature needs at least one centroid")
    if weights.shape != (centroids.shape[0],):
        raise ValueError("weights must align with centroids")
    if (weights < 0).any():
        raise ValueError("weights must be nonnegative")
    if abs(float(weights.sum()) - 1.0) > _WEIGHT_SUM_TOL:
        raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")


@dataclass(frozen=True, eq=False)
class ImageSignature:
    """K color centroids plus the fraction of pixels each one covers."""

    centroids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centroids", np.asarray(self.centroids, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        _validate_signature(self.centroids, self.weights)


@dataclass(frozen=True)
class SignatureProvenance:
    dataset_id: str
    content_hash: str
    k: int
    seed: int


@dataclass(frozen=True, eq=False)
class DatasetSignature:
    centroids: np.ndarray
    weights: np.ndarray
    provenance: SignatureProvenance | None = None

    def __post_init__(self):
        object.__setattr__(self, "centroids", np.asarray(self.centroids, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        _validate_signature(self.centroids, self.weights)


@dataclass(frozen=True)
class KSelectionReport:
    candidates: tuple[int, ...]
    rss_values: tuple[float, ...]  # mean RSS over the sample, per candidate K
    chosen_k: int
    sample_ids: tuple[str, ...]


def _flatten_pixels(pixels) -> np.ndarray:
    arr = np.asarray(pixels, dtype=float)
    if arr.ndim == 3 and arr.shape[2] == 3:
        arr = arr.reshape(-1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("pixels must be (H, W, 3) or (N, 3)")
    if arr.shape[0] < 1:
        raise ValueError("empty pixel block")
    return arr


def subsample_pixels(flat: np.ndarray, max_pixels: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subsample without replacement; indices sorted for determinism."""
    if max_pixels is None or flat.shape[0] <= max_pixels:
        return flat
    idx = np.sort(rng.choice(flat.shape[0], size=max_pixels, replace=False))
    return flat[idx]


def _dedupe(centroids: np.ndarray, weights: np.ndarray):
    """Merge bit-identical centroids, summing their weights."""
    keep_idx: list[int] = []
    merged: dict[bytes, int] = {}
    weights = weights.copy()
    for i in range(centroids.shape[0]):
        key = centroids[i].tobytes()
        if key in merged:
            weights[merged[key]] += weights[i]
        else:
            merged[key] = i
            keep_idx.append(i)
    return centroids[keep_idx], weights[keep_idx]


def _result_to_signature(res: KMeansResult, mass: np.ndarray | None):
    if mass is None:
        cluster_mass = np.bincount(res.labels, minlength=res.centers.shape[0]).astype(float)
    else:
        cluster_mass = np.bincount(res.labels, weights=mass, minlength=res.centers.shape[0])
    keep = cluster_mass > 0
    centroids = res.centers[keep]
    weights = cluster_mass[keep] / cluster_mass[keep].sum()
    return _dedupe(centroids, weights)


def image_kmeans(pixels, k: int, seed: int, *, accelerated: bool = True, max_iter: int = 100) -> ImageSignature:
    """Cluster an image's pixels into a signature.

    Deterministic for a given (pixels, k, seed); the accelerated path is
    assignment-identical to the plain Lloyd sweep.
    """
    flat = _flatten_pixels(pixels)
    res = kmeans(flat, k, seed=seed, accelerated=accelerated, max_iter=max_iter)
    centroids, weights = _result_to_signature(res, None)
    return ImageSignature(centroids, weights)


def rss(pixels, signature: ImageSignature | DatasetSignature) -> float:
    """Residual sum of squares of pixels against their nearest centroid."""
    flat = _flatten_pixels(pixels)
    best = None
    for centroid in signature.centroids:
        diff = flat - centroid
        sq = np.einsum("ij,ij->i", diff, diff)
        best = sq if best is None else np.minimum(best, sq)
    return float(best.sum())


def dataset_signature(
    signatures: list[ImageSignature],
    k: int,
    seed: int,
    *,
    accelerated: bool = True,
    provenance: SignatureProvenance | None = None,
) -> DatasetSignature:
    """Aggregate per-image signatures into one dataset signature.

    Runs weighted k-means over the pooled centroids (per-image weights as
    point masses); cluster weights are total member mass, normalized to 1.
    """
    if not signatures:
        raise ValueError("at least one image signature is required")
    points = np.vstack([sig.centroids for sig in signatures])
    mass = np.concatenate([sig.weights for sig in signatures])
    res = kmeans(points, k, seed=seed, weights=mass, accelerated=accelerated)
    centroids, weights = _result_to_signature(res, mass)
    return DatasetSignature(centroids, weights, provenance=provenance)


def _greedy_extra_center(points, mass, centers) -> np.ndarray | None:
    """Farthest remaining point, for warm-starting K from the K-1 solution."""
    d2 = None
    for c in centers:
        diff = points - c
        sq = np.einsum("ij,ij->i", diff, diff)
        d2 = sq if d2 is None else np.minimum(d2, sq)
    scores = d2 if mass is None else d2 * mass
    best = int(scores.argmax())
    if scores[best] <= 0.0:
        return None
    return points[best]


def select_k(
    sample: list,
    k_range: tuple[int, int],
    drop_threshold: float,
    seed: int,
    sample_ids: tuple[str, ...] | None = None,
) -> KSelectionReport:
    """Pick K by the elbow of the sample-averaged RSS curve.

    For each image the RSS at K is the best of a fresh k-means++ run and a
    warm start from the image's K-1 clustering (previous centers plus the
    farthest point); the K-1 clustering itself is a valid fallback with an
    empty extra cluster, which makes RSS(K) non-increasing by construction.
    The chosen K is the last one whose RSS improvement over its predecessor
    still reaches ``drop_threshold``; if every step improves enough, K is
    ``k_max``.
    """
    if not sample:
        raise ValueError("sample must not be empty")
    k_min, k_max = k_range
    if k_min < 1 or k_max < k_min:
        raise ValueError(f"invalid K range: {k_min}..{k_max}")
    flats = [_flatten_pixels(p) for p in sample]
    candidates = tuple(range(k_min, k_max + 1))

    per_image_rss = np.empty((len(flats), len(candidates)))
    prev_state: list[tuple[np.ndarray, float] | None] = [None] * len(flats)
    for col, k in enumerate(candidates):
        for row, flat in enumerate(flats):
            runs = [kmeans(flat, k, seed=stable_seed(seed, "selectk", row, k))]
            if prev_state[row] is not None:
                prev_centers, prev_rss = prev_state[row]
                extra = _greedy_extra_center(flat, None, prev_centers)
                if extra is not None:
                    init = np.vstack([prev_centers, extra])
                    runs.append(kmeans(flat, k, init=init))
            best = min(runs, key=lambda r: r.inertia)
            if prev_state[row] is not None and prev_state[row][1] < best.inertia:
                # keep the K-1 clustering (one empty extra cluster); RSS identical
                per_image_rss[row, col] = prev_state[row][1]
            else:
                prev_state[row] = (best.centers, best.inertia)
                per_image_rss[row, col] = best.inertia

    rss_values = per_image_rss.mean(axis=0)
    chosen = candidates[-1]
    for idx in range(1, len(candidates)):
        prev, cur = rss_values[idx - 1], rss_values[idx]
        improvement = (prev - cur) / prev if prev > 0 else 0.0
        if improvement < drop_threshold:
            chosen = candidates[idx - 1]
            break
    ids = sample_ids if sample_ids is not None else tuple(str(i) for i in range(len(flats)))
    return KSelectionReport(candidates, tuple(float(v) for v in rss_values), chosen, ids)


def choose_k_for_manifest(
    manifest: DatasetManifest,
    *,
    k_min: int = 1,
    k_max: int = DEFAULT_K_MAX,
    drop_threshold: float = DEFAULT_DROP_THRESHOLD,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    max_pixels: int | None = DEFAULT_MAX_PIXELS,
) -> KSelectionReport:
    """Run K selection on a seeded uniform sample of the manifest's images."""
    if not manifest.records:
        raise ValueError(f"dataset '{manifest.dataset_id}' has no images")
    rng = np.random.default_rng(stable_seed(seed, "ksample", manifest.dataset_id))
    count = min(sample_size, len(manifest.records))
    picks = np.sort(rng.choice(len(manifest.records), size=count, replace=False))
    sample, ids = [], []
    for idx in picks:
        rec = manifest.records[int(idx)]
        flat = _flatten_pixels(load_pixels(rec))
        flat = subsample_pixels(
            flat, max_pixels, np.random.default_rng(stable_seed(seed, "pixels", rec.id))
        )
        sample.append(flat)
        ids.append(rec.id)
    return select_k(sample, (k_min, k_max), drop_threshold, seed, sample_ids=tuple(ids))


def signature_for_manifest(
    manifest: DatasetManifest,
    k: int,
    seed: int,
    *,
    max_pixels: int | None = DEFAULT_MAX_PIXELS,
    accelerated: bool = True,
    content_hash: str | None = None,
) -> DatasetSignature:
    """Full signature pipeline for one dataset at a fixed K.

    Every image gets its own derived seed, so the per-image map can run in
    any order (or in parallel) without changing the result.
    """
    if not manifest.records:
        raise ValueError(f"dataset '{manifest.dataset_id}' has no images")
    sigs = []
    for rec in manifest.records:
        flat = _flatten_pixels(load_pixels(rec))
        flat = subsample_pixels(
            flat, max_pixels, np.random.default_rng(stable_seed(seed, "pixels", rec.id))
        )
        sigs.append(
            image_kmeans(flat, k, seed=stable_seed(seed, "kmeans", rec.id), accelerated=accelerated)
        )
    if content_hash is None:
        content_hash = manifest_content_hash(manifest)
    provenance = SignatureProvenance(manifest.dataset_id, content_hash, k, seed)
    return dataset_signature(
        sigs,
        k,
        seed=stable_seed(seed, "aggregate", manifest.dataset_id),
        accelerated=accelerated,
        provenance=provenance,
    )


def save_signature_cache(sig: DatasetSignature, path) -> None:
    if sig.provenance is None:
        raise ValueError("cannot cache a signature without provenance")
    data = {
        "dataset_id": sig.provenance.dataset_id,
        "content_hash": sig.provenance.content_hash,
        "K": sig.provenance.k,
        "seed": sig.provenance.seed,
        "centroids": [[float(v) for v in row] for row in sig.centroids],
        "weights": [float(w) for w in sig.weights],
    }
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def load_signature_cache(path) -> DatasetSignature:
    """Parse a cache file; raises on corruption (callers recompute then)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    provenance = SignatureProvenance(
        dataset_id=data["dataset_id"],
        content_hash=data["content_hash"],
        k=int(data["K"]),
        seed=int(data["seed"]),
    )
    return DatasetSignature(
        np.asarray(data["centroids"], dtype=float),
        np.asarray(data["weights"], dtype=float),
        provenance=provenance,
    )
