"""Deterministic class balancing: oversample minorities, undersample majorities.

Oversampling duplicates images of a minority class through short chains of
basic transforms (flips, right-angle rotations, contrast, seeded noise)
until the class reaches ``min_count``.  Undersampling drops seeded-random
images of a majority class, but only drops an image when no label it
carries would fall below ``min_count``.  Everything is derived from the
plan seed, so the same inputs always produce the same plan and, after
materialization, byte-identical outputs.

Images whose metadata carries annotation geometry only receive
geometry-preserving ops (contrast, noise); flips and rotations would
silently invalidate the boxes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import (
    DatasetManifest,
    ImageRecord,
    class_counts,
    load_pixels,
    rebase_manifest,
    save_manifest,
)
from .util import stable_seed

FLIP_ROTATE_KINDS = ("horizontal-flip", "vertical-flip", "rotate-90", "rotate-180", "rotate-270")
ALL_KINDS = FLIP_ROTATE_KINDS + ("contrast-scale", "gaussian-noise")

# meta keys that indicate per-annotation geometry we must not re-map
GEOMETRY_META_KEYS = frozenset(
    {"bbox", "bboxes", "boxes", "polygon", "polygons", "segmentation", "keypoints"}
)

_DEFAULT_CONTRAST_FACTORS = (1.25, 0.8)
_DEFAULT_NOISE_SIGMA = 8.0


class AugmentError(RuntimeError):
    """Raised when a directive cannot be materialized; names the directive."""


@dataclass(frozen=True)
class TransformOp:
    kind: str
    factor: float | None = None  # contrast-scale only
    sigma: float | None = None  # gaussian-noise only
    seed: int | None = None  # gaussian-noise only

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown transform kind '{self.kind}'")
        if self.kind == "contrast-scale" and (self.factor is None or self.factor <= 0):
            raise ValueError("contrast-scale needs factor > 0")
        if self.kind == "gaussian-noise" and (self.sigma is None or self.sigma < 0):
            raise ValueError("gaussian-noise needs sigma >= 0")

    def token(self) -> str:
        parts = [self.kind]
        if self.factor is not None:
            parts.append(f"f{self.factor}")
        if self.sigma is not None:
            parts.append(f"s{self.sigma}")
        if self.seed is not None:
            parts.append(f"r{self.seed}")
        return "~".join(parts)


@dataclass(frozen=True)
class OversampleDirective:
    source_id: str
    chain: tuple[TransformOp, ...]
    new_id: str


@dataclass(frozen=True)
class AugmentPlan:
    target_counts: dict[str, int]  # per-class count the plan aims for
    oversample: tuple[OversampleDirective, ...]
    undersample: tuple[str, ...]  # image ids to drop
    seed: int
    conflicts: tuple[str, ...] = field(default_factory=tuple)


def apply_transform(pixels: np.ndarray, op: TransformOp) -> np.ndarray:
    """Apply one transform to an (H, W, 3) uint8 block."""
    if op.kind == "horizontal-flip":
        return pixels[:, ::-1].copy()
    if op.kind == "vertical-flip":
        return pixels[::-1].copy()
    if op.kind == "rotate-90":
        return np.rot90(pixels, 1).copy()
    if op.kind == "rotate-180":
        return np.rot90(pixels, 2).copy()
    if op.kind == "rotate-270":
        return np.rot90(pixels, 3).copy()
    if op.kind == "contrast-scale":
        shifted = 128.0 + op.factor * (pixels.astype(float) - 128.0)
        return np.rint(np.clip(shifted, 0, 255)).astype(np.uint8)
    if op.kind == "gaussian-noise":
        if op.sigma == 0:
            return pixels.copy()
        rng = np.random.default_rng(op.seed if op.seed is not None else 0)
        noisy = pixels.astype(float) + rng.normal(0.0, op.sigma, size=pixels.shape)
        return np.rint(np.clip(noisy, 0, 255)).astype(np.uint8)
    raise ValueError(f"unknown transform kind '{op.kind}'")


def apply_chain(pixels: np.ndarray, chain) -> np.ndarray:
    for op in chain:
        pixels = apply_transform(pixels, op)
    return pixels


def base_ops(allowed_kinds=None) -> tuple[TransformOp, ...]:
    ops = [TransformOp(kind) for kind in FLIP_ROTATE_KINDS]
    ops += [TransformOp("contrast-scale", factor=f) for f in _DEFAULT_CONTRAST_FACTORS]
    ops.append(TransformOp("gaussian-noise", sigma=_DEFAULT_NOISE_SIGMA))
    if allowed_kinds is not None:
        allowed = set(allowed_kinds)
        unknown = allowed - set(ALL_KINDS)
        if unknown:
            raise ValueError(f"unknown transform kinds: {sorted(unknown)}")
        ops = [op for op in ops if op.kind in allowed]
    return tuple(ops)


def _chains(ops) -> list[tuple[TransformOp, ...]]:
    """Length-1 then length-2 chains, fixed enumeration order."""
    chains = [(op,) for op in ops]
    chains += [(a, b) for a in ops for b in ops if a is not b]
    return chains


def _has_geometry(rec: ImageRecord) -> bool:
    if rec.meta and GEOMETRY_META_KEYS & set(rec.meta):
        return True
    return bool(GEOMETRY_META_KEYS & set(rec.extra))


def plan_augmentation(
    manifest: DatasetManifest,
    min_count: int,
    max_count: int,
    seed: int,
    allowed_ops=None,
) -> AugmentPlan:
    """Build a deterministic balancing plan for the given count band."""
    if not (1 <= min_count <= max_count):
        raise ValueError(f"invalid band: min_count={min_count}, max_count={max_count}")
    counts = class_counts(manifest)
    current = dict(counts)
    by_label: dict[str, list[ImageRecord]] = {}
    for rec in manifest.records:
        for label in set(rec.labels):
            by_label.setdefault(label, []).append(rec)

    rng = np.random.default_rng(stable_seed(seed, "plan", manifest.dataset_id))
    conflicts: list[str] = []

    # undersample majorities first; guard every co-occurring label's floor
    dropped: set[str] = set()
    for label in sorted(current, key=lambda l: (-current[l], l)):
        if current[label] <= max_count:
            continue
        candidates = [rec for rec in by_label[label] if rec.id not in dropped]
        order = rng.permutation(len(candidates))
        for pos in order:
            if current[label] <= max_count:
                break
            rec = candidates[int(pos)]
            effect: dict[str, int] = {}
            for l in rec.labels:
                effect[l] = effect.get(l, 0) + 1
            if any(current[l] - d < min_count for l, d in effect.items()):
                continue
            dropped.add(rec.id)
            for l, d in effect.items():
                current[l] -= d
        if current[label] > max_count:
            conflicts.append(
                f"class '{label}' stuck at {current[label]} > max_count={max_count}: "
                "remaining drops would push a co-occurring class below min_count"
            )

    existing_ids = {rec.id for rec in manifest.records}
    safe_kinds = tuple(
        k for k in ("contrast-scale", "gaussian-noise")
        if allowed_ops is None or k in set(allowed_ops)
    )
    chains_full = _chains(base_ops(allowed_ops))
    chains_safe = _chains(base_ops(safe_kinds)) if safe_kinds else []
    perm_full = [chains_full[int(i)] for i in rng.permutation(len(chains_full))] if chains_full else []
    perm_safe = [chains_safe[int(i)] for i in rng.permutation(len(chains_safe))] if chains_safe else []

    directives: list[OversampleDirective] = []
    serial = 0
    chain_cursor = {"full": 0, "safe": 0}
    for label in sorted(current, key=lambda l: (current[l], l)):
        if current[label] >= min_count:
            continue
        images = [rec for rec in by_label[label] if rec.id not in dropped]
        images = [images[int(i)] for i in rng.permutation(len(images))]
        if not images:
            conflicts.append(f"class '{label}' has no images left to oversample")
            continue
        t = 0
        while current[label] < min_count:
            rec = images[t % len(images)]
            kind = "safe" if _has_geometry(rec) else "full"
            pool = perm_safe if kind == "safe" else perm_full
            if not pool:
                conflicts.append(
                    f"class '{label}': no transforms available for image '{rec.id}'"
                )
                break
            cursor = chain_cursor[kind]
            # skew the cycle so (image, chain) pairs stay distinct past one lap
            chain = pool[(cursor + cursor // len(images)) % len(pool)]
            chain_cursor[kind] = cursor + 1
            new_id = f"{rec.id}__aug{serial:04d}"
            while new_id in existing_ids:
                serial += 1
                new_id = f"{rec.id}__aug{serial:04d}"
            existing_ids.add(new_id)
            chain = tuple(
                replace(op, seed=stable_seed(seed, "noise", new_id, i))
                if op.kind == "gaussian-noise"
                else op
                for i, op in enumerate(chain)
            )
            directives.append(OversampleDirective(rec.id, chain, new_id))
            serial += 1
            for l in rec.labels:
                current[l] = current.get(l, 0) + 1
            t += 1

    for label in sorted(current):
        count = current[label]
        if count > max_count and all(f"'{label}'" not in c for c in conflicts):
            conflicts.append(
                f"class '{label}' ends at {count} > max_count={max_count} "
                "(pushed up by co-occurring oversampling)"
            )

    return AugmentPlan(
        target_counts=current,
        oversample=tuple(directives),
        undersample=tuple(sorted(dropped)),
        seed=seed,
        conflicts=tuple(conflicts),
    )


def _chain_hash(chain) -> str:
    text = "|".join(op.token() for op in chain)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:10]


def materialize(plan: AugmentPlan, manifest: DatasetManifest, output_dir) -> DatasetManifest:
    """Write transformed images and the rebalanced manifest under ``output_dir``."""
    out = Path(output_dir)
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    dropped = set(plan.undersample)
    survivors = [rec for rec in manifest.records if rec.id not in dropped]
    rebased = rebase_manifest(
        replace(manifest, records=tuple(survivors)), out
    )
    records = list(rebased.records)

    for directive in plan.oversample:
        try:
            source = manifest.record(directive.source_id)
            block = apply_chain(load_pixels(source), directive.chain)
            name = f"{source.id}_{_chain_hash(directive.chain)}.png"
            Image.fromarray(block).save(images_dir / name)
        except Exception as exc:
            raise AugmentError(
                f"directive '{directive.new_id}' (source '{directive.source_id}'): {exc}"
            ) from exc
        records.append(
            ImageRecord(
                id=directive.new_id,
                path=f"images/{name}",
                width=block.shape[1],
                height=block.shape[0],
                labels=source.labels,
                meta=source.meta,
                extra=source.extra,
                root=out,
            )
        )

    result = replace(rebased, records=tuple(records))
    save_manifest(result, out / "manifest.json")
    return result
