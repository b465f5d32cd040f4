"""Label-space-conditioned subset filtering of a source dataset.

Strict mode keeps an image only when every label it carries is in the
target label set, so no annotation is ever removed from a kept image.
Relaxed mode keeps any image sharing at least one label and prunes the
out-of-set annotations.  Unlabeled images survive both modes: they carry
pixels but no label mass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .manifest import DatasetManifest, rebase_manifest, save_manifest


class SubsetPolicy(str, Enum):
    STRICT = "strict"
    RELAXED = "relaxed"


@dataclass(frozen=True)
class FilteredManifest:
    manifest: DatasetManifest
    removed_images: int
    pruned_annotations: int
    policy: SubsetPolicy


def filter_subset(
    source: DatasetManifest,
    target_labels: set[str],
    policy: SubsetPolicy = SubsetPolicy.STRICT,
) -> FilteredManifest:
    """Drop (or trim) source images whose labels fall outside the target set."""
    if not target_labels:
        raise ValueError("target label set must not be empty")
    policy = SubsetPolicy(policy)
    target = set(target_labels)
    kept = []
    removed = 0
    pruned = 0
    for rec in source.records:
        if not rec.labels:
            kept.append(rec)
            continue
        if policy is SubsetPolicy.STRICT:
            if set(rec.labels) <= target:
                kept.append(rec)
            else:
                removed += 1
        else:
            shared = tuple(label for label in rec.labels if label in target)
            if shared:
                pruned += len(rec.labels) - len(shared)
                kept.append(rec if len(shared) == len(rec.labels) else replace(rec, labels=shared))
            else:
                removed += 1
    manifest = replace(source, records=tuple(kept))
    return FilteredManifest(
        manifest=manifest,
        removed_images=removed,
        pruned_annotations=pruned,
        policy=policy,
    )


def write_filtered(result: FilteredManifest, out_dir) -> tuple[Path, Path]:
    """Emit the filtered manifest plus a JSON removal report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / f"{result.manifest.dataset_id}.subset.json"
    report_path = out_dir / f"{result.manifest.dataset_id}.subset-report.json"
    save_manifest(rebase_manifest(result.manifest, out_dir), manifest_path)
    report = {
        "removed_images": result.removed_images,
        "pruned_annotations": result.pruned_annotations,
        "policy": result.policy.value,
    }
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return manifest_path, report_path
