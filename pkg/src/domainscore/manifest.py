"""Image-dataset manifests: loading, validation, label counts, pixel access.

A manifest is a JSON file listing images with their annotation labels.  It
is annotation-level: each image carries a list of label names, one entry
per defect instance, and any richer geometry (bounding boxes etc.) rides
along as opaque metadata that is never interpreted here.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

from .util import canonical_json, sha256_file, sha256_text, ALGORITHM_VERSION

LabelId = str
ClassCounts = dict[LabelId, int]

# Keys in the schema for an image entry; anything else is preserved verbatim.
_IMAGE_KEYS = ("id", "path", "width", "height", "labels", "meta")


class ManifestError(ValueError):
    """Raised when a manifest file violates the schema or its invariants."""


@dataclass(frozen=True)
class ImageRecord:
    """One image plus its annotation labels (duplicates = repeated instances)."""

    id: str
    path: str
    width: int
    height: int
    labels: tuple[LabelId, ...]
    meta: dict | None = None
    extra: dict = field(default_factory=dict)
    root: Path | None = field(default=None, compare=False, repr=False)

    def resolved_path(self) -> Path:
        p = Path(self.path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    records: tuple[ImageRecord, ...]
    extra: dict = field(default_factory=dict)
    root: Path | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, image_id: str) -> ImageRecord:
        for rec in self.records:
            if rec.id == image_id:
                return rec
        raise KeyError(image_id)


def _require(cond: bool, message: str):
    if not cond:
        raise ManifestError(message)


def _parse_record(idx: int, entry, root: Path | None) -> ImageRecord:
    where = f"images[{idx}]"
    _require(isinstance(entry, dict), f"{where}: expected an object")
    for key in ("id", "path", "width", "height", "labels"):
        _require(key in entry, f"{where}: missing field '{key}'")
    rid = entry["id"]
    _require(isinstance(rid, str) and rid, f"{where}: field 'id' must be a non-empty string")
    path = entry["path"]
    _require(isinstance(path, str) and path, f"{where} (id '{rid}'): field 'path' must be a non-empty string")
    width, height = entry["width"], entry["height"]
    for name, value in (("width", width), ("height", height)):
        _require(
            isinstance(value, int) and not isinstance(value, bool) and value >= 1,
            f"{where} (id '{rid}'): field '{name}' must be an integer >= 1",
        )
    labels = entry["labels"]
    _require(isinstance(labels, list), f"{where} (id '{rid}'): field 'labels' must be a list")
    for label in labels:
        _require(
            isinstance(label, str) and label,
            f"{where} (id '{rid}'): field 'labels' entries must be non-empty strings",
        )
    meta = entry.get("meta")
    _require(
        meta is None or isinstance(meta, dict),
        f"{where} (id '{rid}'): field 'meta' must be an object",
    )
    extra = {k: v for k, v in entry.items() if k not in _IMAGE_KEYS}
    return ImageRecord(
        id=rid,
        path=path,
        width=width,
        height=height,
        labels=tuple(labels),
        meta=meta,
        extra=extra,
        root=root,
    )


def load_manifest(path) -> DatasetManifest:
    """Load and validate a manifest file.

    Image paths resolve relative to the manifest's directory.  Unknown
    fields are preserved and re-emitted by :func:`save_manifest`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    _require(isinstance(data, dict), f"{path}: top level must be an object")
    _require("dataset_id" in data, f"{path}: missing field 'dataset_id'")
    dataset_id = data["dataset_id"]
    _require(
        isinstance(dataset_id, str) and dataset_id,
        f"{path}: field 'dataset_id' must be a non-empty string",
    )
    _require("images" in data, f"{path}: missing field 'images'")
    images = data["images"]
    _require(isinstance(images, list), f"{path}: field 'images' must be a list")

    root = path.parent
    records = tuple(_parse_record(i, entry, root) for i, entry in enumerate(images))
    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise ManifestError(f"{path}: duplicate image id '{rec.id}'")
        seen.add(rec.id)
    extra = {k: v for k, v in data.items() if k not in ("dataset_id", "images")}
    return DatasetManifest(dataset_id=dataset_id, records=records, extra=extra, root=root)


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest back to disk; inverse of :func:`load_manifest`."""
    path = Path(path)
    images = []
    for rec in manifest.records:
        entry = {
            "id": rec.id,
            "path": rec.path,
            "width": rec.width,
            "height": rec.height,
            "labels": list(rec.labels),
        }
        if rec.meta is not None:
            entry["meta"] = rec.meta
        for key in sorted(rec.extra):
            entry[key] = rec.extra[key]
        images.append(entry)
    data = {"dataset_id": manifest.dataset_id, "images": images}
    for key in sorted(manifest.extra):
        data[key] = manifest.extra[key]
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def rebase_manifest(manifest: DatasetManifest, new_root: Path) -> DatasetManifest:
    """Re-express record paths relative to ``new_root`` (files stay put)."""
    new_root = Path(new_root)
    records = []
    for rec in manifest.records:
        resolved = rec.resolved_path()
        try:
            rel = Path(os.path.relpath(str(resolved), str(new_root)))
        except ValueError:
            # different drive on Windows; keep the absolute path
            rel = resolved
        records.append(replace(rec, path=rel.as_posix(), root=new_root))
    return replace(manifest, records=tuple(records), root=new_root)


def class_counts(manifest: DatasetManifest) -> ClassCounts:
    """Instance count per label, summed over records (not image counts)."""
    counts: ClassCounts = {}
    for rec in manifest.records:
        for label in rec.labels:
            counts[label] = counts.get(label, 0) + 1
    return counts


def label_set(manifest: DatasetManifest) -> set[LabelId]:
    """Distinct labels present in the manifest (count >= 1)."""
    out: set[LabelId] = set()
    for rec in manifest.records:
        out.update(rec.labels)
    return out


def restrict_counts(counts: Mapping[LabelId, int], labels: Iterable[LabelId]) -> ClassCounts:
    keep = set(labels)
    return {label: count for label, count in counts.items() if label in keep}


def load_pixels(record: ImageRecord) -> np.ndarray:
    """Decode a record's image into an (H, W, 3) uint8 block.

    Grayscale inputs are replicated across the three channels; alpha is
    dropped.  Dimensions must match the record's declared width/height.
    """
    path = record.resolved_path()
    try:
        with Image.open(path) as img:
            if img.size != (record.width, record.height):
                raise ManifestError(
                    f"image '{record.id}': file is {img.size[0]}x{img.size[1]} "
                    f"but manifest declares {record.width}x{record.height}"
                )
            rgb = img.convert("RGB")
            block = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except ManifestError:
        raise
    except Exception as exc:
        raise ManifestError(f"image '{record.id}': cannot decode {path} ({exc})") from exc
    return block


def manifest_content_hash(manifest: DatasetManifest) -> str:
    """Hash of the manifest's schema fields plus every image file's bytes.

    Changing an image file, a label, or the algorithm version changes the
    hash, which is what signature caching keys on.
    """
    payload = {
        "algorithm": ALGORITHM_VERSION,
        "dataset_id": manifest.dataset_id,
        "records": [
            {
                "id": rec.id,
                "labels": list(rec.labels),
                "width": rec.width,
                "height": rec.height,
                "file": sha256_file(rec.resolved_path()),
            }
            for rec in manifest.records
        ],
    }
    return sha256_text(canonical_json(payload))
