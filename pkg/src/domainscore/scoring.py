"""Domain discrepancy scores and the source-selection rule.

score = EMD * gini / (label overlap + epsilon), where gini is taken over
the source's class counts restricted to the labels both datasets share.
Lower is more similar.  A score is degenerate when any factor vanishes:
zero EMD (the pair is effectively the same dataset), zero gini on the
shared labels, or no shared labels at all.  Degenerate scores carry no
similarity information and are excluded from candidacy.

Selection: take the three lowest non-degenerate scores, then pick the
candidate with the most annotation instances.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .emd import emd
from .gini import gini
from .manifest import DatasetManifest, class_counts, label_set, restrict_counts
from .signature import DatasetSignature

# Everything below these thresholds counts as an exact zero for the
# degeneracy flag; solver noise on a 0..441 cost scale stays well under.
EMD_ZERO_TOL = 1e-9
DELTA_ZERO_TOL = 1e-12

DatasetEntry = tuple[DatasetManifest, DatasetSignature]


class SelectionError(ValueError):
    """Raised when every candidate score in a row is degenerate."""


@dataclass(frozen=True)
class DiscrepancyScore:
    target_id: str
    source_id: str
    emd: float
    delta: float
    overlap: int
    epsilon: float
    score: float
    degenerate: bool


@dataclass(frozen=True)
class SourceCandidate:
    source_id: str
    score: float
    sample_count: int


@dataclass(frozen=True)
class SelectionResult:
    target_id: str
    candidates: tuple[SourceCandidate, ...]  # ascending by score
    chosen: str


@dataclass(frozen=True)
class ScoreMatrix:
    ids: tuple[str, ...]
    scores: tuple[tuple[DiscrepancyScore, ...], ...]  # [target][source]

    def row(self, target_id: str) -> tuple[DiscrepancyScore, ...]:
        return self.scores[self.ids.index(target_id)]


def overlap(target_labels: set[str], source_labels: set[str]) -> int:
    """Cardinality of the shared label set."""
    return len(set(target_labels) & set(source_labels))


def disc(target: DatasetEntry, source: DatasetEntry, epsilon: float = 1.0) -> DiscrepancyScore:
    """Discrepancy score of one (target, source) pair."""
    target_manifest, target_sig = target
    source_manifest, source_sig = source
    shared = label_set(target_manifest) & label_set(source_manifest)
    if len(shared) + epsilon <= 0:
        raise ValueError("overlap + epsilon must be positive (division guard)")
    distance = emd(target_sig, source_sig).distance
    if shared:
        restricted = restrict_counts(class_counts(source_manifest), shared)
        delta = gini(restricted).delta if restricted else 0.0
    else:
        delta = 0.0
    score = distance * delta / (len(shared) + epsilon)
    degenerate = distance <= EMD_ZERO_TOL or delta <= DELTA_ZERO_TOL or not shared
    return DiscrepancyScore(
        target_id=target_manifest.dataset_id,
        source_id=source_manifest.dataset_id,
        emd=distance,
        delta=delta,
        overlap=len(shared),
        epsilon=epsilon,
        score=score,
        degenerate=degenerate,
    )


def score_row(target: DatasetEntry, sources: Sequence[DatasetEntry], epsilon: float = 1.0):
    """Scores of one target against each source, in input order."""
    return tuple(disc(target, source, epsilon) for source in sources)


def score_matrix(datasets: Sequence[DatasetEntry], epsilon: float = 1.0) -> ScoreMatrix:
    """All ordered (target, source) pairs, rows and columns in input order."""
    if len(datasets) < 2:
        raise ValueError("score_matrix needs at least two datasets")
    ids = tuple(manifest.dataset_id for manifest, _ in datasets)
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate dataset ids: {ids}")
    rows = tuple(score_row(target, datasets, epsilon) for target in datasets)
    return ScoreMatrix(ids=ids, scores=rows)


def select_source(
    row: Sequence[DiscrepancyScore], sample_counts: Mapping[str, int]
) -> SelectionResult:
    """Apply the top-3 + most-samples rule to one target's scores.

    Degenerate entries and the target itself are never candidates.  Score
    ties rank the larger sample count first, then the lexicographically
    smaller id.
    """
    if not row:
        raise SelectionError("empty score row")
    target_id = row[0].target_id
    valid = [s for s in row if not s.degenerate and s.source_id != target_id]
    if not valid:
        raise SelectionError(
            f"no valid source for target '{target_id}': all scores are degenerate"
        )
    ranked = sorted(
        valid, key=lambda s: (s.score, -sample_counts[s.source_id], s.source_id)
    )
    top = ranked[:3]
    candidates = tuple(
        SourceCandidate(s.source_id, s.score, sample_counts[s.source_id]) for s in top
    )
    chosen = sorted(candidates, key=lambda c: (-c.sample_count, c.score, c.source_id))[0]
    return SelectionResult(target_id=target_id, candidates=candidates, chosen=chosen.source_id)


def write_score_csv(row_ids, col_ids, rows, path) -> None:
    """Table-style CSV: header of source ids, one row per target, 4 decimals."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", *col_ids])
        for target_id, row in zip(row_ids, rows):
            writer.writerow([target_id, *(f"{s.score:.4f}" for s in row)])


def _score_dict(s: DiscrepancyScore) -> dict:
    return {
        "target_id": s.target_id,
        "source_id": s.source_id,
        "emd": s.emd,
        "delta": s.delta,
        "overlap": s.overlap,
        "epsilon": s.epsilon,
        "score": s.score,
        "degenerate": s.degenerate,
    }


def _selection_dict(sel: SelectionResult) -> dict:
    return {
        "target_id": sel.target_id,
        "candidates": [
            {"source_id": c.source_id, "score": c.score, "sample_count": c.sample_count}
            for c in sel.candidates
        ],
        "chosen": sel.chosen,
    }


def write_score_json(row_ids, col_ids, rows, selections, path, config: dict | None = None) -> None:
    """Companion JSON with full score components and per-target selections."""
    data = {
        "targets": list(row_ids),
        "sources": list(col_ids),
        "scores": [[_score_dict(s) for s in row] for row in rows],
        "selections": [_selection_dict(sel) for sel in selections],
    }
    if config:
        data["config"] = config
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
