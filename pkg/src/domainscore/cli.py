"""Command-line front end: signature extraction, scoring, subset, augment.

All numeric defaults here are artifact choices, tunable by flag.  The
pipeline ends at manifests and a recommendation; detector training is a
documented hand-off, not a subprocess.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .augment import materialize, plan_augmentation
from .manifest import (
    DatasetManifest,
    class_counts,
    label_set,
    load_manifest,
    manifest_content_hash,
)
from .scoring import (
    SelectionError,
    score_matrix,
    score_row,
    select_source,
    write_score_csv,
    write_score_json,
)
from .signature import (
    DEFAULT_DROP_THRESHOLD,
    DEFAULT_K_MAX,
    DEFAULT_MAX_PIXELS,
    DEFAULT_SAMPLE_SIZE,
    DatasetSignature,
    choose_k_for_manifest,
    load_signature_cache,
    save_signature_cache,
    signature_for_manifest,
)

CACHE_DIR_ENV = "DOMAINSCORE_CACHE_DIR"


@dataclass
class RunConfig:
    k: int | None
    k_max: int
    k_threshold: float
    k_sample: int
    epsilon: float
    seed: int
    cache_dir: Path | None
    max_pixels: int | None

    def validate(self):
        if self.k is not None and self.k < 1:
            raise ValueError("--k must be >= 1")
        if self.k_max < 1:
            raise ValueError("--k-max must be >= 1")
        if not (0.0 <= self.k_threshold < 1.0):
            raise ValueError("--k-threshold must be in [0, 1)")
        if self.k_sample < 1:
            raise ValueError("--k-sample must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("--epsilon must be positive")


def _config_from_args(args) -> RunConfig:
    cache_dir = args.cache_dir
    if cache_dir is None:
        env = os.environ.get(CACHE_DIR_ENV)
        cache_dir = Path(env) if env else None
    else:
        cache_dir = Path(cache_dir)
    cfg = RunConfig(
        k=args.k,
        k_max=args.k_max,
        k_threshold=args.k_threshold,
        k_sample=args.k_sample,
        epsilon=getattr(args, "epsilon", 1.0),
        seed=args.seed,
        cache_dir=cache_dir,
        max_pixels=None if args.no_pixel_subsample else DEFAULT_MAX_PIXELS,
    )
    cfg.validate()
    return cfg


def _resolve_k(target: DatasetManifest, cfg: RunConfig) -> int:
    if cfg.k is not None:
        return cfg.k
    report = choose_k_for_manifest(
        target,
        k_max=cfg.k_max,
        drop_threshold=cfg.k_threshold,
        sample_size=cfg.k_sample,
        seed=cfg.seed,
        max_pixels=cfg.max_pixels,
    )
    print(f"selected K={report.chosen_k} from target '{target.dataset_id}'")
    return report.chosen_k


def _signature_cached(manifest: DatasetManifest, k: int, cfg: RunConfig) -> DatasetSignature:
    content_hash = manifest_content_hash(manifest)
    cache_path = None
    if cfg.cache_dir is not None:
        cfg.cache_dir.mkdir(parents=True, exist_ok=True)
        cache_path = cfg.cache_dir / f"{manifest.dataset_id}.signature.json"
        if cache_path.exists():
            try:
                cached = load_signature_cache(cache_path)
            except Exception as exc:
                print(
                    f"warning: signature cache for '{manifest.dataset_id}' is corrupt "
                    f"({exc}); recomputing",
                    file=sys.stderr,
                )
            else:
                prov = cached.provenance
                if (
                    prov is not None
                    and prov.content_hash == content_hash
                    and prov.k == k
                    and prov.seed == cfg.seed
                ):
                    print(f"cache hit: {manifest.dataset_id}")
                    return cached
    sig = signature_for_manifest(
        manifest, k, cfg.seed, max_pixels=cfg.max_pixels, content_hash=content_hash
    )
    if cache_path is not None:
        save_signature_cache(sig, cache_path)
    return sig


def cmd_signature(args) -> int:
    cfg = _config_from_args(args)
    manifests = [load_manifest(p) for p in args.manifests]
    k = _resolve_k(manifests[0], cfg)
    for manifest in manifests:
        sig = _signature_cached(manifest, k, cfg)
        print(
            f"{manifest.dataset_id}: {sig.centroids.shape[0]} clusters "
            f"(K={k}, seed={cfg.seed})"
        )
    return 0


def cmd_score(args) -> int:
    cfg = _config_from_args(args)
    target = load_manifest(args.target)
    sources = [load_manifest(p) for p in args.sources]
    ids = [target.dataset_id] + [s.dataset_id for s in sources]
    if len(set(ids)) != len(ids):
        print(f"error: duplicate dataset ids: {ids}", file=sys.stderr)
        return 2
    k = _resolve_k(target, cfg)
    entries = [(m, _signature_cached(m, k, cfg)) for m in [target] + sources]
    sample_counts = {m.dataset_id: sum(class_counts(m).values()) for m in [target] + sources}

    if args.all_pairs:
        matrix = score_matrix(entries, epsilon=cfg.epsilon)
        row_ids = col_ids = matrix.ids
        rows = matrix.scores
        selection_rows = list(zip(row_ids, rows))
    else:
        row = score_row(entries[0], entries[1:], epsilon=cfg.epsilon)
        row_ids = (target.dataset_id,)
        col_ids = tuple(s.dataset_id for s in sources)
        rows = (row,)
        selection_rows = [(target.dataset_id, row)]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "scores.csv"
    json_path = out_dir / "scores.json"

    selections = []
    failures = []
    for target_id, row in selection_rows:
        try:
            selections.append(select_source(row, sample_counts))
        except SelectionError as exc:
            failures.append(str(exc))

    write_score_csv(row_ids, col_ids, rows, csv_path)
    write_score_json(
        row_ids,
        col_ids,
        rows,
        selections,
        json_path,
        config={"epsilon": cfg.epsilon, "k": k, "seed": cfg.seed},
    )

    if args.format == "json":
        print(json_path.read_text(encoding="utf-8"), end="")
    else:
        print(csv_path.read_text(encoding="utf-8"), end="")
    for sel in selections:
        ranked = ", ".join(f"{c.source_id}={c.score:.4f}" for c in sel.candidates)
        print(f"target {sel.target_id}: selected {sel.chosen} (candidates: {ranked})")
    for message in failures:
        print(f"error: {message}", file=sys.stderr)
    return 1 if failures else 0


def cmd_subset(args) -> int:
    from .subset import SubsetPolicy, filter_subset, write_filtered

    source = load_manifest(args.source)
    target = load_manifest(args.target)
    result = filter_subset(source, label_set(target), SubsetPolicy(args.policy))
    manifest_path, report_path = write_filtered(result, args.out)
    print(
        f"kept {len(result.manifest.records)} images "
        f"(removed {result.removed_images}, pruned {result.pruned_annotations} annotations)"
    )
    print(f"wrote {manifest_path} and {report_path}")
    return 0


def cmd_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    counts = class_counts(manifest)
    if not counts:
        print("error: manifest has no labeled images to balance", file=sys.stderr)
        return 2
    median = int(sorted(counts.values())[len(counts) // 2])
    min_count = args.min_count if args.min_count is not None else max(1, median)
    max_count = args.max_count if args.max_count is not None else max(min_count, 3 * median)
    allowed = args.ops.split(",") if args.ops else None
    plan = plan_augmentation(manifest, min_count, max_count, args.seed, allowed_ops=allowed)
    for conflict in plan.conflicts:
        print(f"warning: {conflict}", file=sys.stderr)
    result = materialize(plan, manifest, args.out)
    print(
        f"augmented '{manifest.dataset_id}': +{len(plan.oversample)} images, "
        f"-{len(plan.undersample)} dropped, band [{min_count}, {max_count}]"
    )
    print(f"wrote {Path(args.out) / 'manifest.json'}")
    return 0


def _add_signature_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--k", type=int, default=None, help="force the signature size K")
    parser.add_argument("--k-max", type=int, default=DEFAULT_K_MAX)
    parser.add_argument("--k-threshold", type=float, default=DEFAULT_DROP_THRESHOLD)
    parser.add_argument("--k-sample", type=int, default=DEFAULT_SAMPLE_SIZE)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--cache-dir", default=None, help=f"signature cache (or ${CACHE_DIR_ENV})")
    parser.add_argument("--no-pixel-subsample", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domainscore",
        description="Score dataset similarity and prepare transfer-learning sources.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sig = sub.add_parser("signature", help="compute and cache dataset signatures")
    p_sig.add_argument("manifests", nargs="+", help="first manifest drives K selection")
    _add_signature_flags(p_sig)
    p_sig.set_defaults(func=cmd_signature)

    p_score = sub.add_parser("score", help="score a target against candidate sources")
    p_score.add_argument("target")
    p_score.add_argument("sources", nargs="+")
    p_score.add_argument("--epsilon", type=float, default=1.0)
    p_score.add_argument("--all-pairs", action="store_true")
    p_score.add_argument("--format", choices=("csv", "json"), default="csv")
    p_score.add_argument("--out", default=".")
    _add_signature_flags(p_score)
    p_score.set_defaults(func=cmd_score)

    p_subset = sub.add_parser("subset", help="filter a source to the target label space")
    p_subset.add_argument("source")
    p_subset.add_argument("target")
    p_subset.add_argument("--policy", choices=("strict", "relaxed"), default="strict")
    p_subset.add_argument("--out", required=True)
    p_subset.set_defaults(func=cmd_subset)

    p_aug = sub.add_parser("augment", help="rebalance class counts into a band")
    p_aug.add_argument("manifest")
    p_aug.add_argument("--min-count", type=int, default=None)
    p_aug.add_argument("--max-count", type=int, default=None)
    p_aug.add_argument("--seed", type=int, default=0)
    p_aug.add_argument("--ops", default=None, help="comma-separated transform kinds")
    p_aug.add_argument("--out", required=True)
    p_aug.set_defaults(func=cmd_augment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
