"""Labeled player manifest: loading, validation, balancing, and fold assignment."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from scoutcv.errors import ManifestError

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ["id", "name", "draft_year", "label", "image_ref", "feature_ref"]
DEFAULT_YEAR_BOUNDS = (1990, 2019)

# Class counts the balancing step aims for by default.
DEFAULT_BALANCE_TARGETS = (300, 300, 300, 230, 140)


class QualityClass(IntEnum):
    """Ordinal talent label; higher code means more expected talent."""

    NOT_READY = 0
    LOWER_LEVEL = 1
    MEDIOCRE = 2
    VERY_GOOD = 3
    EXCELLENT = 4

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def parse(cls, text: str) -> "QualityClass":
        """Parse a display name (case-insensitive) or a numeric code 0-4."""
        token = text.strip()
        if token in _CODE_TOKENS:
            return cls(int(token))
        key = _normalize_label(token)
        if key in _NAME_LOOKUP:
            return _NAME_LOOKUP[key]
        raise ValueError(
            f"unknown quality label {text!r}; accepted spellings are "
            f"{', '.join(repr(n) for n in _DISPLAY_NAMES.values())} "
            f"or a code 0-4"
        )


_DISPLAY_NAMES = {
    QualityClass.NOT_READY: "Not-ready",
    QualityClass.LOWER_LEVEL: "Lower level",
    QualityClass.MEDIOCRE: "Mediocre",
    QualityClass.VERY_GOOD: "Very Good",
    QualityClass.EXCELLENT: "Excellent",
}


def _normalize_label(text: str) -> str:
    # "Not-ready" and "not ready" are the same label.
    return " ".join(text.lower().replace("-", " ").split())


_NAME_LOOKUP = {_normalize_label(n): c for c, n in _DISPLAY_NAMES.items()}
_CODE_TOKENS = {str(c.value) for c in QualityClass}

ALL_CLASSES = tuple(QualityClass)
NUM_CLASSES = len(ALL_CLASSES)


@dataclass(frozen=True)
class PlayerRecord:
    """One labeled rookie.

    At least one of ``image_ref`` / ``feature_ref`` must be present; ids are
    unique within a manifest.
    """

    id: str
    name: str
    draft_year: int
    label: QualityClass
    image_ref: str | None = None
    feature_ref: str | None = None

    def validate(self, year_bounds: tuple[int, int] | None) -> None:
        if not self.id:
            raise ManifestError("record has an empty id")
        if self.image_ref is None and self.feature_ref is None:
            raise ManifestError(
                f"record {self.id!r} has neither image_ref nor feature_ref"
            )
        if year_bounds is not None:
            lo, hi = year_bounds
            if not lo <= self.draft_year <= hi:
                raise ManifestError(
                    f"record {self.id!r} draft_year {self.draft_year} outside [{lo}, {hi}]"
                )


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered collection of player records with no duplicate ids."""

    records: tuple[PlayerRecord, ...]
    source_note: str = ""
    schema_version: int = 1

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate id {rec.id!r} in manifest")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([rec.label.value for rec in self.records], dtype=np.int64)

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]


@dataclass(frozen=True)
class ClassHistogram:
    """Record count per quality class; ``total`` always equals their sum."""

    counts: tuple[int, int, int, int, int]
    total: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "total", int(sum(self.counts)))

    def __getitem__(self, c: QualityClass | int) -> int:
        return self.counts[int(c)]

    def as_rows(self) -> list[tuple[str, int]]:
        return [(c.display_name, self.counts[c.value]) for c in ALL_CLASSES]


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every record id to exactly one of ``k`` folds."""

    k: int
    assignment: dict[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return [rid for rid, f in self.assignment.items() if f == fold]

    def sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.assignment.values():
            sizes[f] += 1
        return sizes


def load_manifest(
    path: str | Path,
    year_bounds: tuple[int, int] | None = DEFAULT_YEAR_BOUNDS,
) -> DatasetManifest:
    """Load and validate a manifest CSV.

    The file must carry the header ``id,name,draft_year,label,image_ref,feature_ref``.
    ``label`` accepts display names (case-insensitive) or codes 0-4; empty
    ``image_ref``/``feature_ref`` cells mean absent. Every violation is
    reported with the offending line number. Unknown extra columns are
    ignored with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    records: list[PlayerRecord] = []
    seen: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{path}: empty file, expected header {','.join(MANIFEST_HEADER)}")
        missing = [c for c in MANIFEST_HEADER if c not in reader.fieldnames]
        if missing:
            raise ManifestError(f"{path}:1 header is missing columns: {', '.join(missing)}")
        extra = [c for c in reader.fieldnames if c not in MANIFEST_HEADER]
        if extra:
            logger.warning("%s: ignoring unknown columns: %s", path, ", ".join(extra))
        for lineno, row in enumerate(reader, start=2):
            rid = (row.get("id") or "").strip()
            if not rid:
                raise ManifestError(f"{path}:{lineno} empty id")
            if rid in seen:
                raise ManifestError(
                    f"{path}:{lineno} duplicate id {rid!r} (first seen on line {seen[rid]})"
                )
            seen[rid] = lineno
            try:
                year = int((row.get("draft_year") or "").strip())
            except ValueError:
                raise ManifestError(
                    f"{path}:{lineno} draft_year {row.get('draft_year')!r} is not an integer"
                ) from None
            try:
                label = QualityClass.parse(row.get("label") or "")
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno} {exc}") from None
            rec = PlayerRecord(
                id=rid,
                name=(row.get("name") or "").strip(),
                draft_year=year,
                label=label,
                image_ref=(row.get("image_ref") or "").strip() or None,
                feature_ref=(row.get("feature_ref") or "").strip() or None,
            )
            try:
                rec.validate(year_bounds)
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno} {exc}") from None
            records.append(rec)
    return DatasetManifest(records=tuple(records), source_note=str(path))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest back to CSV in record order."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            writer.writerow(
                [
                    rec.id,
                    rec.name,
                    rec.draft_year,
                    rec.label.display_name,
                    rec.image_ref or "",
                    rec.feature_ref or "",
                ]
            )


def class_histogram(manifest: DatasetManifest) -> ClassHistogram:
    """Count records per quality class."""
    counts = [0] * NUM_CLASSES
    for rec in manifest.records:
        counts[rec.label.value] += 1
    return ClassHistogram(counts=tuple(counts))


def balance_truncate(
    manifest: DatasetManifest,
    targets: Sequence[int] = DEFAULT_BALANCE_TARGETS,
    seed: int = 0,
) -> DatasetManifest:
    """Truncate over-represented classes down to per-class targets.

    For each class the survivors are drawn uniformly without replacement,
    driven solely by ``seed``; classes at or below their target are kept
    whole. Output preserves the input record order.
    """
    if len(targets) != NUM_CLASSES:
        raise ValueError(f"expected {NUM_CLASSES} targets, got {len(targets)}")
    if any(t < 0 for t in targets):
        raise ValueError("targets must be non-negative")
    rng = np.random.default_rng(seed)
    keep: set[int] = set()
    for c in ALL_CLASSES:
        idx = [i for i, rec in enumerate(manifest.records) if rec.label == c]
        target = int(targets[c.value])
        if len(idx) <= target:
            keep.update(idx)
        else:
            chosen = rng.choice(len(idx), size=target, replace=False)
            keep.update(idx[j] for j in chosen)
    kept = tuple(rec for i, rec in enumerate(manifest.records) if i in keep)
    return replace(manifest, records=kept)


def assign_folds(
    labels: Sequence[int] | np.ndarray,
    k: int,
    seed: int,
    stratified: bool = True,
) -> np.ndarray:
    """Assign each position to a fold in [0, k).

    Fold sizes differ by at most one; when stratified, per-class fold counts
    also differ by at most one. Deterministic under (labels, k, seed,
    stratified).
    """
    n = len(labels)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"k={k} exceeds record count {n}")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    if not stratified:
        order = rng.permutation(n)
        base, rem = divmod(n, k)
        start = 0
        for f in range(k):
            size = base + (1 if f < rem else 0)
            folds[order[start : start + size]] = f
            start += size
        return folds
    labels = np.asarray(labels)
    # Rotate the fold that receives each class's leftover records so the
    # leftovers themselves spread evenly and total sizes stay within one.
    offset = 0
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        for j, i in enumerate(idx):
            folds[i] = (offset + j) % k
        offset = (offset + len(idx)) % k
    return folds


def split_kfold(
    manifest: DatasetManifest,
    k: int,
    seed: int = 0,
    stratified: bool = True,
) -> FoldPlan:
    """Partition a manifest into k folds, stratified by class by default."""
    folds = assign_folds(manifest.labels(), k, seed, stratified)
    assignment = {rec.id: int(folds[i]) for i, rec in enumerate(manifest.records)}
    return FoldPlan(k=k, assignment=assignment)


def save_fold_plan(plan: FoldPlan, path: str | Path) -> None:
    """Serialize a fold plan as a two-column id,fold CSV."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "fold"])
        for rid, fold in plan.assignment.items():
            writer.writerow([rid, fold])


def load_fold_plan(path: str | Path) -> FoldPlan:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        assignment = {row["id"]: int(row["fold"]) for row in reader}
    if not assignment:
        raise ManifestError(f"{path}: no fold assignments")
    return FoldPlan(k=max(assignment.values()) + 1, assignment=assignment)


def histogram_table(hist: ClassHistogram) -> str:
    """Render a histogram as a small aligned text table."""
    width = max(len(n) for n, _ in hist.as_rows())
    lines = [f"{name:<{width}}  {count:>6d}" for name, count in hist.as_rows()]
    lines.append(f"{'total':<{width}}  {hist.total:>6d}")
    return "\n".join(lines)
