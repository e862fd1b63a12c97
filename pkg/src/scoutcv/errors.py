"""Exception types shared across the pipeline."""

from __future__ import annotations


class ScoutError(Exception):
    """Base class for all pipeline errors."""


class ManifestError(ScoutError):
    """Manifest file is malformed or violates a record invariant."""


class CacheError(ScoutError):
    """Feature cache file is corrupt, truncated, or stale."""


class StaleCacheError(CacheError):
    """Cache was produced by a different extractor than the one requested."""


class ModelFormatError(ScoutError):
    """Serialized head model or backbone file cannot be decoded."""


class TrainingDiverged(ScoutError):
    """Training produced a non-finite loss; carries the failing position."""

    def __init__(self, epoch: int, step: int, fold: int | None = None) -> None:
        where = f"epoch {epoch}, step {step}"
        if fold is not None:
            where = f"fold {fold}, {where}"
        super().__init__(f"non-finite loss at {where}")
        self.epoch = epoch
        self.step = step
        self.fold = fold


class SearchSpaceError(ScoutError):
    """Search space file is invalid or the grid exceeds the configured cap."""
