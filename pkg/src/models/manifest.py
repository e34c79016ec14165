"""
Data model for a quality-assessment dataset: stimuli, MOS labels and folds.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional


class ManifestError(ValueError):
    """Raised when a manifest violates its CSV or content contract."""


@dataclass(frozen=True)
class ManifestEntry:
    """One stimulus with its subjective score."""

    path: str
    mos: float
    reference_id: str
    fold: Optional[int] = None


@dataclass
class DatasetManifest:
    """Ordered stimulus list, as read from the manifest CSV."""

    entries: List[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.path in seen:
                raise ManifestError(f"duplicate path in manifest: {entry.path}")
            seen.add(entry.path)
            if not math.isfinite(entry.mos):
                raise ManifestError(f"non-finite mos for {entry.path}: {entry.mos}")

        folds = self.fold_ids()
        if folds and folds != list(range(len(folds))):
            raise ManifestError(f"fold ids must be contiguous from 0, got {folds}")

    def __len__(self) -> int:
        return len(self.entries)

    def has_folds(self) -> bool:
        return any(e.fold is not None for e in self.entries)

    def fold_ids(self) -> List[int]:
        return sorted({e.fold for e in self.entries if e.fold is not None})

    def reference_ids(self) -> List[str]:
        """Distinct reference ids in first-appearance order."""
        return list(dict.fromkeys(e.reference_id for e in self.entries))

    def mos_values(self) -> List[float]:
        return [e.mos for e in self.entries]

    def subset(self, reference_ids: Iterable[str]) -> "DatasetManifest":
        """Entries whose reference is in `reference_ids`, file order kept, folds cleared."""
        wanted = set(reference_ids)
        return DatasetManifest(
            [replace(e, fold=None) for e in self.entries if e.reference_id in wanted]
        )

    def with_folds(self, fold_of_reference: Dict[str, int]) -> "DatasetManifest":
        return DatasetManifest(
            [replace(e, fold=fold_of_reference[e.reference_id]) for e in self.entries]
        )
