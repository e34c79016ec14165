"""
Import dataset manifests (path, mos, reference_id[, fold]) from CSV.
"""
import io
import logging
import math
from pathlib import Path
from typing import Union

import pandas as pd

from src.models.manifest import DatasetManifest, ManifestEntry, ManifestError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ['path', 'mos', 'reference_id']
OPTIONAL_COLUMNS = ['fold']


class ManifestLoader:
    """Read and write manifest CSV files."""

    @staticmethod
    def load_manifest(text: str) -> DatasetManifest:
        """
        Parse manifest CSV text. One entry per data row, in file order.
        Raises ManifestError on a bad header, unparsable mos or fold, or duplicate paths.
        """
        try:
            df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ManifestError(f"unreadable manifest CSV: {e}")

        columns = [c.strip() for c in df.columns]
        if columns not in (REQUIRED_COLUMNS, REQUIRED_COLUMNS + OPTIONAL_COLUMNS):
            raise ManifestError(
                f"manifest header must be path,mos,reference_id[,fold], got {','.join(columns)}"
            )
        df.columns = columns
        has_fold = 'fold' in columns

        entries = []
        for idx, row in df.iterrows():
            path = row['path'].strip()
            try:
                mos = float(row['mos'])
            except ValueError:
                raise ManifestError(f"row {idx + 1}: unparsable mos {row['mos']!r} for {path}")
            if not math.isfinite(mos):
                raise ManifestError(f"row {idx + 1}: non-finite mos for {path}")

            fold = None
            if has_fold:
                try:
                    fold = int(row['fold'].strip())
                except ValueError:
                    raise ManifestError(f"row {idx + 1}: fold {row['fold']!r} is not an integer")

            entries.append(ManifestEntry(path=path, mos=mos,
                                         reference_id=row['reference_id'].strip(), fold=fold))

        manifest = DatasetManifest(entries)
        logger.debug("✓ Parsed manifest: %d stimuli, %d references",
                     len(manifest), len(manifest.reference_ids()))
        return manifest

    @staticmethod
    def load_manifest_file(path: Union[str, Path]) -> DatasetManifest:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Manifest not found: {path}")
        return ManifestLoader.load_manifest(path.read_text(encoding='utf-8'))

    @staticmethod
    def save_manifest(manifest: DatasetManifest) -> str:
        """CSV text for a manifest; the fold column is written only when folds are set."""
        records = [
            {'path': e.path, 'mos': repr(e.mos), 'reference_id': e.reference_id,
             'fold': '' if e.fold is None else str(e.fold)}
            for e in manifest.entries
        ]
        columns = REQUIRED_COLUMNS + (OPTIONAL_COLUMNS if manifest.has_folds() else [])
        df = pd.DataFrame(records, columns=REQUIRED_COLUMNS + OPTIONAL_COLUMNS)[columns]
        return df.to_csv(index=False, lineterminator='\n')
