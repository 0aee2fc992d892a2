"""Dataset manifest: UTF-8 CSV with columns patient_id, path, label."""
from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import pandas as pd

from ..core.errors import ManifestError

MANIFEST_COLUMNS = ("patient_id", "path", "label")


@dataclass(frozen=True)
class ManifestRow:
    patient_id: str
    path: str
    label: Optional[int] = None


def load_manifest(path: str | Path) -> List[ManifestRow]:
    """Read rows; relative volume paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype="string", keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise ManifestError("Manifest is empty", str(path)) from e
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"Manifest lacks columns: {', '.join(missing)}", str(path))
    for column in MANIFEST_COLUMNS:
        frame[column] = frame[column].str.strip()

    bad = ~frame["label"].isin(["", "0", "1"])
    if bad.any():
        first = int(bad.to_numpy().argmax())
        raise ManifestError(f"Line {first + 2}: label must be 0, 1 or empty, got '{frame['label'].iloc[first]}'",
                            str(path))
    repeated = frame["patient_id"].duplicated()
    if repeated.any():
        raise ManifestError(f"Repeated patient ids: {', '.join(frame.loc[repeated, 'patient_id'].unique())}",
                            str(path))
    labels = frame["label"].replace("", pd.NA).astype("Int64")

    rows: List[ManifestRow] = []
    for patient_id, volume_path, label in zip(frame["patient_id"], frame["path"], labels):
        volume_path = Path(volume_path)
        if not volume_path.is_absolute():
            volume_path = path.parent / volume_path
        rows.append(ManifestRow(patient_id=str(patient_id), path=str(volume_path),
                                label=None if pd.isna(label) else int(label)))
    return rows


def write_manifest(path: str | Path, rows: Iterable[ManifestRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    frame = pd.DataFrame({
        "patient_id": pd.array([r.patient_id for r in rows], dtype="string"),
        "path": pd.array([r.path for r in rows], dtype="string"),
        "label": pd.array([r.label for r in rows], dtype="Int64"),
    })
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path
