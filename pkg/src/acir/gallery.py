"""On-disk gallery layout: one tensor file per array, plus a labels CSV.

A record with id ``x`` is stored as ``x.emb.acirt`` (hash embedding),
``x.lvl<i>.acirt`` (per-level embeddings), ``x.fp.acirt`` (fingerprint)
and optionally ``x.res.acirt`` (its reconstruction residual, one scalar).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensorio import read_tensor, write_tensor

LABELS_FILENAME = "labels.csv"


def write_labels(path, labels: dict) -> None:
    rows = [f"{rec_id},{label}" for rec_id, label in sorted(labels.items())]
    Path(path).write_text("id,label\n" + "\n".join(rows) + "\n")


def read_labels(path) -> dict:
    """Parse an ``id,label`` CSV; the header row is required."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "id,label":
        raise FormatError(f"{path}: expected 'id,label' header")
    labels = {}
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'id,label'")
        try:
            labels[parts[0]] = int(parts[1])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: label must be an integer") from exc
    return labels


def save_record_files(
    directory, rec_id: str, embedding, levels, fingerprint=None, residual=None
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / f"{rec_id}.emb.acirt", embedding)
    for i, level in enumerate(levels):
        write_tensor(directory / f"{rec_id}.lvl{i}.acirt", level)
    if fingerprint is not None:
        write_tensor(directory / f"{rec_id}.fp.acirt", fingerprint)
    if residual is not None:
        write_tensor(directory / f"{rec_id}.res.acirt", np.asarray([residual]))


def load_embedding(directory, rec_id: str) -> np.ndarray:
    return read_tensor(Path(directory) / f"{rec_id}.emb.acirt")


def load_levels(directory, rec_id: str) -> list:
    directory = Path(directory)
    paths = sorted(
        directory.glob(f"{rec_id}.lvl*.acirt"),
        key=lambda p: int(p.name[len(rec_id) + 4 : -6]),
    )
    if not paths:
        raise FormatError(f"no level files for record {rec_id!r} in {directory}")
    return [read_tensor(p) for p in paths]


def load_fingerprint(directory, rec_id: str) -> np.ndarray:
    return read_tensor(Path(directory) / f"{rec_id}.fp.acirt")


def load_residual(directory, rec_id: str):
    path = Path(directory) / f"{rec_id}.res.acirt"
    if not path.exists():
        return None
    return float(read_tensor(path)[0])
