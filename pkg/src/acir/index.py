"""Binary-code gallery index.

Exact Hamming-ball search by linear scan over packed 64-bit words (the
popcount kernels in ``_kernels`` carry the hot loop), per-class hash
centres by componentwise majority, multilevel content similarity, and the
content-guided ranked retrieval: Hamming distance ascending first, content
similarity descending second, record id as the final deterministic
tie-break.

Readers may share an index freely; mutation (add/load) needs exclusive
access.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .codes import BinaryCode, words_for_bits
from .errors import (
    BitWidthMismatchError,
    ChecksumMismatchError,
    EmptyClassError,
    FormatError,
    FormatVersionMismatchError,
    ShapeError,
    ZeroVarianceError,
)
from .loss import pearson_similarity

INDEX_MAGIC = b"ACIRIDX1"
INDEX_VERSION = 1


@dataclass
class GalleryRecord:
    """One indexed image: id, packed code, per-level embeddings, class label."""

    id: str
    code: BinaryCode
    levels: list
    label: int


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked (id, hamming distance, content similarity) rows, best first."""

    entries: list
    is_ood: bool = False


def content_similarity(query_levels, record_levels) -> float:
    """Mean Pearson correlation across matching embedding levels.

    A constant level carries no directional information; it contributes 0
    (with a warning) instead of aborting the ranking.
    """
    if len(query_levels) != len(record_levels):
        raise ShapeError(
            f"level count mismatch: {len(query_levels)} vs {len(record_levels)}"
        )
    total = 0.0
    for q, r in zip(query_levels, record_levels):
        try:
            total += pearson_similarity(q, r)
        except ZeroVarianceError:
            warnings.warn(
                "constant embedding level treated as similarity 0", stacklevel=2
            )
    return total / len(query_levels)


class GalleryIndex:
    """In-memory gallery of binary codes plus multilevel embeddings."""

    def __init__(self, nbits: int, level_dims):
        self.nbits = nbits
        self.level_dims = tuple(int(d) for d in level_dims)
        self.records: list[GalleryRecord] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: GalleryRecord) -> None:
        if record.code.nbits != self.nbits:
            raise BitWidthMismatchError(
                f"record {record.id}: {record.code.nbits} bits, index uses {self.nbits}"
            )
        dims = tuple(np.asarray(v).shape[0] for v in record.levels)
        if dims != self.level_dims:
            raise ShapeError(
                f"record {record.id}: level dims {dims}, index uses {self.level_dims}"
            )
        self.records.append(record)
        self._matrix = None

    def _code_matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack([r.code.words for r in self.records])
        return self._matrix

    def distances(self, code: BinaryCode) -> np.ndarray:
        """Hamming distance from the query code to every record."""
        if code.nbits != self.nbits:
            raise BitWidthMismatchError(
                f"query has {code.nbits} bits, index uses {self.nbits}"
            )
        if not self.records:
            return np.empty(0, dtype=np.uint32)
        return _kernels.hamming_many(code.words, self._code_matrix())

    def search_ball(self, code: BinaryCode, radius: int) -> set:
        """Ids of all records within Hamming distance ``radius``."""
        dists = self.distances(code)
        return {self.records[i].id for i in np.flatnonzero(dists <= radius)}

    def hash_centres(self) -> dict:
        """Per-class representative: sign of the mean of +-1-valued codes,
        ties resolved toward bit 1."""
        if not self.records:
            raise EmptyClassError("empty index has no hash centres")
        by_label: dict[int, list] = {}
        for r in self.records:
            by_label.setdefault(r.label, []).append(r.code.to_bits())
        centres = {}
        for label, bit_rows in sorted(by_label.items()):
            signed = np.mean(np.asarray(bit_rows, dtype=np.float64) * 2.0 - 1.0, axis=0)
            centres[label] = BinaryCode.from_bits((signed >= 0.0).astype(np.uint8))
        return centres

    def ranked_retrieve(
        self, code: BinaryCode, query_levels, k: int, radius: int
    ) -> RetrievalResult:
        """Ball candidates ordered by (distance asc, similarity desc, id asc),
        truncated to the top k. Similarity is computed for ball members only."""
        dists = self.distances(code)
        rows = []
        for i in np.flatnonzero(dists <= radius):
            record = self.records[i]
            sim = content_similarity(query_levels, record.levels)
            rows.append((record.id, int(dists[i]), sim))
        rows.sort(key=lambda row: (row[1], -row[2], row[0]))
        return RetrievalResult(entries=rows[:k])

    def labels_for(self, ids) -> list:
        lookup = {r.id: r.label for r in self.records}
        return [lookup[i] for i in ids]

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        parts = [INDEX_MAGIC]
        parts.append(
            struct.pack(
                "<IIQI",
                INDEX_VERSION,
                self.nbits,
                len(self.records),
                len(self.level_dims),
            )
        )
        parts.append(struct.pack(f"<{len(self.level_dims)}I", *self.level_dims))
        for r in self.records:
            encoded = r.id.encode("utf-8")
            parts.append(struct.pack("<I", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<I", r.label))
            parts.append(r.code.words.astype("<u8").tobytes())
            for vec in r.levels:
                parts.append(np.asarray(vec, dtype="<f4").tobytes())
        body = b"".join(parts)
        Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))

    @classmethod
    def load(cls, path) -> "GalleryIndex":
        data = Path(path).read_bytes()
        if len(data) < len(INDEX_MAGIC) + 4 or not data.startswith(INDEX_MAGIC):
            raise FormatError(f"{path}: not an index file")
        offset = len(INDEX_MAGIC)
        (version,) = struct.unpack_from("<I", data, offset)
        if version != INDEX_VERSION:
            raise FormatVersionMismatchError(
                f"{path}: unsupported index version {version}"
            )
        (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
        if zlib.crc32(data[:-4]) != stored_crc:
            raise ChecksumMismatchError(
                f"{path}: checksum mismatch (corrupt or truncated)"
            )
        offset += 4
        nbits, count, n_levels = struct.unpack_from("<IQI", data, offset)
        offset += 16
        level_dims = struct.unpack_from(f"<{n_levels}I", data, offset)
        offset += 4 * n_levels

        index = cls(nbits=nbits, level_dims=level_dims)
        nwords = words_for_bits(nbits)
        for _ in range(count):
            (id_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            rec_id = data[offset : offset + id_len].decode("utf-8")
            offset += id_len
            (label,) = struct.unpack_from("<I", data, offset)
            offset += 4
            words = np.frombuffer(data, dtype="<u8", count=nwords, offset=offset)
            offset += 8 * nwords
            levels = []
            for dim in level_dims:
                levels.append(
                    np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(
                        np.float32
                    )
                )
                offset += 4 * dim
            index.add(
                GalleryRecord(
                    id=rec_id,
                    code=BinaryCode(words=words.astype(np.uint64), nbits=nbits),
                    levels=levels,
                    label=int(label),
                )
            )
        if offset != len(data) - 4:
            raise FormatError(f"{path}: trailing bytes after record table")
        return index
