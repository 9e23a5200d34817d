"""COCO run-length encoding of binary masks, including the compressed counts string.

The scan is column-major (top-to-bottom, then left-to-right) and runs
alternate starting with a run of zeros, matching the de facto COCO
convention so exported segmentations stay consumable by standard tooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FormatError


@dataclass(frozen=True)
class RleCounts:
    """Run lengths of the column-major scan; first run counts zeros."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ValueError("mask dimensions must be positive")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise FormatError(
                f"run lengths sum to {total}, expected {self.height * self.width}"
            )
        if any(c == 0 for c in self.counts[1:]):
            raise FormatError("zero-length run after the first")
        if any(c < 0 for c in self.counts):
            raise FormatError("negative run length")


@dataclass(frozen=True)
class RleRecord:
    """Compressed form: size plus the printable-ASCII counts string."""

    height: int
    width: int
    counts: str

    def serialize(self) -> str:
        """The text field embedded in tracking CSVs."""
        return "{'size': [%d, %d], 'counts': '%s'}" % (self.height, self.width, self.counts)


def encode_counts(mask: np.ndarray) -> RleCounts:
    """Run-length encode a binary mask (column-major scan)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError("mask must be a non-empty 2-D array")
    h, w = mask.shape
    flat = mask.ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return RleCounts(h, w, tuple(int(r) for r in runs))


def decode_counts(rle: RleCounts) -> np.ndarray:
    """Inverse of :func:`encode_counts`."""
    total = rle.height * rle.width
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in rle.counts:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape((rle.width, rle.height)).T.copy()


def counts_to_string(counts: tuple[int, ...] | list[int]) -> str:
    """Compress run lengths into the COCO ASCII string.

    Counts from the third position on are delta-coded against the count two
    places back; each signed value is emitted in 5-bit little-endian chunks
    with the 6th bit as a continuation flag, each chunk offset by 48.
    """
    chars = []
    counts = list(counts)
    for i, count in enumerate(counts):
        x = count - counts[i - 2] if i >= 3 else count
        while True:
            chunk = x & 0x1F
            x >>= 5
            more = (x != -1) if (chunk & 0x10) else (x != 0)
            if more:
                chunk |= 0x20
            chars.append(chr(chunk + 48))
            if not more:
                break
    return "".join(chars)


def string_to_counts(text: str) -> tuple[int, ...]:
    """Inverse of :func:`counts_to_string`."""
    counts: list[int] = []
    pos = 0
    n = len(text)
    while pos < n:
        x = 0
        k = 0
        while True:
            if pos >= n:
                raise FormatError("dangling continuation bit in RLE string")
            c = ord(text[pos]) - 48
            if not 0 <= c <= 63:
                raise FormatError(f"RLE string byte out of range at {pos}")
            x |= (c & 0x1F) << (5 * k)
            pos += 1
            k += 1
            if not c & 0x20:
                if c & 0x10:
                    x |= -1 << (5 * k)
                break
        if len(counts) >= 3:
            x += counts[-2]
        if x < 0:
            raise FormatError("negative run length after delta decoding")
        counts.append(x)
    return tuple(counts)


def to_record(mask: np.ndarray) -> RleRecord:
    rle = encode_counts(mask)
    return RleRecord(rle.height, rle.width, counts_to_string(rle.counts))


def from_record(record: RleRecord) -> np.ndarray:
    counts = string_to_counts(record.counts)
    return decode_counts(RleCounts(record.height, record.width, counts))


def record_to_dict(record: RleRecord) -> dict:
    return {"size": [record.height, record.width], "counts": record.counts}


def record_from_dict(data: dict) -> RleRecord:
    try:
        h, w = data["size"]
        counts = data["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed RLE record: {data!r}") from exc
    if not isinstance(counts, str):
        raise FormatError("RLE counts must be a string")
    return RleRecord(int(h), int(w), counts)
