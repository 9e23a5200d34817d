"""Bit-exact annotation formats: LabelMe JSON, tracked/tracking CSVs, timestamps.

The CSV layouts mirror the tool's export conventions: ``<video>_tracked.csv``
carries centroids and the motion index per frame and instance,
``<video>_tracking.csv`` carries bounding boxes and the full COCO RLE
segmentation so masks reload exactly.
"""

from __future__ import annotations

import ast
import csv
import json
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rle
from .model import (
    Annotation,
    AnnotationSource,
    FormatError,
    InstanceLabel,
    LabeledFrame,
    parse_label,
)

LABELME_VERSION = "5.2.1"
TRACKED_HEADER = ["frame_number", "instance_name", "cx", "cy", "motion_index", "timestamps"]
TRACKING_HEADER = [
    "frame_number",
    "x1",
    "y1",
    "x2",
    "y2",
    "cx",
    "cy",
    "instance_name",
    "segmentation",
]

_JSON_NAME_RE = re.compile(r"^(?P<video>.+)_(?P<frame>\d{9})\.json$")


def json_filename(video_name: str, frame_index: int) -> str:
    """Per-frame annotation file name: ``{video}_{frame:09d}.json``.

    Nine digits keep lexicographic and numeric ordering identical.
    """
    if frame_index < 0:
        raise ValueError("frame index must be non-negative")
    return f"{video_name}_{frame_index:09d}.json"


def parse_json_filename(name: str) -> tuple[str, int]:
    m = _JSON_NAME_RE.match(Path(name).name)
    if not m:
        raise FormatError(f"not a per-frame annotation file name: {name}")
    return m.group("video"), int(m.group("frame"))


def format_timestamp(frame_index: int, fps: Fraction) -> str:
    """Frame time as ``HH:MM:SS`` or ``HH:MM:SS.mmm`` at millisecond precision."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    ms = round(Fraction(frame_index) * 1000 / fps)
    hours, rem = divmod(ms, 3_600_000)
    minutes, rem = divmod(rem, 60_000)
    seconds, milli = divmod(rem, 1_000)
    base = f"{hours:02d}:{minutes:02d}:{seconds:02d}"
    if milli == 0:
        return base
    return f"{base}.{milli:03d}"


# --- LabelMe-style per-frame JSON -----------------------------------------


def labelme_dict(
    labeled: LabeledFrame, image_w: int, image_h: int, image_path: str = ""
) -> dict:
    shapes = []
    for label, annotation in labeled.annotations.items():
        polygons = annotation.polygons
        if not polygons and annotation.mask is not None:
            from . import raster

            polygons = raster.mask_to_polygons(annotation.mask, label=label, min_area=1)
        for poly in polygons:
            shapes.append(
                {
                    "label": str(label),
                    "points": [[float(x), float(y)] for x, y in poly.vertices],
                    "group_id": None,
                    "shape_type": "polygon",
                    "flags": {},
                }
            )
    return {
        "version": LABELME_VERSION,
        "flags": {},
        "shapes": shapes,
        "imagePath": image_path,
        "imageData": None,
        "imageHeight": image_h,
        "imageWidth": image_w,
    }


def labelme_bytes(
    labeled: LabeledFrame, image_w: int, image_h: int, image_path: str = ""
) -> bytes:
    data = labelme_dict(labeled, image_w, image_h, image_path)
    return (json.dumps(data, indent=2) + "\n").encode("utf-8")


def write_labelme(
    labeled: LabeledFrame,
    image_w: int,
    image_h: int,
    path: str | Path,
    image_path: str = "",
) -> None:
    Path(path).write_bytes(labelme_bytes(labeled, image_w, image_h, image_path))


def labelme_from_dict(
    data: dict,
    frame_index: int = 0,
    source: AnnotationSource = AnnotationSource.GROUND_TRUTH,
) -> tuple[LabeledFrame, int, int]:
    """Parse a LabelMe-shaped dict into (labeled frame, width, height)."""
    from .model import Polygon

    try:
        shapes = data["shapes"]
        width = int(data["imageWidth"])
        height = int(data["imageHeight"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed annotation JSON: {exc}") from exc
    annotations: dict[InstanceLabel, Annotation] = {}
    for i, shape in enumerate(shapes):
        kind = shape.get("shape_type")
        if kind != "polygon":
            raise FormatError(
                f"shape {i} ({shape.get('label')!r}) has unsupported shape_type {kind!r}"
            )
        try:
            label = parse_label(shape["label"])
            points = np.asarray(shape["points"], dtype=np.float64)
            poly = Polygon(points, label)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"shape {i} is malformed: {exc}") from exc
        annotations.setdefault(label, Annotation()).polygons.append(poly)
    return LabeledFrame(frame_index, annotations, source), width, height


def read_labelme(path: str | Path) -> tuple[LabeledFrame, int, int]:
    """Read a per-frame annotation file; the frame index comes from the name."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path.name}: invalid JSON: {exc}") from exc
    try:
        _, frame_index = parse_json_filename(path.name)
    except FormatError:
        frame_index = 0
    return labelme_from_dict(data, frame_index)


# --- tracked CSV (centroids + motion index) --------------------------------


@dataclass(frozen=True)
class TrackedRecord:
    """One row of the tracked CSV, unrounded."""

    frame_number: int
    instance_name: str
    cx: float
    cy: float
    motion_index: float


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def tracked_csv_bytes(records: Iterable[TrackedRecord], fps: Fraction) -> bytes:
    lines = [",".join(TRACKED_HEADER)]
    for rec in records:
        lines.append(
            "%d,%s,%d,%d,%s,%s"
            % (
                rec.frame_number,
                rec.instance_name,
                _round_half_up(rec.cx),
                _round_half_up(rec.cy),
                str(round(rec.motion_index, 3)),
                format_timestamp(rec.frame_number, fps),
            )
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_tracked_csv(path: str | Path, records: Iterable[TrackedRecord], fps: Fraction) -> None:
    Path(path).write_bytes(tracked_csv_bytes(records, fps))


# --- tracking CSV (bboxes + RLE segmentation) -------------------------------


@dataclass(frozen=True)
class TrackingRecord:
    """One row of the tracking CSV; the mask rides along as compressed RLE."""

    frame_number: int
    instance_name: str
    x1: float
    y1: float
    x2: float
    y2: float
    cx: float
    cy: float
    segmentation: rle.RleRecord

    def mask(self) -> np.ndarray:
        return rle.from_record(self.segmentation)


def tracking_csv_bytes(records: Iterable[TrackingRecord]) -> bytes:
    import io as _io

    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACKING_HEADER)
    for rec in records:
        writer.writerow(
            [
                rec.frame_number,
                "%.1f" % rec.x1,
                "%.1f" % rec.y1,
                "%.1f" % rec.x2,
                "%.1f" % rec.y2,
                "%.2f" % rec.cx,
                "%.2f" % rec.cy,
                rec.instance_name,
                rec.segmentation.serialize(),
            ]
        )
    return buf.getvalue().encode("utf-8")


def write_tracking_csv(path: str | Path, records: Iterable[TrackingRecord]) -> None:
    Path(path).write_bytes(tracking_csv_bytes(records))


def read_tracking_csv(path: str | Path) -> list[TrackingRecord]:
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACKING_HEADER:
            raise FormatError(
                f"{path.name}: unexpected header {header!r}"
            )
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(TRACKING_HEADER):
                raise FormatError(f"{path.name}:{row_num}: wrong column count")
            frame = int(row[0])
            name = row[7]
            try:
                seg = ast.literal_eval(row[8])
                record = rle.record_from_dict(seg)
                rle.from_record(record)  # validates the counts string
            except (FormatError, ValueError, SyntaxError) as exc:
                raise FormatError(
                    f"{path.name}:{row_num}: corrupt segmentation for frame "
                    f"{frame} instance {name}: {exc}"
                ) from exc
            records.append(
                TrackingRecord(
                    frame_number=frame,
                    instance_name=name,
                    x1=float(row[1]),
                    y1=float(row[2]),
                    x2=float(row[3]),
                    y2=float(row[4]),
                    cx=float(row[5]),
                    cy=float(row[6]),
                    segmentation=record,
                )
            )
    return records


def tracking_records_to_frames(
    records: Sequence[TrackingRecord],
) -> dict[int, dict[str, np.ndarray]]:
    """Group tracking rows into per-frame mask maps."""
    frames: dict[int, dict[str, np.ndarray]] = {}
    for rec in records:
        frames.setdefault(rec.frame_number, {})[rec.instance_name] = rec.mask()
    return frames
