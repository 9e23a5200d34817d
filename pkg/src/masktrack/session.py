"""Human-in-the-loop tracking sessions: start/stop, auto-pause, corrections, export.

One session owns one video. Prediction runs on a worker thread and halts
only at frame boundaries; corrections truncate every prediction past the
corrected frame and rebuild the permanent memory, after which the run can be
restarted from that point. All mutations serialize through the session lock
and surface as ordered events.
"""

from __future__ import annotations

import json
import logging
import threading
import zipfile
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as annio
from . import flow as flowmod
from . import raster, rle
from .model import (
    AdvancedParams,
    Annotation,
    AnnotationSource,
    InstanceLabel,
    LabeledFrame,
    SessionStateError,
    parse_label,
)
from .propagation import (
    AbsentReason,
    MemoryBuffer,
    MemoryEntry,
    PredictionStatus,
    global_redetect,
    propagate,
    recover,
    should_memorize,
)
from .video import VideoSource, frame_file_name

logger = logging.getLogger(__name__)


class SessionStatus(Enum):
    IDLE = "idle"
    PREDICTING = "predicting"
    PAUSED = "paused"
    COMPLETED = "completed"


class PauseCause(Enum):
    MISSING = "missing"
    LOW_CONFIDENCE = "low_confidence"
    USER_STOP = "user_stop"


class EventType(Enum):
    PROGRESS = "progress"
    PAUSED = "paused"
    STOPPED = "stopped"
    TRUNCATED = "truncated"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass(frozen=True)
class Event:
    seq: int
    type: EventType
    frame: Optional[int] = None
    instance: Optional[str] = None
    cause: Optional[str] = None
    message: Optional[str] = None

    def to_dict(self) -> dict:
        d: dict = {"seq": self.seq, "type": self.type.value}
        for key in ("frame", "instance", "cause", "message"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        return d


class Session:
    """State machine over a video source plus its annotation store."""

    def __init__(self, source: VideoSource, params: AdvancedParams | None = None):
        self.source = source
        self.params = params or AdvancedParams()
        self.annotations: dict[int, LabeledFrame] = {}
        self.last_predicted: Optional[int] = None
        self.status = SessionStatus.IDLE
        self.paused_frame: Optional[int] = None
        self.paused_cause: Optional[PauseCause] = None
        self.paused_instance: Optional[str] = None
        self._events: list[Event] = []
        self._lock = threading.RLock()
        self._event_cond = threading.Condition(self._lock)
        self._worker: Optional[threading.Thread] = None
        self._stop_requested = False

    # --- events ------------------------------------------------------------

    def _emit(self, type_: EventType, **fields) -> None:
        with self._event_cond:
            event = Event(seq=len(self._events) + 1, type=type_, **fields)
            self._events.append(event)
            self._event_cond.notify_all()

    def poll_events(self, since: int = 0) -> list[Event]:
        """All events with sequence number greater than ``since``, in order."""
        with self._lock:
            if since >= len(self._events):
                return []
            return self._events[since:]

    def wait_events(self, since: int = 0, timeout: float = 25.0) -> list[Event]:
        """Long-poll variant of :meth:`poll_events`."""
        import time

        end = time.monotonic() + timeout
        with self._event_cond:
            while len(self._events) <= since:
                remaining = end - time.monotonic()
                if remaining <= 0 or self.status is not SessionStatus.PREDICTING:
                    break
                self._event_cond.wait(remaining)
            return self._events[since:] if since < len(self._events) else []

    # --- annotation store ----------------------------------------------------

    def governing_annotation(self, frame_index: int) -> Optional[LabeledFrame]:
        """Latest ground-truth/corrected frame at or before ``frame_index``."""
        best = None
        for idx, labeled in self.annotations.items():
            if idx <= frame_index and labeled.source is not AnnotationSource.PREDICTED:
                if best is None or idx > best.frame_index:
                    best = labeled
        return best

    def instance_order(self) -> list[InstanceLabel]:
        """Canonical instance order: labels of the latest GT/corrected frame."""
        anchors = [
            lf
            for lf in self.annotations.values()
            if lf.source is not AnnotationSource.PREDICTED
        ]
        if not anchors:
            return []
        latest = max(anchors, key=lambda lf: lf.frame_index)
        return sorted(latest.annotations, key=lambda lab: lab.sort_key)

    def set_annotation(self, frame_index: int, labeled: LabeledFrame) -> None:
        """Store a human annotation and drop every prediction past it.

        The first annotation of a session is ground truth; later ones are
        corrections. Both rebuild the permanent memory at the next run.
        """
        with self._lock:
            if self.status is SessionStatus.PREDICTING:
                raise SessionStateError("stop the prediction before annotating")
            if not 0 <= frame_index < self.source.frame_count:
                raise ValueError(f"frame {frame_index} out of range")
            if not labeled.annotations:
                raise ValueError("annotated frames need at least one instance")
            has_anchor = any(
                lf.source is not AnnotationSource.PREDICTED
                for lf in self.annotations.values()
            )
            source = AnnotationSource.CORRECTED if has_anchor else AnnotationSource.GROUND_TRUTH
            stored = LabeledFrame(frame_index, dict(labeled.annotations), source)
            removed = [
                idx
                for idx, lf in self.annotations.items()
                if idx > frame_index and lf.source is AnnotationSource.PREDICTED
            ]
            for idx in removed:
                del self.annotations[idx]
            self.annotations[frame_index] = stored
            predicted = [
                idx
                for idx, lf in self.annotations.items()
                if lf.source is AnnotationSource.PREDICTED
            ]
            self.last_predicted = max(predicted) if predicted else None
            if self.status is SessionStatus.COMPLETED:
                self.status = SessionStatus.IDLE
        self._emit(EventType.TRUNCATED, frame=frame_index + 1)

    # --- prediction ----------------------------------------------------------

    def start_prediction(self, from_frame: int, wait: bool = False) -> None:
        """Launch the prediction worker from an annotated frame.

        With ``wait=True`` the call blocks until the run pauses, completes,
        or is stopped (the batch/CLI mode).
        """
        with self._lock:
            if self.status is SessionStatus.PREDICTING:
                raise SessionStateError("a prediction run is already active")
            anchor = self.annotations.get(from_frame)
            if anchor is None or anchor.source is AnnotationSource.PREDICTED:
                raise SessionStateError(
                    f"no ground-truth/corrected annotation at frame {from_frame}"
                )
            self._stop_requested = False
            self.status = SessionStatus.PREDICTING
            self.paused_frame = None
            self.paused_cause = None
            self.paused_instance = None
            worker = threading.Thread(
                target=self._run, args=(from_frame,), name="masktrack-predict", daemon=True
            )
            self._worker = worker
        worker.start()
        if wait:
            worker.join()

    def wait_until_done(self) -> None:
        worker = self._worker
        if worker is not None:
            worker.join()

    def stop(self) -> None:
        """Halt the run at the next frame boundary; no-op unless predicting."""
        with self._lock:
            if self.status is not SessionStatus.PREDICTING:
                return
            self._stop_requested = True
            worker = self._worker
        if worker is not None:
            worker.join()

    def set_params(self, params: AdvancedParams) -> None:
        with self._lock:
            if self.status is SessionStatus.PREDICTING:
                raise SessionStateError("cannot change parameters while predicting")
            self.params = params

    def _build_buffer(self, from_frame: int) -> MemoryBuffer:
        anchor = self.annotations[from_frame]
        pixels = self.source.get_frame(from_frame).pixels
        masks = {}
        for label, annotation in anchor.annotations.items():
            mask = annotation.resolve_mask(self.source.width, self.source.height)
            if mask.any():
                masks[label] = mask
        if not masks:
            raise SessionStateError(f"annotation at frame {from_frame} has no pixels")
        entry = MemoryEntry(from_frame, pixels, masks)
        return MemoryBuffer(entry, self.params.mem_every, self.params.t_max)

    def _run(self, from_frame: int) -> None:
        try:
            params = self.params
            buffer = self._build_buffer(from_frame)
            for t in range(from_frame + 1, self.source.frame_count):
                with self._lock:
                    if self._stop_requested:
                        self.status = SessionStatus.PAUSED
                        self.paused_frame = self.last_predicted
                        self.paused_cause = PauseCause.USER_STOP
                        self._emit(EventType.STOPPED, frame=self.last_predicted)
                        return
                frame = self.source.get_frame(t)
                prediction = propagate(buffer, frame, params)
                if params.recovery_enabled:
                    assigned = prediction.assigned_masks()
                    for label in prediction.absent_labels():
                        last_bbox, last_area = buffer.last_seen(label)
                        result = recover(
                            frame, label, last_bbox, last_area,
                            buffer.color_models[label], params,
                        )
                        if result is None:
                            continue
                        mask, confidence = result
                        for other in assigned:
                            mask &= ~other
                        if np.count_nonzero(mask) < params.min_area:
                            continue
                        inst = prediction.instances[label]
                        inst.mask = mask
                        inst.confidence = confidence
                        inst.status = PredictionStatus.RECOVERED
                        inst.absent_reason = None
                        assigned.append(mask)
                last_areas = {
                    label: buffer.last_seen(label)[1]
                    for label in prediction.absent_labels()
                }
                global_redetect(frame, prediction, buffer, params, last_areas)

                self._store_prediction(t, prediction, params)
                if should_memorize(t, from_frame, params.mem_every):
                    present = {
                        label: inst.mask
                        for label, inst in prediction.instances.items()
                        if inst.status is not PredictionStatus.ABSENT
                    }
                    if present:
                        buffer.push(MemoryEntry(t, frame.pixels, present))
                self._emit(EventType.PROGRESS, frame=t)

                absent = prediction.absent_labels()
                if absent:
                    first = absent[0]
                    reason = prediction.instances[first].absent_reason
                    cause = (
                        PauseCause.LOW_CONFIDENCE
                        if reason is AbsentReason.LOW_CONFIDENCE
                        else PauseCause.MISSING
                    )
                    if params.auto_pause:
                        with self._lock:
                            self.status = SessionStatus.PAUSED
                            self.paused_frame = t
                            self.paused_cause = cause
                            self.paused_instance = str(first)
                        self._emit(
                            EventType.PAUSED,
                            frame=t,
                            instance=str(first),
                            cause=cause.value,
                        )
                        return
                    logger.info(
                        "frame %d: instance %s %s (auto-pause off, continuing)",
                        t, first, cause.value,
                    )
            with self._lock:
                self.status = SessionStatus.COMPLETED
            self._emit(EventType.COMPLETED, frame=self.last_predicted)
        except Exception as exc:  # defensive: surface worker crashes as events
            logger.exception("prediction worker failed")
            with self._lock:
                self.status = SessionStatus.IDLE
            self._emit(EventType.FAILED, message=f"{type(exc).__name__}: {exc}")

    def _store_prediction(self, frame_index, prediction, params) -> LabeledFrame:
        annotations: dict[InstanceLabel, Annotation] = {}
        for label, inst in prediction.instances.items():
            if inst.status is PredictionStatus.ABSENT:
                continue
            polygons = raster.mask_to_polygons(
                inst.mask, params.epsilon, params.min_area, label
            )
            annotations[label] = Annotation(polygons=polygons, mask=inst.mask)
        labeled = LabeledFrame(frame_index, annotations, AnnotationSource.PREDICTED)
        with self._lock:
            self.annotations[frame_index] = labeled
            self.last_predicted = frame_index
        return labeled

    # --- export ----------------------------------------------------------------

    def exported_frames(self) -> list[int]:
        """Annotated frame indices from the first anchor on, in order."""
        anchors = [
            idx
            for idx, lf in self.annotations.items()
            if lf.source is not AnnotationSource.PREDICTED
        ]
        if not anchors:
            return []
        start = min(anchors)
        return sorted(idx for idx in self.annotations if idx >= start)

    def frame_masks(self, frame_index: int) -> dict[InstanceLabel, np.ndarray]:
        """Non-empty instance masks of one annotated frame, in canonical order."""
        labeled = self.annotations.get(frame_index)
        if labeled is None:
            return {}
        order = {lab: i for i, lab in enumerate(self.instance_order())}
        masks = {}
        for label in sorted(
            labeled.annotations, key=lambda lab: order.get(lab, len(order))
        ):
            mask = labeled.annotations[label].resolve_mask(
                self.source.width, self.source.height
            )
            if mask.any():
                masks[label] = mask
        return masks

    def tracked_records(self) -> list[annio.TrackedRecord]:
        """Rows for the tracked CSV: centroid and motion index per instance."""
        records: list[annio.TrackedRecord] = []
        frames = self.exported_frames()
        first = frames[0] if frames else None
        for idx in frames:
            masks = self.frame_masks(idx)
            flow_field = None
            if idx != first and masks:
                roi = np.zeros((self.source.height, self.source.width), dtype=bool)
                for mask in masks.values():
                    roi |= mask
                flow_field = flowmod.dense_flow(
                    self.source.get_frame(idx - 1).pixels,
                    self.source.get_frame(idx).pixels,
                    radius=self.params.search_radius,
                    roi_mask=roi,
                )
            for label, mask in masks.items():
                cx, cy = raster.centroid(mask)
                if idx == first:
                    motion = flowmod.FIRST_FRAME_MOTION
                else:
                    motion = flowmod.motion_index(flow_field, mask)
                records.append(
                    annio.TrackedRecord(idx, str(label), cx, cy, motion)
                )
        return records

    def tracking_records(self) -> list[annio.TrackingRecord]:
        """Rows for the tracking CSV: bbox, centroid, RLE segmentation."""
        records: list[annio.TrackingRecord] = []
        for idx in self.exported_frames():
            for label, mask in self.frame_masks(idx).items():
                box = raster.bbox(mask)
                cx, cy = raster.centroid(mask)
                records.append(
                    annio.TrackingRecord(
                        frame_number=idx,
                        instance_name=str(label),
                        x1=float(box.x1),
                        y1=float(box.y1),
                        x2=float(box.x2),
                        y2=float(box.y2),
                        cx=cx,
                        cy=cy,
                        segmentation=rle.to_record(mask),
                    )
                )
        return records

    def tracked_csv_bytes(self) -> bytes:
        return annio.tracked_csv_bytes(self.tracked_records(), self.source.fps)

    def tracking_csv_bytes(self) -> bytes:
        return annio.tracking_csv_bytes(self.tracking_records())

    def labelme_files(self) -> list[tuple[str, bytes]]:
        """(file name, bytes) for every annotated frame, in frame order."""
        files = []
        for idx in self.exported_frames():
            labeled = self.annotations[idx]
            name = annio.json_filename(self.source.name, idx)
            files.append(
                (
                    name,
                    annio.labelme_bytes(
                        labeled,
                        self.source.width,
                        self.source.height,
                        image_path=frame_file_name(idx),
                    ),
                )
            )
        return files

    def labelme_zip_bytes(self) -> bytes:
        import io as _io

        buf = _io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, payload in self.labelme_files():
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, payload)
        return buf.getvalue()

    def store_dict(self) -> dict:
        """Machine-readable session state for export directories."""
        frames = {}
        for idx in sorted(self.annotations):
            labeled = self.annotations[idx]
            instances = {}
            for label in sorted(labeled.annotations, key=lambda lab: lab.sort_key):
                mask = labeled.annotations[label].resolve_mask(
                    self.source.width, self.source.height
                )
                if not mask.any():
                    continue
                instances[str(label)] = rle.record_to_dict(rle.to_record(mask))
            frames[str(idx)] = {"source": labeled.source.value, "instances": instances}
        return {
            "video_name": self.source.name,
            "fps": [self.source.fps.numerator, self.source.fps.denominator],
            "width": self.source.width,
            "height": self.source.height,
            "frame_count": self.source.frame_count,
            "params": self.params.to_dict(),
            "last_predicted": self.last_predicted,
            "status": self.status.value,
            "instance_order": [str(lab) for lab in self.instance_order()],
            "events": [e.to_dict() for e in self.poll_events(0)],
            "frames": frames,
        }

    def export_dir(self, parent: str | Path) -> Path:
        """Write the guide-layout export: ``<parent>/<video>/`` with JSONs + CSVs."""
        out = Path(parent) / self.source.name
        out.mkdir(parents=True, exist_ok=True)
        for name, payload in self.labelme_files():
            (out / name).write_bytes(payload)
        (out / f"{self.source.name}_tracked.csv").write_bytes(self.tracked_csv_bytes())
        (out / f"{self.source.name}_tracking.csv").write_bytes(self.tracking_csv_bytes())
        (out / "session.json").write_text(
            json.dumps(self.store_dict(), indent=2, sort_keys=True) + "\n"
        )
        return out

    def predictions_by_frame(self) -> list[dict[str, np.ndarray]]:
        """Per-frame mask maps over the whole video (empty where unannotated)."""
        out: list[dict[str, np.ndarray]] = []
        for idx in range(self.source.frame_count):
            out.append({str(lab): m for lab, m in self.frame_masks(idx).items()})
        return out


def create_session(source, params: AdvancedParams | None = None) -> Session:
    """Open a video source (path, scene spec, or VideoSource) as a fresh session."""
    from .synth import SceneSpec
    from .video import open_source

    if isinstance(source, (str, Path, dict, SceneSpec)):
        source = open_source(source)
    return Session(source, params)


def load_store(path: str | Path) -> dict:
    """Read a session.json store written by :meth:`Session.export_dir`."""
    path = Path(path)
    if path.is_dir():
        path = path / "session.json"
    data = json.loads(path.read_text())
    return data


def store_predictions(store: dict) -> list[dict[str, np.ndarray]]:
    """Per-frame mask maps from a session store (empty dict where absent)."""
    frame_count = store["frame_count"]
    out: list[dict[str, np.ndarray]] = [dict() for _ in range(frame_count)]
    for idx_str, payload in store["frames"].items():
        masks = {}
        for name, record in payload["instances"].items():
            masks[name] = rle.from_record(rle.record_from_dict(record))
        out[int(idx_str)] = masks
    return out
