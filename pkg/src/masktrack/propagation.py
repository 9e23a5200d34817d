"""Tracking core: memory buffer, deterministic propagation backend, recovery.

The backend stands in for a learned video-object-segmentation model with a
fully deterministic pipeline: normalized cross-correlation locates each
instance near its last known position, a color model refines the mask by
region growing, and two fallbacks (bounding-box recovery, full-frame
re-detection) bring back lost or reappearing instances under their original
labels. New objects are never created: the instance set is fixed by the
initial or corrected annotation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import cv2
import numpy as np
from scipy import ndimage

from . import raster
from .model import AdvancedParams, Frame, InstanceLabel, LabeledFrame, Polygon
from .raster import BBox

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


def should_memorize(frame_index: int, start_index: int, mem_every: int) -> bool:
    """True when ``frame_index`` lands on the memory schedule after the start.

    The start frame itself is the permanent memory, never a working entry.
    """
    if frame_index < start_index:
        raise ValueError("frame_index precedes the start of the run")
    if mem_every < 1:
        raise ValueError("mem_every must be >= 1")
    offset = frame_index - start_index
    return offset > 0 and offset % mem_every == 0


@dataclass(frozen=True)
class ColorModel:
    """Mean RGB and an 8x8x8 quantized histogram of an instance's pixels."""

    mean: np.ndarray
    histogram: np.ndarray
    count: int

    @classmethod
    def from_pixels(cls, pixels: np.ndarray, mask: np.ndarray) -> "ColorModel":
        samples = pixels[np.asarray(mask, bool)].astype(np.float64)
        if len(samples) == 0:
            raise ValueError("cannot build a color model from an empty mask")
        quant = (samples.astype(np.int64) // 32).clip(0, 7)
        flat = quant[:, 0] * 64 + quant[:, 1] * 8 + quant[:, 2]
        hist = np.bincount(flat, minlength=512).reshape(8, 8, 8)
        return cls(mean=samples.mean(axis=0), histogram=hist, count=len(samples))

    def distance(self, colors: np.ndarray) -> np.ndarray:
        """Euclidean RGB distance from each color to the model mean."""
        diff = colors.astype(np.float64) - self.mean
        return np.sqrt((diff * diff).sum(axis=-1))


@dataclass
class MemoryEntry:
    """One remembered frame: pixels plus the instance masks present in it."""

    frame_index: int
    pixels: np.ndarray
    masks: dict[InstanceLabel, np.ndarray]


class MemoryBuffer:
    """Permanent ground-truth entry plus a FIFO of working memory frames.

    Working entries arrive in strictly increasing frame order; pushing past
    capacity evicts the oldest. The permanent entry is never evicted and
    fixes the instance set for the whole run.
    """

    def __init__(self, permanent: MemoryEntry, mem_every: int = 1, t_max: int = 5):
        if not permanent.masks:
            raise ValueError("permanent memory needs at least one instance mask")
        if mem_every < 1 or t_max < 1:
            raise ValueError("mem_every and t_max must be >= 1")
        self.permanent = permanent
        self.mem_every = mem_every
        self.t_max = t_max
        self.working: deque[MemoryEntry] = deque()
        self.color_models = {
            label: ColorModel.from_pixels(permanent.pixels, mask)
            for label, mask in permanent.masks.items()
        }

    @property
    def labels(self) -> list[InstanceLabel]:
        return sorted(self.permanent.masks, key=lambda lab: lab.sort_key)

    def push(self, entry: MemoryEntry) -> None:
        if self.working and entry.frame_index <= self.working[-1].frame_index:
            raise ValueError(
                f"out-of-order memory push: {entry.frame_index} after "
                f"{self.working[-1].frame_index}"
            )
        if entry.frame_index <= self.permanent.frame_index:
            raise ValueError("memory entry precedes the permanent frame")
        self.working.append(entry)
        while len(self.working) > self.t_max:
            self.working.popleft()

    def working_indices(self) -> list[int]:
        return [e.frame_index for e in self.working]

    def reference_for(self, label: InstanceLabel) -> MemoryEntry:
        """Most recent working entry containing the instance, else permanent."""
        for entry in reversed(self.working):
            if label in entry.masks:
                return entry
        return self.permanent

    def last_seen(self, label: InstanceLabel) -> tuple[BBox, int]:
        """Bounding box and area from the most recent frame with the instance."""
        entry = self.reference_for(label)
        mask = entry.masks[label]
        return raster.bbox(mask), int(np.count_nonzero(mask))


class PredictionStatus(Enum):
    TRACKED = "tracked"
    RECOVERED = "recovered"
    ABSENT = "absent"


class AbsentReason(Enum):
    MISSING = "missing"
    LOW_CONFIDENCE = "low_confidence"


@dataclass
class InstancePrediction:
    label: InstanceLabel
    mask: np.ndarray
    confidence: float
    status: PredictionStatus
    absent_reason: Optional[AbsentReason] = None


@dataclass
class Prediction:
    frame_index: int
    instances: dict[InstanceLabel, InstancePrediction] = field(default_factory=dict)

    def absent_labels(self) -> list[InstanceLabel]:
        return [
            lab
            for lab, inst in self.instances.items()
            if inst.status is PredictionStatus.ABSENT
        ]

    def assigned_masks(self) -> list[np.ndarray]:
        return [
            inst.mask
            for inst in self.instances.values()
            if inst.status is not PredictionStatus.ABSENT
        ]


def _translate_mask(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask)
    src_y0, src_y1 = max(0, -dy), min(h, h - dy)
    src_x0, src_x1 = max(0, -dx), min(w, w - dx)
    if src_y0 >= src_y1 or src_x0 >= src_x1:
        return out
    out[src_y0 + dy : src_y1 + dy, src_x0 + dx : src_x1 + dx] = mask[
        src_y0:src_y1, src_x0:src_x1
    ]
    return out


def _locate(
    ref_pixels: np.ndarray,
    ref_bbox: BBox,
    query: np.ndarray,
    radius: int,
) -> tuple[int, int, float]:
    """Best (dx, dy) of the reference patch in the query frame, plus NCC score."""
    template = np.ascontiguousarray(
        ref_pixels[ref_bbox.y1 : ref_bbox.y2 + 1, ref_bbox.x1 : ref_bbox.x2 + 1]
    )
    if float(template.std()) == 0.0:
        return 0, 0, 0.0
    h, w = query.shape[:2]
    wx1 = max(0, ref_bbox.x1 - radius)
    wy1 = max(0, ref_bbox.y1 - radius)
    wx2 = min(w - 1, ref_bbox.x2 + radius)
    wy2 = min(h - 1, ref_bbox.y2 + radius)
    window = np.ascontiguousarray(query[wy1 : wy2 + 1, wx1 : wx2 + 1])
    response = cv2.matchTemplate(window, template, cv2.TM_CCOEFF_NORMED)
    my, mx = np.unravel_index(int(np.argmax(response)), response.shape)
    score = float(response[my, mx])
    dx = (wx1 + int(mx)) - ref_bbox.x1
    dy = (wy1 + int(my)) - ref_bbox.y1
    return dx, dy, score


def _grow_region(
    pixels: np.ndarray,
    seeds: np.ndarray,
    model: ColorModel,
    tau_color: float,
    bounds: BBox,
) -> np.ndarray:
    """4-connected region growing from seed pixels over color-similar pixels."""
    h, w = pixels.shape[:2]
    out = np.zeros((h, w), dtype=bool)
    crop = pixels[bounds.y1 : bounds.y2 + 1, bounds.x1 : bounds.x2 + 1]
    color_ok = model.distance(crop) <= tau_color
    seed_crop = seeds[bounds.y1 : bounds.y2 + 1, bounds.x1 : bounds.x2 + 1] & color_ok
    if not seed_crop.any():
        return out
    labels, _ = ndimage.label(color_ok, structure=_FOUR_CONN)
    seed_ids = np.unique(labels[seed_crop])
    seed_ids = seed_ids[seed_ids > 0]
    region = np.isin(labels, seed_ids)
    out[bounds.y1 : bounds.y2 + 1, bounds.x1 : bounds.x2 + 1] = region
    return out


def propagate(buffer: MemoryBuffer, frame: Frame, params: AdvancedParams) -> Prediction:
    """Predict every known instance in ``frame`` from the memory buffer.

    Per instance: locate the reference patch by NCC within the search radius
    of its last position, translate the reference mask there, refine by
    color-model region growing inside the 1.5x expanded box, then resolve
    overlaps pixel-wise toward the closer color model. Confidence mixes the
    NCC score and the translate/refine agreement; instances falling under
    the area or confidence floors are marked absent for the recovery stage.
    """
    if frame.index <= buffer.permanent.frame_index:
        raise ValueError("query frame must follow the permanent memory frame")
    if buffer.working and frame.index <= buffer.working[-1].frame_index:
        raise ValueError("query frame must follow all working memory entries")
    query = np.ascontiguousarray(frame.pixels)
    labels = buffer.labels
    raw_masks: dict[InstanceLabel, np.ndarray] = {}
    confidences: dict[InstanceLabel, float] = {}

    for label in labels:
        ref = buffer.reference_for(label)
        ref_mask = ref.masks[label]
        ref_box = raster.bbox(ref_mask)
        dx, dy, ncc = _locate(ref.pixels, ref_box, query, params.search_radius)
        translated = _translate_mask(ref_mask, dx, dy)
        if translated.any():
            bounds = raster.bbox(translated).expanded(1.5, frame.width, frame.height)
            refined = _grow_region(
                query, translated, buffer.color_models[label], params.tau_color, bounds
            )
        else:
            refined = translated
        conf = 0.5 * ncc + 0.5 * raster.iou(translated, refined)
        raw_masks[label] = refined
        confidences[label] = float(np.clip(conf, 0.0, 1.0))

    _resolve_overlaps(raw_masks, query, buffer, labels)

    prediction = Prediction(frame_index=frame.index)
    for label in labels:
        mask = raw_masks[label]
        area = int(np.count_nonzero(mask))
        conf = confidences[label]
        if area == 0 or area < params.min_area:
            prediction.instances[label] = InstancePrediction(
                label,
                np.zeros_like(mask),
                0.0,
                PredictionStatus.ABSENT,
                AbsentReason.MISSING,
            )
        elif conf < params.conf_threshold:
            prediction.instances[label] = InstancePrediction(
                label,
                np.zeros_like(mask),
                conf,
                PredictionStatus.ABSENT,
                AbsentReason.LOW_CONFIDENCE,
            )
        else:
            prediction.instances[label] = InstancePrediction(
                label, mask, conf, PredictionStatus.TRACKED
            )
    return prediction


def _resolve_overlaps(
    masks: dict[InstanceLabel, np.ndarray],
    query: np.ndarray,
    buffer: MemoryBuffer,
    labels: list[InstanceLabel],
) -> None:
    """Assign contested pixels to the nearer color model; ties to lower ordinal."""
    present = [lab for lab in labels if masks[lab].any()]
    if len(present) < 2:
        return
    stack = np.stack([masks[lab] for lab in present])
    contested = stack.sum(axis=0) > 1
    if not contested.any():
        return
    colors = query[contested]
    dists = np.stack(
        [buffer.color_models[lab].distance(colors) for lab in present]
    )
    # pixels an instance does not even claim must not win them
    claims = stack[:, contested]
    dists[~claims] = np.inf
    winner = np.argmin(dists, axis=0)  # first minimum wins: lower ordinal
    for i, lab in enumerate(present):
        keep = masks[lab].copy()
        lose = contested.copy()
        lose[contested] = winner != i
        keep &= ~lose
        masks[lab] = keep


def recover(
    frame: Frame,
    label: InstanceLabel,
    last_bbox: BBox,
    last_area: int,
    color_model: ColorModel,
    params: AdvancedParams,
) -> Optional[tuple[np.ndarray, float]]:
    """Bounding-box fallback for a missed instance.

    Searches the last box expanded 2x for color-matching pixels; the largest
    component is accepted when its area is within 0.25x-4x of the last known
    area. Confidence is min(ratio, 1/ratio). Returns None when nothing
    acceptable is found.
    """
    if last_area <= 0:
        return None
    box = last_bbox.expanded(2.0, frame.width, frame.height)
    crop = frame.pixels[box.y1 : box.y2 + 1, box.x1 : box.x2 + 1]
    color_ok = color_model.distance(crop) <= params.tau_color
    if not color_ok.any():
        return None
    components = raster.connected_components(color_ok)
    comp, area = components[0]
    if area < params.min_area:
        return None
    ratio = area / last_area
    if not 0.25 <= ratio <= 4.0:
        return None
    mask = np.zeros((frame.height, frame.width), dtype=bool)
    mask[box.y1 : box.y2 + 1, box.x1 : box.x2 + 1] = comp
    confidence = float(min(ratio, 1.0 / ratio))
    return mask, confidence


def global_redetect(
    frame: Frame,
    prediction: Prediction,
    buffer: MemoryBuffer,
    params: AdvancedParams,
    last_areas: dict[InstanceLabel, int],
) -> None:
    """Full-frame re-identification of still-absent instances.

    Each absent instance proposes its largest color-matching component that
    sits inside the 0.25x-4x area band and overlaps no assigned mask beyond
    IoU 0.3. A component contested by several instances goes to the one with
    the smaller mean-color distance; losers re-propose. Reclaimed masks keep
    their original labels.
    """
    pending = [
        lab for lab in prediction.absent_labels() if last_areas.get(lab, 0) > 0
    ]
    if not pending:
        return
    candidates: dict[InstanceLabel, list[tuple[np.ndarray, int]]] = {}
    for label in pending:
        color_ok = buffer.color_models[label].distance(frame.pixels) <= params.tau_color
        comps = raster.connected_components(color_ok) if color_ok.any() else []
        band = []
        for comp, area in comps:
            if area < params.min_area:
                continue
            ratio = area / last_areas[label]
            if 0.25 <= ratio <= 4.0:
                band.append((comp, area))
        candidates[label] = band

    while pending:
        assigned = prediction.assigned_masks()
        proposals: dict[InstanceLabel, tuple[np.ndarray, int]] = {}
        for label in list(pending):
            best = None
            for comp, area in candidates[label]:
                if all(raster.iou(comp, m) <= 0.3 for m in assigned):
                    best = (comp, area)
                    break  # components are area-sorted: first valid is largest
            if best is None:
                pending.remove(label)
            else:
                proposals[label] = best
        if not proposals:
            break
        # resolve contested components by mean-color distance
        order = sorted(proposals, key=lambda lab: lab.sort_key)
        winners: list[InstanceLabel] = []
        taken: list[np.ndarray] = []
        scores = {}
        for label in order:
            comp, _ = proposals[label]
            mean_color = frame.pixels[comp].astype(np.float64).mean(axis=0)
            scores[label] = float(
                np.linalg.norm(mean_color - buffer.color_models[label].mean)
            )
        for label in sorted(order, key=lambda lab: (scores[lab], lab.sort_key)):
            comp, _ = proposals[label]
            if any(raster.iou(comp, t) > 0.3 for t in taken):
                continue  # lost a contested component; re-propose next round
            winners.append(label)
            taken.append(comp)
        for label in winners:
            comp, _area = proposals[label]
            mask = comp.copy()
            for m in prediction.assigned_masks():
                mask &= ~m
            final_area = int(np.count_nonzero(mask))
            if final_area < params.min_area:
                pending.remove(label)
                continue
            ratio = final_area / last_areas[label]
            confidence = float(min(ratio, 1.0 / ratio))
            prediction.instances[label] = InstancePrediction(
                label, mask, confidence, PredictionStatus.RECOVERED
            )
            pending.remove(label)


def autolabel(frame: Frame, prompt: str, params: AdvancedParams) -> LabeledFrame:
    """Detect and label all instances matching a text prompt in one frame.

    The deterministic detector takes the background color from the modal
    8x8x8 histogram bin of the four 16x16 corner patches; everything farther
    than tau_color from it is foreground. Components of at least min_area
    become instances named ``{prompt}_{k}``, numbered in raster order of
    their centroids, each carrying polygons simplified at epsilon.
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    pixels = frame.pixels
    h, w = pixels.shape[:2]
    ph, pw = min(16, h), min(16, w)
    patches = np.concatenate(
        [
            pixels[:ph, :pw].reshape(-1, 3),
            pixels[:ph, w - pw :].reshape(-1, 3),
            pixels[h - ph :, :pw].reshape(-1, 3),
            pixels[h - ph :, w - pw :].reshape(-1, 3),
        ]
    )
    quant = (patches.astype(np.int64) // 32).clip(0, 7)
    flat = quant[:, 0] * 64 + quant[:, 1] * 8 + quant[:, 2]
    hist = np.bincount(flat, minlength=512)
    modal = int(np.argmax(hist))
    bg_color = patches[flat == modal].astype(np.float64).mean(axis=0)

    diff = pixels.astype(np.float64) - bg_color
    foreground = np.sqrt((diff * diff).sum(axis=-1)) > params.tau_color
    components = [
        (comp, area, raster.centroid(comp))
        for comp, area in (raster.connected_components(foreground) if foreground.any() else [])
        if area >= params.min_area
    ]
    # raster order of centroids: top-to-bottom, then left-to-right
    components.sort(key=lambda item: (item[2][1], item[2][0]))

    from .model import Annotation, AnnotationSource

    annotations = {}
    k = 0
    for comp, _area, _c in components:
        label = InstanceLabel(prompt, k)
        polygons = raster.mask_to_polygons(comp, params.epsilon, params.min_area, label)
        if not polygons:
            continue
        annotations[label] = Annotation(polygons=polygons, mask=comp)
        k += 1
    return LabeledFrame(frame.index, annotations, AnnotationSource.GROUND_TRUTH)


def point_prompt(frame: Frame, x: int, y: int, params: AdvancedParams) -> Polygon:
    """Segment the object under a single click and return its polygon.

    Grows a 4-connected region of pixels within tau_color of the clicked
    pixel's color; the region must stay under half the frame area (a click
    on the background errors out). The polygon comes back unlabeled.
    """
    from .model import RegionTooLargeError

    h, w = frame.height, frame.width
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"point ({x}, {y}) outside the frame")
    seed_color = frame.pixels[y, x].astype(np.float64)
    diff = frame.pixels.astype(np.float64) - seed_color
    color_ok = np.sqrt((diff * diff).sum(axis=-1)) <= params.tau_color
    labels, _ = ndimage.label(color_ok, structure=_FOUR_CONN)
    region = labels == labels[y, x]
    area = int(np.count_nonzero(region))
    if area >= 0.5 * h * w:
        raise RegionTooLargeError(
            f"prompted region covers {area} px, at least half the frame"
        )
    polygons = raster.mask_to_polygons(region, params.epsilon, min_area=1)
    if not polygons:
        raise ValueError("clicked region is too small to outline")
    return polygons[0]
