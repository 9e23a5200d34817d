"""Shared domain types: frames, instance labels, polygons, labeled frames, parameters."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np


class MaskTrackError(Exception):
    """Base class for errors raised by this package."""


class FormatError(MaskTrackError):
    """Malformed serialized data (RLE string, LabelMe JSON, CSV)."""


class SessionStateError(MaskTrackError):
    """Operation not valid in the session's current state."""


class RegionTooLargeError(MaskTrackError):
    """Point prompt landed on a region covering too much of the frame."""


_LABEL_RE = re.compile(r"^(?P<name>.+)_(?P<ordinal>\d+)$")


@dataclass(frozen=True)
class InstanceLabel:
    """One tracked instance, identified by class name plus sequential number.

    The display form is ``{class_name}_{ordinal}``; labels parsed from bare
    class names (no numeric suffix) carry ``ordinal=None`` and display as the
    class name alone.
    """

    class_name: str
    ordinal: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.class_name:
            raise FormatError("instance label needs a non-empty class name")
        if self.ordinal is not None and self.ordinal < 0:
            raise ValueError("ordinal must be non-negative")

    def __str__(self) -> str:
        if self.ordinal is None:
            return self.class_name
        return f"{self.class_name}_{self.ordinal}"

    @property
    def display(self) -> str:
        return str(self)

    @property
    def sort_key(self) -> tuple[str, int]:
        # bare labels (no ordinal) sort before numbered ones of the same class
        return (self.class_name, -1 if self.ordinal is None else self.ordinal)


def parse_label(text: str) -> InstanceLabel:
    """Parse a display-form label; the ordinal is the final ``_<digits>`` suffix.

    Bare class names (no suffix) parse with ``ordinal=None``.
    """
    if not text:
        raise FormatError("empty instance label")
    m = _LABEL_RE.match(text)
    if m:
        return InstanceLabel(m.group("name"), int(m.group("ordinal")))
    return InstanceLabel(text, None)


def next_label(class_name: str, existing: Iterable[InstanceLabel]) -> InstanceLabel:
    """Smallest unused ordinal for ``class_name`` among ``existing``, starting at 0."""
    if not class_name:
        raise ValueError("class_name must be non-empty")
    used = {
        lab.ordinal
        for lab in existing
        if lab.class_name == class_name and lab.ordinal is not None
    }
    ordinal = 0
    while ordinal in used:
        ordinal += 1
    return InstanceLabel(class_name, ordinal)


@dataclass(frozen=True)
class Frame:
    """One decoded video image.

    ``pixels`` is a (height, width, 3) uint8 RGB array; ``fps`` is carried from
    the video source as an exact rational so timestamps like 125/3 fps
    serialize without drift.
    """

    index: int
    pixels: np.ndarray
    fps: Fraction = Fraction(30)

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("frame index must be non-negative")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must be (H, W, 3)")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Polygon:
    """Closed vertex ring in pixel coordinates; last vertex connects to first.

    ``label`` may be None for freshly prompted polygons the caller has not
    named yet.
    """

    vertices: np.ndarray
    label: Optional[InstanceLabel] = None

    def __post_init__(self) -> None:
        verts = np.asarray(self.vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise ValueError("polygon needs at least 3 (x, y) vertices")
        object.__setattr__(self, "vertices", verts)

    def __len__(self) -> int:
        return len(self.vertices)

    def with_label(self, label: InstanceLabel) -> "Polygon":
        return Polygon(self.vertices, label)


class AnnotationSource(Enum):
    GROUND_TRUTH = "ground_truth"
    PREDICTED = "predicted"
    CORRECTED = "corrected"


@dataclass
class Annotation:
    """Shapes for one instance in one frame: polygons and/or a binary mask."""

    polygons: list[Polygon] = field(default_factory=list)
    mask: Optional[np.ndarray] = None

    def resolve_mask(self, width: int, height: int) -> np.ndarray:
        """The stored mask, or the union rasterization of the polygons."""
        from . import raster

        if self.mask is not None:
            return self.mask
        out = np.zeros((height, width), dtype=bool)
        for poly in self.polygons:
            out |= raster.polygon_to_mask(poly, width, height)
        return out


@dataclass
class LabeledFrame:
    """Annotations for one frame, keyed by instance label.

    The session refuses to store an empty ground-truth/corrected frame;
    transient empty results (an autolabel run that found nothing) are legal.
    """

    frame_index: int
    annotations: dict[InstanceLabel, Annotation]
    source: AnnotationSource = AnnotationSource.GROUND_TRUTH

    @property
    def labels(self) -> list[InstanceLabel]:
        return list(self.annotations)

    def __bool__(self) -> bool:
        return bool(self.annotations)


@dataclass(frozen=True)
class AdvancedParams:
    """Tunables exposed to the user before a prediction run.

    ``epsilon`` weights polygon precision (higher: fewer vertices),
    ``mem_every`` (r) is the stride between memory-frame captures and
    ``t_max`` the FIFO working-memory capacity. The remaining fields govern
    the deterministic propagation backend and error recovery.
    """

    epsilon: float = 2.0
    mem_every: int = 1
    t_max: int = 5
    auto_pause: bool = True
    recovery_enabled: bool = True
    conf_threshold: float = 0.5
    min_area: int = 10
    tau_color: float = 40.0
    search_radius: int = 32

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.mem_every < 1:
            raise ValueError("mem_every must be >= 1")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not 0 < self.conf_threshold < 1:
            raise ValueError("conf_threshold must be in (0, 1)")
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")
        if not 0 <= self.tau_color <= 442:
            raise ValueError("tau_color must be within the RGB distance range")
        if self.search_radius < 1:
            raise ValueError("search_radius must be >= 1")

    def updated(self, **changes) -> "AdvancedParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "mem_every": self.mem_every,
            "t_max": self.t_max,
            "auto_pause": self.auto_pause,
            "recovery_enabled": self.recovery_enabled,
            "conf_threshold": self.conf_threshold,
            "min_area": self.min_area,
            "tau_color": self.tau_color,
            "search_radius": self.search_radius,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdvancedParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise FormatError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**data)
