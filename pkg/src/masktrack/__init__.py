"""Markerless multi-instance video tracking from a single annotated frame.

Annotate one frame, propagate instance masks across the whole video through
a FIFO memory buffer, pause on tracking errors for human correction, and
export bit-exact annotation files (LabelMe JSON, tracked/tracking CSVs with
COCO RLE segmentations).
"""

from .model import (
    AdvancedParams,
    Annotation,
    AnnotationSource,
    FormatError,
    Frame,
    InstanceLabel,
    LabeledFrame,
    MaskTrackError,
    Polygon,
    RegionTooLargeError,
    SessionStateError,
    next_label,
    parse_label,
)
from .propagation import (
    ColorModel,
    MemoryBuffer,
    MemoryEntry,
    Prediction,
    PredictionStatus,
    autolabel,
    global_redetect,
    point_prompt,
    propagate,
    recover,
    should_memorize,
)
from .session import Event, EventType, PauseCause, Session, SessionStatus, create_session
from .synth import EvalReport, SceneSpec, evaluate, generate, preset, preset_names

__version__ = "0.1.0"

__all__ = [
    "AdvancedParams",
    "Annotation",
    "AnnotationSource",
    "ColorModel",
    "EvalReport",
    "Event",
    "EventType",
    "FormatError",
    "Frame",
    "InstanceLabel",
    "LabeledFrame",
    "MaskTrackError",
    "MemoryBuffer",
    "MemoryEntry",
    "PauseCause",
    "Polygon",
    "Prediction",
    "PredictionStatus",
    "RegionTooLargeError",
    "SceneSpec",
    "Session",
    "SessionStateError",
    "SessionStatus",
    "autolabel",
    "create_session",
    "evaluate",
    "generate",
    "global_redetect",
    "next_label",
    "parse_label",
    "point_prompt",
    "preset",
    "preset_names",
    "propagate",
    "recover",
    "should_memorize",
]
