"""Video sources: PNG image sequences, in-memory arrays, synthetic scenes, files."""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from PIL import Image

from .model import Frame, MaskTrackError
from .synth import SceneSpec, generate

FRAME_FILE_DIGITS = 9


class VideoOpenError(MaskTrackError):
    """Source path missing, undecodable, or lacking frame-rate information."""


@runtime_checkable
class VideoSource(Protocol):
    """Anything that can hand out decoded frames by index."""

    name: str
    fps: Fraction

    @property
    def frame_count(self) -> int: ...

    @property
    def width(self) -> int: ...

    @property
    def height(self) -> int: ...

    def get_frame(self, index: int) -> Frame: ...


class ArraySource:
    """Frames already decoded into memory."""

    def __init__(self, frames: Sequence[np.ndarray], fps: Fraction, name: str = "video"):
        if not frames:
            raise VideoOpenError("no frames")
        self._frames = [np.asarray(f, dtype=np.uint8) for f in frames]
        shape = self._frames[0].shape
        if any(f.shape != shape for f in self._frames):
            raise VideoOpenError("frames have inconsistent dimensions")
        self.fps = Fraction(fps)
        self.name = name

    @property
    def frame_count(self) -> int:
        return len(self._frames)

    @property
    def height(self) -> int:
        return self._frames[0].shape[0]

    @property
    def width(self) -> int:
        return self._frames[0].shape[1]

    def get_frame(self, index: int) -> Frame:
        if not 0 <= index < len(self._frames):
            raise IndexError(f"frame {index} out of range 0..{len(self._frames) - 1}")
        return Frame(index=index, pixels=self._frames[index], fps=self.fps)


class SyntheticSource(ArraySource):
    """Frames rendered from a scene spec; ground truth kept alongside."""

    def __init__(self, spec: SceneSpec):
        frames, truths = generate(spec)
        super().__init__(frames, spec.fps, name=spec.name)
        self.spec = spec
        self.truths = truths


class ImageSequenceSource(ArraySource):
    """A directory of numbered PNG frames plus an ``fps.json`` sidecar.

    This is the lossless on-disk video format written by the synthesizer;
    codec round-trips would break bit-exact determinism.
    """

    def __init__(self, directory: str | Path):
        directory = Path(directory)
        if not directory.is_dir():
            raise VideoOpenError(f"not a directory: {directory}")
        frame_dir = directory / "frames" if (directory / "frames").is_dir() else directory
        paths = sorted(frame_dir.glob("*.png"))
        if not paths:
            raise VideoOpenError(f"no PNG frames under {directory}")
        sidecar = directory / "fps.json"
        if not sidecar.is_file():
            raise VideoOpenError(f"missing fps sidecar: {sidecar}")
        try:
            num, den = json.loads(sidecar.read_text())["fps"]
        except (KeyError, ValueError, TypeError) as exc:
            raise VideoOpenError(f"malformed fps sidecar: {sidecar}") from exc
        frames = [np.asarray(Image.open(p).convert("RGB")) for p in paths]
        super().__init__(frames, Fraction(num, den), name=directory.name)
        self.directory = directory


class VideoFileSource(ArraySource):
    """Decode a real video file via OpenCV (not used by the test suite)."""

    def __init__(self, path: str | Path):
        import cv2

        path = Path(path)
        if not path.is_file():
            raise VideoOpenError(f"no such file: {path}")
        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise VideoOpenError(f"cannot decode {path}")
        fps_value = cap.get(cv2.CAP_PROP_FPS)
        if not fps_value or fps_value <= 0:
            raise VideoOpenError(f"cannot extract fps from {path}")
        frames = []
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            frames.append(frame[:, :, ::-1].copy())  # BGR -> RGB
        cap.release()
        if not frames:
            raise VideoOpenError(f"no frames decoded from {path}")
        super().__init__(frames, Fraction(fps_value).limit_denominator(1001), name=path.stem)


def frame_file_name(index: int) -> str:
    return f"{index:0{FRAME_FILE_DIGITS}d}.png"


def write_sequence(
    directory: str | Path,
    frames: Sequence[np.ndarray],
    fps: Fraction,
    truths: Sequence[Sequence[np.ndarray]] | None = None,
    spec: SceneSpec | None = None,
) -> Path:
    """Write frames as a PNG sequence with sidecars (fps, spec, ground truth)."""
    from . import rle

    directory = Path(directory)
    frame_dir = directory / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        Image.fromarray(frame).save(frame_dir / frame_file_name(i))
    (directory / "fps.json").write_text(
        json.dumps({"fps": [fps.numerator, fps.denominator]}) + "\n"
    )
    if spec is not None:
        (directory / "scene.json").write_text(spec.to_json() + "\n")
    if truths is not None:
        payload = []
        for frame_masks in truths:
            payload.append(
                [rle.record_to_dict(rle.to_record(m)) if m.any() else None for m in frame_masks]
            )
        (directory / "ground_truth.json").write_text(json.dumps(payload) + "\n")
    return directory


def read_ground_truth(directory: str | Path) -> list[list[np.ndarray]]:
    """Load the ground-truth masks written by :func:`write_sequence`."""
    from . import rle

    path = Path(directory) / "ground_truth.json"
    if not path.is_file():
        raise VideoOpenError(f"missing ground truth: {path}")
    payload = json.loads(path.read_text())
    truths = []
    size = None
    for frame_masks in payload:
        masks = []
        for item in frame_masks:
            if item is None:
                masks.append(None)
            else:
                mask = rle.from_record(rle.record_from_dict(item))
                size = mask.shape
                masks.append(mask)
        truths.append(masks)
    if size is None:
        raise VideoOpenError("ground truth contains no non-empty masks")
    empty = np.zeros(size, dtype=bool)
    return [[m if m is not None else empty for m in frame] for frame in truths]


def open_source(spec: str | Path | dict | SceneSpec) -> VideoSource:
    """Open a source given a directory, video file, scene-spec dict, or SceneSpec."""
    if isinstance(spec, SceneSpec):
        return SyntheticSource(spec)
    if isinstance(spec, dict):
        return SyntheticSource(SceneSpec.from_dict(spec))
    path = Path(spec)
    if path.is_dir():
        return ImageSequenceSource(path)
    if path.suffix.lower() == ".json" and path.is_file():
        return SyntheticSource(SceneSpec.from_json(path.read_text()))
    if path.is_file():
        return VideoFileSource(path)
    raise VideoOpenError(f"cannot open video source: {spec}")
