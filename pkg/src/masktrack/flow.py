"""Dense block-matching optical flow and the per-instance motion index."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

DEFAULT_BLOCK = 8


@dataclass(frozen=True)
class FlowField:
    """Per-pixel (dx, dy) displacement from the previous frame to the current one."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self) -> None:
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ValueError("dx/dy must be equal-shape 2-D arrays")

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape

    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.dx.astype(np.float64), self.dy.astype(np.float64))


@numba.njit(cache=True)
def _match_blocks(prev, cur, radius, y0s, y1s, x0s, x1s, out):  # pragma: no cover
    h, w = prev.shape[0], prev.shape[1]
    for bi in range(y0s.shape[0]):
        y0, y1, x0, x1 = y0s[bi], y1s[bi], x0s[bi], x1s[bi]
        bh, bw = y1 - y0, x1 - x0
        best_sad = np.int64(1) << 60
        best_mag = np.int64(1) << 60
        best_dy = 0
        best_dx = 0
        for dy in range(-radius, radius + 1):
            sy = y0 + dy
            if sy < 0 or sy + bh > h:
                continue
            for dx in range(-radius, radius + 1):
                sx = x0 + dx
                if sx < 0 or sx + bw > w:
                    continue
                sad = np.int64(0)
                aborted = False
                for yy in range(bh):
                    for xx in range(bw):
                        for c in range(3):
                            d = np.int64(prev[y0 + yy, x0 + xx, c]) - np.int64(
                                cur[sy + yy, sx + xx, c]
                            )
                            sad += d if d >= 0 else -d
                    if sad > best_sad:
                        aborted = True
                        break
                if aborted:
                    continue
                mag = np.int64(dy * dy + dx * dx)
                if sad < best_sad or (sad == best_sad and mag < best_mag):
                    best_sad = sad
                    best_mag = mag
                    best_dy = dy
                    best_dx = dx
        out[bi, 0] = best_dy
        out[bi, 1] = best_dx


def dense_flow(
    prev: np.ndarray,
    cur: np.ndarray,
    block: int = DEFAULT_BLOCK,
    radius: int = 32,
    roi_mask: np.ndarray | None = None,
) -> FlowField:
    """Exhaustive block-matching flow from ``prev`` to ``cur``.

    Each block takes the displacement minimizing the sum of absolute RGB
    differences within +-``radius``; ties prefer the smaller displacement
    magnitude, then the earlier candidate in raster order (dy outer, dx
    inner, both from -radius). The block's displacement is broadcast to its
    pixels. Candidates that would shift the block outside the frame are
    skipped; (0, 0) is always valid.

    ``roi_mask`` limits the work to blocks overlapping the mask (other blocks
    keep zero flow); the motion index only reads flow under an instance mask,
    so results for those pixels are identical to the full computation.
    """
    prev = np.asarray(prev)
    cur = np.asarray(cur)
    if prev.shape != cur.shape:
        raise ValueError(f"frame shapes differ: {prev.shape} vs {cur.shape}")
    if prev.ndim != 3 or prev.shape[2] != 3:
        raise ValueError("frames must be (H, W, 3)")
    if block < 1 or radius < 1:
        raise ValueError("block and radius must be positive")
    h, w = prev.shape[:2]
    nby = (h + block - 1) // block
    nbx = (w + block - 1) // block

    y0s, y1s, x0s, x1s, slots = [], [], [], [], []
    for by in range(nby):
        for bx in range(nbx):
            y0, y1 = by * block, min((by + 1) * block, h)
            x0, x1 = bx * block, min((bx + 1) * block, w)
            if roi_mask is not None and not roi_mask[y0:y1, x0:x1].any():
                continue
            y0s.append(y0)
            y1s.append(y1)
            x0s.append(x0)
            x1s.append(x1)
            slots.append((y0, y1, x0, x1))

    dx = np.zeros((h, w), dtype=np.int32)
    dy = np.zeros((h, w), dtype=np.int32)
    if slots:
        out = np.zeros((len(slots), 2), dtype=np.int64)
        _match_blocks(
            np.ascontiguousarray(prev),
            np.ascontiguousarray(cur),
            radius,
            np.asarray(y0s, dtype=np.int64),
            np.asarray(y1s, dtype=np.int64),
            np.asarray(x0s, dtype=np.int64),
            np.asarray(x1s, dtype=np.int64),
            out,
        )
        for (y0, y1, x0, x1), (bdy, bdx) in zip(slots, out):
            dy[y0:y1, x0:x1] = bdy
            dx[y0:y1, x0:x1] = bdx
    return FlowField(dx=dx, dy=dy)


def motion_index(flow: FlowField, mask: np.ndarray) -> float:
    """Sum of flow magnitudes over the mask divided by the mask area.

    Empty masks yield 0.0. The -1.0 first-frame sentinel is the caller's
    responsibility (there is no flow into the first frame).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != flow.shape:
        raise ValueError(f"mask shape {mask.shape} != flow shape {flow.shape}")
    area = int(np.count_nonzero(mask))
    if area == 0:
        return 0.0
    return float(flow.magnitudes()[mask].sum() / area)


FIRST_FRAME_MOTION = -1.0
