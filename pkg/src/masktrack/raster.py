"""Mask/polygon geometry: components, contour tracing, simplification, rasterization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .model import InstanceLabel, Polygon

_EIGHT_CONN = np.ones((3, 3), dtype=int)
_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)

# Moore neighbourhood in screen-clockwise order starting west (y down):
# W, NW, N, NE, E, SE, S, SW
_MOORE = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)]


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel extremes of a mask."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError("degenerate bounding box")

    @property
    def width(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def height(self) -> int:
        return self.y2 - self.y1 + 1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def expanded(self, factor: float, width: int, height: int) -> "BBox":
        """Scale about the center by ``factor`` and clip to the frame."""
        cx, cy = self.center
        hw = self.width * factor / 2.0
        hh = self.height * factor / 2.0
        return BBox(
            max(0, int(np.floor(cx - hw))),
            max(0, int(np.floor(cy - hh))),
            min(width - 1, int(np.ceil(cx + hw))),
            min(height - 1, int(np.ceil(cy + hh))),
        )


def connected_components(mask: np.ndarray) -> list[tuple[np.ndarray, int]]:
    """8-connected components of a binary mask as (component mask, area) pairs.

    Sorted by area descending; ties broken by the topmost-leftmost pixel in
    raster order.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        raise ValueError("mask dimensions must be positive")
    labels, count = ndimage.label(mask, structure=_EIGHT_CONN)
    if count == 0:
        return []
    areas = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
    # raster position of each component's first pixel, for the tie rule
    flat = labels.ravel()
    first = np.full(count + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    # reversed so earlier raster positions overwrite later ones
    first[flat[nz[::-1]]] = nz[::-1]
    order = sorted(range(1, count + 1), key=lambda i: (-areas[i - 1], first[i]))
    return [(labels == i, int(areas[i - 1])) for i in order]


def trace_contour(component: np.ndarray) -> np.ndarray:
    """Outer boundary of one connected component by Moore neighbour tracing.

    Returns an (N, 2) int array of (x, y) border pixels starting at the
    topmost-then-leftmost pixel, wound so the shoelace sum is positive in
    image coordinates (right along the top edge first). Thin shapes revisit
    pixels; that is expected.
    """
    component = np.asarray(component, dtype=bool)
    ys, xs = np.nonzero(component)
    if len(ys) == 0:
        raise ValueError("cannot trace an empty component")
    start_i = np.lexsort((xs, ys))[0]
    start = (int(xs[start_i]), int(ys[start_i]))
    h, w = component.shape

    def fg(x: int, y: int) -> bool:
        return 0 <= x < w and 0 <= y < h and bool(component[y, x])

    points = [start]
    if len(ys) == 1:
        return np.array(points, dtype=np.int64)

    # Walk clockwise around the boundary. State = (pixel, backtrack pixel);
    # the trace is complete once a state repeats. The west neighbour of the
    # start pixel is background because the start is topmost-then-leftmost.
    cur = start
    back = (start[0] - 1, start[1])
    seen = {(cur, back)}
    limit = 4 * len(ys) + 8
    for _ in range(limit):
        back_dir = _MOORE.index((back[0] - cur[0], back[1] - cur[1]))
        nxt = None
        for step in range(1, 9):
            d = (back_dir + step) % 8
            cand = (cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1])
            if fg(*cand):
                prev = (back_dir + step - 1) % 8
                nxt = cand
                back = (cur[0] + _MOORE[prev][0], cur[1] + _MOORE[prev][1])
                break
        if nxt is None:
            break
        cur = nxt
        if (cur, back) in seen:
            break
        seen.add((cur, back))
        points.append(cur)
    if len(points) > 1 and points[-1] == points[0]:
        points.pop()
    return np.array(points, dtype=np.int64)


def _point_segment_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + np.outer(t, ab)
    return np.linalg.norm(pts - proj, axis=1)


def _rdp_open(points: np.ndarray, epsilon: float) -> np.ndarray:
    """Indices kept by Ramer-Douglas-Peucker on an open chain (endpoints stay)."""
    n = len(points)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[n - 1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        interior = points[lo + 1 : hi]
        d = _point_segment_dist(interior, points[lo], points[hi])
        i = int(np.argmax(d))
        if d[i] > epsilon:
            split = lo + 1 + i
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return np.flatnonzero(keep)


def simplify(points: np.ndarray, epsilon: float) -> np.ndarray:
    """Closed-curve Ramer-Douglas-Peucker simplification.

    Splits the ring at the two mutually farthest points and simplifies each
    arc with perpendicular-distance tolerance ``epsilon``. The output is a
    subsequence of the (cyclically rotated) input with at least 3 points: if
    simplification would drop below 3, the two split points plus the point
    farthest from their chord are kept.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) < 3:
        raise ValueError("simplify needs at least 3 points")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    n = len(points)

    # farthest pair; ties resolved to the lexicographically smallest (i, j)
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
    if i > j:
        i, j = j, i

    ring = np.roll(points, -i, axis=0)
    split = j - i  # index of the far point within the rotated ring
    arc_a = ring[: split + 1]
    arc_b = np.concatenate([ring[split:], ring[:1]], axis=0)

    kept_a = _rdp_open(arc_a, epsilon)
    kept_b = _rdp_open(arc_b, epsilon) + split
    # arc_b's last index refers back to ring[0]; drop both duplicated joints
    kept = np.concatenate([kept_a, kept_b[1:-1]])
    result = ring[kept]

    if len(result) < 3:
        interior = np.concatenate([np.arange(1, split), np.arange(split + 1, n)])
        if len(interior) == 0:
            return ring[:3] if n >= 3 else ring
        d = _point_segment_dist(ring[interior], ring[0], ring[split])
        third = int(interior[int(np.argmax(d))])
        kept = sorted({0, split, third})
        result = ring[kept]
    return result


def mask_to_polygons(
    mask: np.ndarray,
    epsilon: float = 2.0,
    min_area: int = 10,
    label: InstanceLabel | None = None,
) -> list[Polygon]:
    """Convert a binary mask to simplified outer-boundary polygons.

    One polygon per 8-connected component with area >= ``min_area``, in
    component order (area descending). Components whose traced boundary has
    fewer than 3 points (area <= 2) are skipped. Vertices are shifted by
    +0.5 so the ring passes through border-pixel centers in continuous
    coordinates; with the rasterizer's on-edge-inclusive center test this
    makes axis-aligned shapes round-trip exactly.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    polygons = []
    for component, area in connected_components(mask):
        if area < min_area:
            continue
        contour = trace_contour(component)
        if len(contour) < 3:
            continue
        ring = simplify(contour.astype(np.float64), epsilon) + 0.5
        polygons.append(Polygon(ring, label))
    return polygons


def polygon_to_mask(polygon: Polygon | np.ndarray, width: int, height: int) -> np.ndarray:
    """Rasterize a polygon with even-odd scanline fill.

    A pixel belongs to the mask when its center (x+0.5, y+0.5) is inside the
    polygon; centers exactly on an edge count as inside. Degenerate zero-area
    polygons rasterize to an all-zero mask.
    """
    if width <= 0 or height <= 0:
        raise ValueError("mask dimensions must be positive")
    verts = polygon.vertices if isinstance(polygon, Polygon) else np.asarray(polygon, float)
    out = np.zeros((height, width), dtype=bool)
    n = len(verts)
    xs = verts[:, 0]
    ys = verts[:, 1]
    y_lo = max(0, int(np.floor(ys.min() - 0.5)))
    y_hi = min(height - 1, int(np.ceil(ys.max())))
    centers_x = np.arange(width) + 0.5
    eps = 1e-9

    for y in range(y_lo, y_hi + 1):
        cy = y + 0.5
        crossings = []
        on_edge = np.zeros(width, dtype=bool)
        for k in range(n):
            x1, y1 = xs[k], ys[k]
            x2, y2 = xs[(k + 1) % n], ys[(k + 1) % n]
            if y1 == y2:
                if abs(y1 - cy) <= eps and x1 != x2:
                    lo, hi = sorted((x1, x2))
                    on_edge |= (centers_x >= lo - eps) & (centers_x <= hi + eps)
                continue
            if (y1 <= cy < y2) or (y2 <= cy < y1):
                t = (cy - y1) / (y2 - y1)
                crossings.append(x1 + t * (x2 - x1))
            # centers exactly on a non-horizontal edge, including its endpoints
            if min(y1, y2) - eps <= cy <= max(y1, y2) + eps:
                t = (cy - y1) / (y2 - y1)
                if -eps <= t <= 1 + eps:
                    xi = x1 + t * (x2 - x1)
                    on_edge |= np.abs(centers_x - xi) <= eps
        if crossings:
            cr = np.sort(np.asarray(crossings))
            inside = np.searchsorted(cr, centers_x, side="right") % 2 == 1
            out[y] = inside
        if on_edge.any():
            out[y] |= on_edge
    return out


def centroid(mask: np.ndarray) -> tuple[float, float]:
    """Arithmetic mean of set-pixel coordinates (plain integer coordinates)."""
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if len(ys) == 0:
        raise ValueError("centroid of an empty mask")
    return float(xs.mean()), float(ys.mean())


def bbox(mask: np.ndarray) -> BBox:
    """Inclusive min/max extremes of the set pixels."""
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if len(ys) == 0:
        raise ValueError("bbox of an empty mask")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two equal-size masks; 0 when both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union
