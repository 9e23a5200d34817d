import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masktrack import Polygon
from masktrack.raster import (
    bbox,
    centroid,
    connected_components,
    iou,
    mask_to_polygons,
    polygon_to_mask,
    simplify,
    trace_contour,
)

from conftest import random_blob_mask


# --- oracles ---------------------------------------------------------------


def flood_fill_components(mask):
    """Brute-force 8-connected flood fill, independent of scipy."""
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    seen = np.zeros_like(mask)
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                stack = [(y, x)]
                seen[y, x] = True
                comp = np.zeros_like(mask)
                while stack:
                    cy, cx = stack.pop()
                    comp[cy, cx] = True
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                stack.append((ny, nx))
                comps.append(comp)
    return comps


def point_in_polygon_bruteforce(px, py, verts):
    """Even-odd crossing count with an explicit on-edge check (counts inside)."""
    n = len(verts)
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        if (x1, y1) == (x2, y2):
            continue
        # distance from (px, py) to segment == 0?
        abx, aby = x2 - x1, y2 - y1
        t = ((px - x1) * abx + (py - y1) * aby) / (abx * abx + aby * aby)
        t = min(1.0, max(0.0, t))
        qx, qy = x1 + t * abx, y1 + t * aby
        if abs(qx - px) < 1e-9 and abs(qy - py) < 1e-9:
            return True
    inside = False
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        if (y1 <= py < y2) or (y2 <= py < y1):
            xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xi:
                inside = not inside
    return inside


def rasterize_bruteforce(verts, width, height):
    out = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            out[y, x] = point_in_polygon_bruteforce(x + 0.5, y + 0.5, verts)
    return out


def segment_distance(p, a, b):
    p, a, b = (np.asarray(v, float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        return float(np.linalg.norm(p - a))
    t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def chain_distance(p, ring):
    """Distance from a point to the closed polyline through ring."""
    return min(
        segment_distance(p, ring[i], ring[(i + 1) % len(ring)])
        for i in range(len(ring))
    )


# --- connected components ----------------------------------------------------


class TestConnectedComponents:
    def test_empty_mask(self):
        assert connected_components(np.zeros((5, 5), bool)) == []

    def test_two_disjoint_squares(self):
        mask = np.zeros((8, 8), bool)
        mask[0:2, 0:2] = True
        mask[5:7, 5:7] = True
        comps = connected_components(mask)
        assert [area for _, area in comps] == [4, 4]
        # tie broken by topmost-leftmost pixel: origin square first
        assert comps[0][0][0, 0]

    def test_plus_sign_single_component(self):
        mask = np.zeros((5, 5), bool)
        mask[2, :] = True
        mask[:, 2] = True
        comps = connected_components(mask)
        # oracle: brute-force flood fill finds one 9-pixel component
        oracle = flood_fill_components(mask)
        assert len(oracle) == 1 and oracle[0].sum() == 9
        assert len(comps) == 1
        assert comps[0][1] == 9

    def test_diagonal_touch_is_one_component(self):
        mask = np.zeros((4, 4), bool)
        mask[0, 0] = mask[1, 1] = True
        assert len(connected_components(mask)) == 1

    def test_sorted_by_area_descending(self):
        mask = np.zeros((10, 10), bool)
        mask[0:3, 0:3] = True  # 9
        mask[8:10, 0:2] = True  # 4
        mask[5, 9] = True  # 1
        areas = [a for _, a in connected_components(mask)]
        assert areas == [9, 4, 1]

    def test_matches_flood_fill_on_random_masks(self, rng):
        for _ in range(20):
            mask = rng.random((16, 16)) < 0.35
            got = connected_components(mask)
            oracle = flood_fill_components(mask)
            assert len(got) == len(oracle)
            assert sorted(a for _, a in got) == sorted(int(c.sum()) for c in oracle)
            union = np.zeros_like(mask)
            for comp, _ in got:
                union |= comp
            assert np.array_equal(union, mask)


# --- contour tracing ---------------------------------------------------------


class TestTraceContour:
    def test_single_pixel(self):
        mask = np.zeros((8, 8), bool)
        mask[4, 3] = True
        assert trace_contour(mask).tolist() == [[3, 4]]

    def test_three_by_three_square(self):
        mask = np.zeros((5, 5), bool)
        mask[0:3, 0:3] = True
        # oracle: border pixels enumerated by hand, clockwise from origin
        expected = [[0, 0], [1, 0], [2, 0], [2, 1], [2, 2], [1, 2], [0, 2], [0, 1]]
        assert trace_contour(mask).tolist() == expected

    def test_horizontal_bar(self):
        mask = np.zeros((3, 7), bool)
        mask[0, 0:5] = True
        # oracle: manual trace, left-to-right then back
        expected = [[0, 0], [1, 0], [2, 0], [3, 0], [4, 0], [3, 0], [2, 0], [1, 0]]
        assert trace_contour(mask).tolist() == expected

    def test_rectangle_yields_exactly_border_pixels(self):
        mask = np.zeros((10, 10), bool)
        mask[2:7, 3:9] = True
        pts = {tuple(p) for p in trace_contour(mask)}
        border = set()
        for y in range(2, 7):
            for x in range(3, 9):
                if y in (2, 6) or x in (3, 8):
                    border.add((x, y))
        assert pts == border

    def test_consecutive_points_8_connected(self, rng):
        for _ in range(10):
            mask = random_blob_mask(rng, 32, 32, min_area=20)
            pts = trace_contour(mask)
            closed = np.vstack([pts, pts[:1]])
            steps = np.abs(np.diff(closed, axis=0))
            assert steps.max() <= 1

    def test_starts_topmost_then_leftmost(self, rng):
        for _ in range(10):
            mask = random_blob_mask(rng, 32, 32, min_area=20)
            pts = trace_contour(mask)
            ys, xs = np.nonzero(mask)
            top = ys.min()
            left = xs[ys == top].min()
            assert pts[0].tolist() == [left, top]

    def test_empty_component_rejected(self):
        with pytest.raises(ValueError):
            trace_contour(np.zeros((4, 4), bool))


# --- simplification -----------------------------------------------------------


class TestSimplify:
    def test_collinear_point_removed(self):
        pts = np.array([[0, 0], [1, 0], [2, 0], [2, 2], [0, 2]], float)
        got = simplify(pts, 0.5)
        assert got.tolist() == [[0, 0], [2, 0], [2, 2], [0, 2]]

    def test_circle_vertex_count_decreases_with_epsilon(self):
        theta = np.linspace(0, 2 * np.pi, 360, endpoint=False)
        circle = np.stack([50 + 50 * np.cos(theta), 50 + 50 * np.sin(theta)], axis=1)
        counts = [len(simplify(circle, eps)) for eps in (1.0, 2.0, 4.0, 8.0)]
        # halving recursion can plateau between neighbouring epsilons, so the
        # guarantee is monotone non-increasing with an overall strict drop
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert counts[0] > counts[-1]

    def test_three_point_floor(self):
        square = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float)
        got = simplify(square, 1000.0)
        assert len(got) == 3

    def test_output_is_subsequence_of_rotated_input(self, rng):
        for _ in range(20):
            n = int(rng.integers(5, 40))
            pts = rng.random((n, 2)) * 100
            got = simplify(pts, 2.0)
            pool = [tuple(p) for p in pts]
            # every output point is an input point, in cyclic order
            idx = [pool.index(tuple(p)) for p in got]
            rotated = [(i - idx[0]) % n for i in idx]
            assert rotated == sorted(rotated)

    def test_removed_points_within_epsilon_of_chain(self, rng):
        for _ in range(20):
            mask = random_blob_mask(rng, 40, 40, min_area=60)
            contour = trace_contour(mask).astype(float)
            if len(contour) < 4:
                continue
            eps = float(rng.choice([1.0, 2.0, 4.0]))
            ring = simplify(contour, eps)
            kept = {tuple(p) for p in ring}
            for p in contour:
                if tuple(p) not in kept:
                    assert chain_distance(p, ring) <= eps + 1e-9

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            simplify(np.array([[0, 0], [1, 1]], float), 1.0)


# --- rasterization ------------------------------------------------------------


class TestPolygonToMask:
    def test_unit_square_example(self):
        poly = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float)
        mask = polygon_to_mask(poly, 16, 16)
        # oracle: brute-force point-in-polygon over all pixel centers
        assert mask.sum() == 100
        assert np.array_equal(mask, rasterize_bruteforce(poly, 16, 16))

    def test_degenerate_polygon_is_empty(self):
        poly = Polygon(np.array([[3, 3], [3, 3], [3, 3]], float))
        assert polygon_to_mask(poly, 8, 8).sum() == 0

    def test_matches_bruteforce_on_random_polygons(self, rng):
        for _ in range(15):
            n = int(rng.integers(3, 9))
            verts = rng.random((n, 2)) * 14 + 1
            got = polygon_to_mask(verts, 16, 16)
            assert np.array_equal(got, rasterize_bruteforce(verts, 16, 16))

    def test_diagonal_edge_centers_count_inside(self):
        # the 45-degree edge passes exactly through pixel centers
        tri = np.array([[0.5, 0.5], [8.5, 0.5], [0.5, 8.5]], float)
        got = polygon_to_mask(tri, 10, 10)
        assert np.array_equal(got, rasterize_bruteforce(tri, 10, 10))
        assert got[0, 8]  # center (8.5, 0.5) sits on the hypotenuse vertex-edge

    def test_roundtrip_iou(self, rng):
        # mask -> polygons(eps=2) -> mask keeps IoU >= 0.9 for blobs >= 100 px
        for _ in range(10):
            mask = random_blob_mask(rng, 48, 48, min_area=100)
            polys = mask_to_polygons(mask, epsilon=2.0, min_area=10)
            assert len(polys) == 1
            back = polygon_to_mask(polys[0], 48, 48)
            assert iou(mask, back) >= 0.9


class TestMaskToPolygons:
    def test_empty_mask(self):
        assert mask_to_polygons(np.zeros((5, 5), bool)) == []

    def test_square_blob_vertex_count(self):
        mask = np.zeros((30, 30), bool)
        mask[5:25, 5:25] = True
        polys = mask_to_polygons(mask, epsilon=2.0)
        assert len(polys) == 1
        assert 4 <= len(polys[0]) <= 8
        back = polygon_to_mask(polys[0], 30, 30)
        assert iou(mask, back) >= 0.95

    def test_min_area_filter(self):
        mask = np.zeros((20, 20), bool)
        mask[2:12, 2:12] = True  # area 100
        mask[15:16, 15:20] = True  # area 5
        polys = mask_to_polygons(mask, epsilon=2.0, min_area=10)
        assert len(polys) == 1

    def test_vertex_count_non_increasing_in_epsilon(self, rng):
        for _ in range(10):
            mask = random_blob_mask(rng, 48, 48, min_area=80)
            counts = [
                sum(len(p) for p in mask_to_polygons(mask, eps, 10))
                for eps in (1.0, 2.0, 4.0, 8.0)
            ]
            assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_label_carried(self):
        from masktrack import InstanceLabel

        mask = np.zeros((20, 20), bool)
        mask[4:16, 4:16] = True
        label = InstanceLabel("mouse", 0)
        polys = mask_to_polygons(mask, 2.0, 10, label)
        assert polys[0].label == label


# --- measurements --------------------------------------------------------------


class TestMeasurements:
    def test_centroid_full_3x3(self):
        mask = np.zeros((5, 5), bool)
        mask[0:3, 0:3] = True
        assert centroid(mask) == (1.0, 1.0)

    def test_centroid_single_pixel(self):
        mask = np.zeros((10, 10), bool)
        mask[7, 5] = True
        assert centroid(mask) == (5.0, 7.0)

    def test_centroid_mean_of_two(self):
        mask = np.zeros((5, 5), bool)
        mask[0, 0] = mask[0, 2] = True
        assert centroid(mask) == (1.0, 0.0)

    def test_centroid_empty_rejected(self):
        with pytest.raises(ValueError):
            centroid(np.zeros((3, 3), bool))

    def test_bbox_extremes(self):
        mask = np.zeros((12, 12), bool)
        mask[3, 2] = mask[9, 5] = True
        box = bbox(mask)
        assert (box.x1, box.y1, box.x2, box.y2) == (2, 3, 5, 9)

    def test_bbox_empty_rejected(self):
        with pytest.raises(ValueError):
            bbox(np.zeros((3, 3), bool))

    def test_iou_identity(self, rng):
        mask = random_blob_mask(rng, 24, 24, min_area=20)
        assert iou(mask, mask) == 1.0

    def test_iou_shifted_square(self):
        a = np.zeros((20, 20), bool)
        b = np.zeros((20, 20), bool)
        a[0:10, 0:10] = True
        b[0:10, 5:15] = True
        assert iou(a, b) == pytest.approx(50 / 150)

    def test_iou_symmetric_and_equality_iff_one(self, rng):
        for _ in range(10):
            a = rng.random((12, 12)) < 0.4
            b = rng.random((12, 12)) < 0.4
            assert iou(a, b) == iou(b, a)
            if a.any() and iou(a, b) == 1.0:
                assert np.array_equal(a, b)

    def test_iou_dimension_mismatch(self):
        with pytest.raises(ValueError):
            iou(np.zeros((3, 3), bool), np.zeros((4, 4), bool))

    def test_iou_empty_union_is_zero(self):
        assert iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 0.0

    def test_centroid_within_bbox(self, rng):
        for _ in range(10):
            mask = random_blob_mask(rng, 32, 32, min_area=30)
            cx, cy = centroid(mask)
            box = bbox(mask)
            assert box.x1 <= cx <= box.x2
            assert box.y1 <= cy <= box.y2
