"""Exact convex-polygon intersection, rotated-box IoU and related kernels.

Polygons are (n, 2) float arrays of vertices in counter-clockwise order
(positive shoelace area). Box-box intersections produce at most 8
vertices once near-duplicates are merged.
"""

from __future__ import annotations

import math

import numpy as np

from .geom import RotatedBox, box_corners

# on-edge classification and vertex-merge tolerance, in pixels
_EPS = 1e-9


def polygon_area(vertices) -> float:
    """Non-negative shoelace area of a polygon; 0 for fewer than 3 vertices."""
    pts = np.asarray(vertices, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))) / 2.0


def _signed_area2(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _merge_close(pts: list[tuple[float, float]]) -> np.ndarray:
    """Drop consecutive vertices closer than the merge tolerance."""
    out: list[tuple[float, float]] = []
    for p in pts:
        if out and abs(p[0] - out[-1][0]) <= _EPS and abs(p[1] - out[-1][1]) <= _EPS:
            continue
        out.append(p)
    if len(out) > 1 and abs(out[0][0] - out[-1][0]) <= _EPS and abs(out[0][1] - out[-1][1]) <= _EPS:
        out.pop()
    return np.array(out, dtype=np.float64) if out else np.empty((0, 2), dtype=np.float64)


def clip_convex(subject, clip) -> np.ndarray:
    """Intersection of two convex polygons (Sutherland-Hodgman).

    Returns the intersection vertices counter-clockwise, or an empty
    (0, 2) array when the polygons do not overlap in area.
    """
    out = [(float(x), float(y)) for x, y in np.asarray(subject, dtype=np.float64)]
    clip_pts = np.asarray(clip, dtype=np.float64)
    if len(out) < 3 or len(clip_pts) < 3:
        return np.empty((0, 2), dtype=np.float64)
    if _signed_area2(np.asarray(out)) < 0.0:
        out.reverse()
    if _signed_area2(clip_pts) < 0.0:
        clip_pts = clip_pts[::-1]

    n = len(clip_pts)
    for k in range(n):
        if not out:
            break
        ax, ay = clip_pts[k]
        bx, by = clip_pts[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        sx, sy = inp[-1]
        s_side = ex * (sy - ay) - ey * (sx - ax)
        for px, py in inp:
            p_side = ex * (py - ay) - ey * (px - ax)
            if p_side >= -_EPS:
                if s_side < -_EPS:
                    t = s_side / (s_side - p_side)
                    out.append((sx + t * (px - sx), sy + t * (py - sy)))
                out.append((px, py))
            elif s_side >= -_EPS:
                t = s_side / (s_side - p_side)
                out.append((sx + t * (px - sx), sy + t * (py - sy)))
            sx, sy, s_side = px, py, p_side

    result = _merge_close(out)
    if len(result) < 3 or polygon_area(result) <= 0.0:
        return np.empty((0, 2), dtype=np.float64)
    return result


def iou(a: RotatedBox, b: RotatedBox) -> float:
    """Exact intersection-over-union of two rotated boxes."""
    if a.area <= 0.0 or b.area <= 0.0:
        raise ValueError("zero-area box passed to iou")
    # fix the clipping order so iou(a, b) and iou(b, a) are bit-identical
    ka = (a.cx, a.cy, a.w, a.h, a.theta)
    kb = (b.cx, b.cy, b.w, b.h, b.theta)
    if kb < ka:
        a, b = b, a
    ca = box_corners(a)
    cb = box_corners(b)
    # disjoint axis-aligned extents cannot intersect
    if (
        ca[:, 0].max() < cb[:, 0].min()
        or cb[:, 0].max() < ca[:, 0].min()
        or ca[:, 1].max() < cb[:, 1].min()
        or cb[:, 1].max() < ca[:, 1].min()
    ):
        return 0.0
    inter = polygon_area(clip_convex(ca, cb))
    if inter <= 0.0:
        return 0.0
    # shoelace areas keep iou(b, b) exactly 1
    area_a = polygon_area(ca)
    area_b = polygon_area(cb)
    union = area_a + area_b - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_oracle(a: RotatedBox, b: RotatedBox, samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo IoU estimate, the independent check for :func:`iou`.

    Uniform samples over the joint axis-aligned bounding box are classified
    against each box in its own frame. Deterministic for a fixed seed;
    returns 0.0 when no sample lands in either box. Sampling runs in
    float32 chunks to keep a million samples per pair cheap; that is ample
    precision for pixel-scale coordinates.
    """
    if samples < 10_000:
        raise ValueError(f"need at least 10000 samples, got {samples}")
    corners = np.vstack([box_corners(a), box_corners(b)])
    x0, y0 = corners.min(axis=0)
    x1, y1 = corners.max(axis=0)
    rng = np.random.default_rng(seed)

    fa = _frame32(a)
    fb = _frame32(b)
    sx, sy = np.float32(x1 - x0), np.float32(y1 - y0)
    ox, oy = np.float32(x0), np.float32(y0)
    inter_n = 0
    union_n = 0
    chunk = 131072
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        px = rng.random(n, dtype=np.float32) * sx + ox
        py = rng.random(n, dtype=np.float32) * sy + oy
        in_a = _inside32(px, py, fa)
        in_b = _inside32(px, py, fb)
        inter_n += int(np.count_nonzero(in_a & in_b))
        union_n += int(np.count_nonzero(in_a | in_b))
        done += n
    if union_n == 0:
        return 0.0
    return inter_n / union_n


def _frame32(b: RotatedBox) -> tuple:
    return (
        np.float32(b.cx),
        np.float32(b.cy),
        np.float32(math.cos(b.theta)),
        np.float32(math.sin(b.theta)),
        np.float32(b.w / 2.0),
        np.float32(b.h / 2.0),
    )


def _inside32(px: np.ndarray, py: np.ndarray, frame: tuple) -> np.ndarray:
    cx, cy, c, s, hw, hh = frame
    dx = px - cx
    dy = py - cy
    return (np.abs(dx * c + dy * s) <= hw) & (np.abs(dy * c - dx * s) <= hh)


def convex_hull(points) -> np.ndarray:
    """Convex hull by monotone chain, counter-clockwise, collinear points dropped."""
    pts = sorted({(float(x), float(y)) for x, y in np.asarray(points, dtype=np.float64)})
    if len(pts) < 3:
        return np.array(pts, dtype=np.float64)

    def build(seq):
        chain: list[tuple[float, float]] = []
        for p in seq:
            while len(chain) >= 2:
                ox, oy = chain[-2]
                ax, ay = chain[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 0:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = build(pts)
    upper = build(reversed(pts))
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def min_area_rect(points) -> RotatedBox:
    """Minimum-area enclosing rotated rectangle of a point set.

    Rotating calipers over the convex hull: the optimal rectangle has one
    edge collinear with a hull edge, so trying every hull-edge direction
    is exhaustive.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 3:
        raise ValueError("need at least 3 points")
    hull = convex_hull(pts)
    if len(hull) < 3:
        raise ValueError("points are collinear; no enclosing rectangle with positive area")

    best = None
    n = len(hull)
    for i in range(n):
        ex, ey = hull[(i + 1) % n] - hull[i]
        ang = math.atan2(ey, ex)
        c, s = math.cos(ang), math.sin(ang)
        u = hull[:, 0] * c + hull[:, 1] * s
        v = hull[:, 1] * c - hull[:, 0] * s
        u0, u1 = u.min(), u.max()
        v0, v1 = v.min(), v.max()
        area = (u1 - u0) * (v1 - v0)
        if best is None or area < best[0]:
            uc, vc = (u0 + u1) / 2.0, (v0 + v1) / 2.0
            cx = uc * c - vc * s
            cy = uc * s + vc * c
            best = (area, cx, cy, u1 - u0, v1 - v0, ang)
    _, cx, cy, w, h, ang = best
    return RotatedBox.make(float(cx), float(cy), float(w), float(h), float(ang))
