"""Oriented-box geometry: polar <-> Cartesian conversion, rotated IoU, NMS.

Coordinate conventions, shared by the whole package:

* image frame: x grows rightward, y grows downward (raster order);
* polar angles are measured from the +x axis toward +y, in radians,
  normalized to [0, 2*pi);
* "counterclockwise" corner order means increasing polar angle about the
  centroid, equivalently positive shoelace signed area in this frame.

An oriented rectangle is either four corners (``QuadBox``) or a pole point
plus one radius and the two smallest corner angles (``PolarBox``); the other
two corners sit at ``theta + pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateBox, InvalidPolygon

TWO_PI = 2.0 * math.pi

#: quads whose shoelace area is at or below this (px^2) count as degenerate
AREA_EPS = 1e-6

# tolerance for the inside-halfplane test during clipping; keeps boundary
# points so that clipping a polygon against itself returns the polygon
_CLIP_EPS = 1e-9


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class QuadBox:
    """Four-corner oriented box in image pixels.

    Corner order is not trusted anywhere in this module: every angle-based
    computation re-derives angles from scratch, so annotation corner order
    is irrelevant. Quads produced by this module are counterclockwise.
    """

    corners: np.ndarray  # (4, 2) float64
    class_id: int = 0

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise ValueError(f"corners must have shape (4, 2), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("corners must be finite")
        object.__setattr__(self, "corners", c)


@dataclass(frozen=True)
class PolarBox:
    """Pole point, one polar radius and the two smallest corner angles."""

    pole: Point2
    rho: float
    theta1: float
    theta2: float
    class_id: int = 0


def normalize_angle(raw: float) -> float:
    """Map an angle to [0, 2*pi), preserving its value mod 2*pi."""
    a = math.fmod(raw, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    if a >= TWO_PI:  # fmod of a tiny negative can round up to exactly 2*pi
        a = 0.0
    return a


def signed_area(corners) -> float:
    """Shoelace signed area; positive for counterclockwise order."""
    pts = np.asarray(corners, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_area(corners) -> float:
    """Absolute area of a simple polygon via the shoelace formula."""
    pts = np.asarray(corners, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise InvalidPolygon(f"need at least 3 vertices, got shape {pts.shape}")
    return abs(signed_area(pts))


def quad_to_polar(quad: QuadBox) -> PolarBox:
    """Convert a four-corner box into its polar representation.

    The pole is the corner centroid, the radius is the mean of the four
    corner distances (absorbing annotation error on imperfect rectangles),
    and the angles are the two smallest of the four normalized corner
    angles. For an exact rectangle both angles land in [0, pi).
    """
    c = quad.corners
    if polygon_area(c) <= AREA_EPS:
        raise DegenerateBox(f"quad area <= {AREA_EPS} px^2")
    pole = c.mean(axis=0)
    offsets = c - pole
    rho = float(np.hypot(offsets[:, 0], offsets[:, 1]).mean())
    angles = sorted(normalize_angle(math.atan2(dy, dx)) for dx, dy in offsets)
    return PolarBox(Point2(float(pole[0]), float(pole[1])), rho,
                    angles[0], angles[1], quad.class_id)


def polar_to_quad(pbox: PolarBox) -> QuadBox:
    """Emit the four corners at angles (t1, t2, t1+pi, t2+pi), counterclockwise."""
    xs, ys = pbox.pole
    corners = np.array(
        [[xs + pbox.rho * math.cos(t), ys + pbox.rho * math.sin(t)]
         for t in (pbox.theta1, pbox.theta2,
                   pbox.theta1 + math.pi, pbox.theta2 + math.pi)]
    )
    return QuadBox(corners, pbox.class_id)


def _ccw(pts: np.ndarray) -> np.ndarray:
    return pts[::-1] if signed_area(pts) < 0.0 else pts


def clip_polygon(subject, clip) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against a convex polygon.

    Returns the intersection polygon's vertices (possibly empty). Both
    inputs are reoriented counterclockwise internally, so corner order
    does not matter. Boundary points are kept.
    """
    out = [tuple(p) for p in _ccw(np.asarray(subject, dtype=np.float64))]
    clip_pts = _ccw(np.asarray(clip, dtype=np.float64))
    n = len(clip_pts)
    for k in range(n):
        if not out:
            break
        ax, ay = clip_pts[k]
        bx, by = clip_pts[(k + 1) % n]
        ex, ey = bx - ax, by - ay

        def inside(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax) >= -_CLIP_EPS

        def intersect(p, q):
            # intersection of segment p->q with the infinite line a->b
            dx, dy = q[0] - p[0], q[1] - p[1]
            denom = ex * dy - ey * dx
            t = (ex * (ay - p[1]) - ey * (ax - p[0])) / denom
            return (p[0] + t * dx, p[1] + t * dy)

        prev_pts, out = out, []
        s = prev_pts[-1]
        for e in prev_pts:
            if inside(e):
                if not inside(s):
                    out.append(intersect(s, e))
                out.append(e)
            elif inside(s):
                out.append(intersect(s, e))
            s = e
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def intersection_area(a: QuadBox, b: QuadBox) -> float:
    """Area of the convex intersection of two quads via polygon clipping."""
    poly = clip_polygon(a.corners, b.corners)
    if len(poly) < 3:
        return 0.0
    return polygon_area(poly)


def rotated_iou(a: QuadBox, b: QuadBox) -> float:
    """Intersection-over-union of two oriented boxes, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = polygon_area(a.corners) + polygon_area(b.corners) - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def oriented_nms(dets: Sequence[tuple[QuadBox, float]],
                 iou_threshold: float) -> list[int]:
    """Greedy descending-score suppression; returns kept indices.

    Score ties are broken by lower original index. No two kept boxes
    overlap with IoU strictly above the threshold.
    """
    for _, score in dets:
        if not math.isfinite(score):
            raise ValueError("detection scores must be finite")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    kept: list[int] = []
    for i in order:
        if all(rotated_iou(dets[i][0], dets[j][0]) <= iou_threshold for j in kept):
            kept.append(i)
    return kept
