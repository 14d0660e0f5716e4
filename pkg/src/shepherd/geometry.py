"""Planar geometry helpers: ray casting, polygon tests, enclosing circle."""
from __future__ import annotations

import numpy as np

__all__ = [
    "polygon_edges",
    "point_in_polygon",
    "ray_hits",
    "segment_distance",
    "polygon_distance",
    "min_enclosing_circle",
]


def polygon_edges(vertices: np.ndarray) -> np.ndarray:
    """(E, 2, 2) array of closed-loop edges from a vertex list."""
    v = np.asarray(vertices, float).reshape(-1, 2)
    return np.stack([v, np.roll(v, -1, axis=0)], axis=1)


def point_in_polygon(point, vertices) -> bool:
    """Even-odd crossing test; boundary points count as inside."""
    x, y = float(point[0]), float(point[1])
    v = np.asarray(vertices, float).reshape(-1, 2)
    inside = False
    j = len(v) - 1
    for i in range(len(v)):
        xi, yi = v[i]
        xj, yj = v[j]
        if min(xi, xj) <= x <= max(xi, xj) and min(yi, yj) <= y <= max(yi, yj):
            cross = (xj - xi) * (y - yi) - (yj - yi) * (x - xi)
            if abs(cross) < 1e-12:
                return True  # on the edge
        if (yi > y) != (yj > y):
            x_cross = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def ray_hits(origin, direction, edges, max_range) -> float:
    """First intersection distance of a ray with any edge, else +inf.

    edges is the stacked (E, 2, 2) array; direction need not be normalized
    (distances are returned in units of its length times the parameter, so
    pass a unit vector for metric distances).
    """
    if edges.shape[0] == 0:
        return np.inf
    p = np.asarray(origin, float)
    d = np.asarray(direction, float)
    a = edges[:, 0, :]
    seg = edges[:, 1, :] - a
    denom = d[0] * seg[:, 1] - d[1] * seg[:, 0]
    ok = np.abs(denom) > 1e-14
    ap = a - p
    t = np.where(ok, (ap[:, 0] * seg[:, 1] - ap[:, 1] * seg[:, 0])
                 / np.where(ok, denom, 1.0), np.inf)
    s = np.where(ok, (ap[:, 0] * d[1] - ap[:, 1] * d[0])
                 / np.where(ok, denom, 1.0), -1.0)
    valid = ok & (t >= 0.0) & (s >= 0.0) & (s <= 1.0)
    t = np.where(valid, t, np.inf)
    hit = float(t.min())
    return hit if hit <= max_range else np.inf


def segment_distance(a0, a1, b0, b1) -> float:
    """Minimum distance between two segments."""
    a0, a1, b0, b1 = (np.asarray(p, float) for p in (a0, a1, b0, b1))

    def point_seg(p, s0, s1):
        d = s1 - s0
        denom = float(d @ d)
        if denom < 1e-18:
            return float(np.linalg.norm(p - s0))
        t = np.clip(float((p - s0) @ d) / denom, 0.0, 1.0)
        return float(np.linalg.norm(p - (s0 + t * d)))

    if _segments_intersect(a0, a1, b0, b1):
        return 0.0
    return min(point_seg(a0, b0, b1), point_seg(a1, b0, b1),
               point_seg(b0, a0, a1), point_seg(b1, a0, a1))


def _segments_intersect(a0, a1, b0, b1) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    d1 = orient(b0, b1, a0)
    d2 = orient(b0, b1, a1)
    d3 = orient(a0, a1, b0)
    d4 = orient(a0, a1, b1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    return False


def polygon_distance(verts_a, verts_b) -> float:
    """Minimum boundary distance between two polygons (0 if they touch)."""
    ea = polygon_edges(verts_a)
    eb = polygon_edges(verts_b)
    best = np.inf
    for sa in ea:
        for sb in eb:
            best = min(best, segment_distance(sa[0], sa[1], sb[0], sb[1]))
            if best == 0.0:
                return 0.0
    return best


def min_enclosing_circle(points) -> tuple[np.ndarray, float]:
    """Smallest circle containing all points (deterministic Welzl walk).

    Returns (center, radius); radius 0 for a single point. Points are
    processed in storage order (no shuffle) so results are reproducible;
    fine for the herd-sized inputs used here.
    """
    pts = np.asarray(points, float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("no points")

    def circle_two(p, q):
        center = 0.5 * (p + q)
        return center, float(np.linalg.norm(p - center))

    def circle_three(p, q, r):
        ax, ay = p
        bx, by = q
        cx, cy = r
        d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
        if abs(d) < 1e-14:
            return None
        ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay)
              + (cx**2 + cy**2) * (ay - by)) / d
        uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx)
              + (cx**2 + cy**2) * (bx - ax)) / d
        center = np.array([ux, uy])
        return center, float(np.linalg.norm(p - center))

    def contains(circle, p, slack=1e-10):
        center, radius = circle
        return np.linalg.norm(p - center) <= radius * (1 + 1e-12) + slack

    center, radius = pts[0].copy(), 0.0
    for i in range(1, len(pts)):
        if contains((center, radius), pts[i]):
            continue
        center, radius = pts[i].copy(), 0.0
        for j in range(i):
            if contains((center, radius), pts[j]):
                continue
            center, radius = circle_two(pts[i], pts[j])
            for k in range(j):
                if contains((center, radius), pts[k]):
                    continue
                c3 = circle_three(pts[i], pts[j], pts[k])
                if c3 is not None:
                    center, radius = c3
    return center, radius
