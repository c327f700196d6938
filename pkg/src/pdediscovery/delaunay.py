"""Incremental Bowyer-Watson Delaunay triangulation in the plane."""
from __future__ import annotations

from fractions import Fraction

import numpy as np


class TriangulationError(ValueError):
    pass


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _incircle_exact(a, b, c, d) -> Fraction:
    rows = []
    for p in (a, b, c):
        dx = Fraction(p[0]) - Fraction(d[0])
        dy = Fraction(p[1]) - Fraction(d[1])
        rows.append((dx, dy, dx * dx + dy * dy))
    (a0, a1, a2), (b0, b1, b2), (c0, c1, c2) = rows
    return a0 * (b1 * c2 - b2 * c1) - a1 * (b0 * c2 - b2 * c0) + a2 * (b0 * c1 - b1 * c0)


def _in_circumcircle(a, b, c, d) -> bool:
    """Strictly inside the circumcircle of the counter-clockwise triangle abc.

    Near-zero determinants are re-evaluated in exact rational arithmetic;
    exactly cocircular points count as outside, a fixed tie rule that keeps
    the triangulation deterministic.
    """
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    ad = adx * adx + ady * ady
    bd = bdx * bdx + bdy * bdy
    cd = cdx * cdx + cdy * cdy
    det = adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
    mag = (abs(adx) + abs(ady)) * (abs(bdx) + abs(bdy)) * (abs(cdx) + abs(cdy)) * max(ad, bd, cd, 1e-300)
    if abs(det) > 1e-10 * mag:
        return det > 0
    return _incircle_exact(a, b, c, d) > 0


def delaunay(points) -> np.ndarray:
    """Triangles (counter-clockwise vertex indices) of the Delaunay triangulation.

    Raises :class:`TriangulationError` for fewer than three distinct points
    or when all points are collinear.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise TriangulationError("points must have shape (n, 2)")
    n = pts.shape[0]
    if n < 3 or np.unique(pts, axis=0).shape[0] != n:
        raise TriangulationError("need at least three distinct points")
    if _collinear(pts):
        raise TriangulationError("all points are collinear")

    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    span = max(float(np.max(hi - lo)), 1.0)
    big = 1e3 * span
    verts = [tuple(p) for p in pts] + [
        (center[0] - 2 * big, center[1] - big),
        (center[0] + 2 * big, center[1] - big),
        (center[0], center[1] + 2 * big),
    ]
    tris: set[tuple[int, int, int]] = {(n, n + 1, n + 2)}

    for i in range(n):
        p = verts[i]
        bad = [t for t in tris if _in_circumcircle(verts[t[0]], verts[t[1]], verts[t[2]], p)]
        edges: dict[frozenset, tuple[int, int]] = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = frozenset(e)
                if key in edges:
                    del edges[key]
                else:
                    edges[key] = e
        for t in bad:
            tris.discard(t)
        for a, b in edges.values():
            tris.add(_rotate_min((a, b, i)))

    tris = [t for t in tris if max(t) < n]
    tris = _fill_hull(pts, tris)
    out = np.array(sorted(tris), dtype=int).reshape(-1, 3)
    if out.size == 0:
        raise TriangulationError("all points are collinear")
    return out


def _collinear(pts) -> bool:
    d = pts - pts[0]
    return np.linalg.matrix_rank(d, tol=1e-12 * max(1.0, float(np.abs(d).max()))) < 2


def _rotate_min(t):
    k = t.index(min(t))
    return t[k:] + t[:k]


def _fill_hull(pts, tris):
    """Add triangles missing along the convex hull.

    A finite enclosing triangle can leave thin slivers of the hull
    uncovered; any boundary edge whose outside neighbour is still inside
    the hull is closed with the point that keeps the empty-circle property.
    """
    tris = {_orient_ccw(pts, t) for t in tris}
    hull = set(_convex_hull(pts))
    changed = True
    while changed:
        changed = False
        count: dict[frozenset, list] = {}
        for t in tris:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                count.setdefault(frozenset(e), []).append(e)
        for key, uses in count.items():
            if len(uses) != 1:
                continue
            a, b = uses[0]
            if (a, b) in hull:
                continue
            # (a, b) is ccw in its triangle: candidates lie to the right of a->b
            best = None
            for c in range(len(pts)):
                if c in (a, b) or _orient(pts[b], pts[a], pts[c]) <= 0:
                    continue
                if best is None or _in_circumcircle(pts[b], pts[a], pts[best], pts[c]):
                    best = c
            if best is not None:
                tris.add(_orient_ccw(pts, (b, a, best)))
                changed = True
                break
    return tris


def _orient_ccw(pts, t):
    a, b, c = t
    if _orient(pts[a], pts[b], pts[c]) < 0:
        b, c = c, b
    return _rotate_min((a, b, c))


def _convex_hull(pts) -> list[tuple[int, int]]:
    """Counter-clockwise hull edges (monotone chain), collinear points kept."""
    order = sorted(range(len(pts)), key=lambda i: (pts[i][0], pts[i][1]))

    def chain(idx):
        out = []
        for i in idx:
            while len(out) >= 2 and _orient(pts[out[-2]], pts[out[-1]], pts[i]) < 0:
                out.pop()
            out.append(i)
        return out

    lower = chain(order)
    upper = chain(order[::-1])
    ring = lower[:-1] + upper[:-1]
    return [(ring[i], ring[(i + 1) % len(ring)]) for i in range(len(ring))]


def locate(points, triangles, queries, tol: float = 1e-12):
    """Containing triangle and barycentric weights for each query point.

    Returns ``(tri_index, weights)``; ``tri_index`` is -1 outside the hull.
    """
    pts = np.asarray(points, dtype=float)
    q = np.asarray(queries, dtype=float)
    a, b, c = (pts[triangles[:, i]] for i in range(3))
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    idx = np.full(q.shape[0], -1, dtype=int)
    weights = np.zeros((q.shape[0], 3))
    for s in range(0, q.shape[0], 2048):
        qq = q[s:s + 2048, None, :]
        l1 = ((c[:, 1] - a[:, 1]) * (qq[..., 0] - a[:, 0]) - (c[:, 0] - a[:, 0]) * (qq[..., 1] - a[:, 1])) / det
        l2 = ((a[:, 1] - b[:, 1]) * (qq[..., 0] - a[:, 0]) + (b[:, 0] - a[:, 0]) * (qq[..., 1] - a[:, 1])) / det
        # l1 is the weight of b, l2 of c
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)
        hit = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        rows = np.nonzero(hit)[0]
        idx[s + rows] = first[rows]
        weights[s + rows] = np.column_stack([l0[rows, first[rows]], l1[rows, first[rows]], l2[rows, first[rows]]])
    w = np.clip(weights, 0.0, 1.0)
    sums = w.sum(axis=1, keepdims=True)
    weights = np.where(sums > 0, w / np.where(sums > 0, sums, 1.0), 0.0)
    return idx, weights
