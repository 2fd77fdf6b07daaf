"""Triangle primitives: area-scaled normals and triangle-triangle closest points.

The closest-point routine is vectorised over a batch of triangle pairs. It
enumerates a fixed candidate list per pair and keeps the first minimum:

* 3 vertices of ``s`` against triangle ``r`` and 3 vertices of ``r`` against ``s``
* 9 edge-edge pairs
* 6 edge-through-face crossings (catches intersecting triangles)
"""

import numpy as np

from ..errors import DegenerateTriangle

DEGENERACY_TOL = 1e-12

_EDGES = ((0, 1), (1, 2), (2, 0))


def triangle_normal(positions):
    """Un-normalised normal ``(v1 - v0) x (v2 - v0)``; its norm is twice the area."""
    p = np.asarray(positions, dtype=float)
    n = np.cross(p[..., 1, :] - p[..., 0, :], p[..., 2, :] - p[..., 0, :])
    if np.any(np.linalg.norm(n, axis=-1) < DEGENERACY_TOL):
        raise DegenerateTriangle("triangle vertices are collinear")
    return n


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def closest_point_on_triangle(p, a, b, c):
    """Closest point to ``p`` on triangle ``abc`` (batched Voronoi-region test)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        out = a + ab * v_in[..., None] + ac * w_in[..., None]

        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))

    # later assignments take priority: evaluate regions from last to first
    reg_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    out = np.where(reg_bc[..., None], b + (c - b) * t_bc[..., None], out)
    reg_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(reg_ac[..., None], a + ac * t_ac[..., None], out)
    reg_c = (d6 >= 0) & (d5 <= d6)
    out = np.where(reg_c[..., None], c, out)
    reg_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(reg_ab[..., None], a + ab * t_ab[..., None], out)
    reg_b = (d3 >= 0) & (d4 <= d3)
    out = np.where(reg_b[..., None], b, out)
    reg_a = (d1 <= 0) & (d2 <= 0)
    out = np.where(reg_a[..., None], a, out)
    return out


def closest_points_segments(p1, q1, p2, q2):
    """Closest points between segments ``p1q1`` and ``p2q2`` (non-degenerate)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0.0, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = (b * s + f) / e
        s = np.where(t < 0.0, np.clip(-c / a, 0.0, 1.0), s)
        s = np.where(t > 1.0, np.clip((b - c) / a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    return p1 + d1 * s[..., None], p2 + d2 * t[..., None]


def _segment_face_crossing(p, q, a, b, c):
    """Point where segment ``pq`` passes through triangle ``abc``; NaN if it does not."""
    n = np.cross(b - a, c - a)
    dp = _dot(n, p - a)
    dq = _dot(n, q - a)
    crosses = (dp * dq <= 0.0) & (dp != dq)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(crosses, dp / (dp - dq), 0.0)
    x = p + (q - p) * t[..., None]
    # inside test via signed sub-areas against the face normal
    e0 = _dot(np.cross(b - a, x - a), n)
    e1 = _dot(np.cross(c - b, x - b), n)
    e2 = _dot(np.cross(a - c, x - c), n)
    inside = crosses & (e0 >= 0.0) & (e1 >= 0.0) & (e2 >= 0.0)
    return np.where(inside[..., None], x, np.nan)


def _closest_points_ordered(ts, tr):
    m = ts.shape[0]
    # every candidate family is evaluated in one stacked call; the maths is
    # elementwise, so stacking does not change any result bit
    tile = lambda x, n: np.concatenate([x] * n)  # noqa: E731
    pts = np.concatenate([ts[:, 0], ts[:, 1], ts[:, 2]])
    on_r = closest_point_on_triangle(pts, tile(tr[:, 0], 3), tile(tr[:, 1], 3), tile(tr[:, 2], 3))
    pts_r = np.concatenate([tr[:, 0], tr[:, 1], tr[:, 2]])
    on_s = closest_point_on_triangle(pts_r, tile(ts[:, 0], 3), tile(ts[:, 1], 3), tile(ts[:, 2], 3))

    seg = [(i, j, k, l) for i, j in _EDGES for k, l in _EDGES]
    ps, pr = closest_points_segments(
        np.concatenate([ts[:, i] for i, _, _, _ in seg]),
        np.concatenate([ts[:, j] for _, j, _, _ in seg]),
        np.concatenate([tr[:, k] for _, _, k, _ in seg]),
        np.concatenate([tr[:, l] for _, _, _, l in seg]),
    )
    x_sr = _segment_face_crossing(
        np.concatenate([ts[:, i] for i, _ in _EDGES]),
        np.concatenate([ts[:, j] for _, j in _EDGES]),
        tile(tr[:, 0], 3), tile(tr[:, 1], 3), tile(tr[:, 2], 3),
    )
    x_rs = _segment_face_crossing(
        np.concatenate([tr[:, k] for k, _ in _EDGES]),
        np.concatenate([tr[:, l] for _, l in _EDGES]),
        tile(ts[:, 0], 3), tile(ts[:, 1], 3), tile(ts[:, 2], 3),
    )
    # candidate order: s-vertices on r, r-vertices on s, edge pairs, crossings
    cs = np.concatenate([pts, on_s, ps, x_sr, x_rs]).reshape(-1, m, 3).transpose(1, 0, 2)
    cr = np.concatenate([on_r, pts_r, pr, x_sr, x_rs]).reshape(-1, m, 3).transpose(1, 0, 2)
    d = np.linalg.norm(cs - cr, axis=-1)
    d = np.where(np.isnan(d), np.inf, d)
    best = np.argmin(d, axis=1)
    idx = np.arange(m)
    return cs[idx, best], cr[idx, best], d[idx, best]


def closest_points_batch(tri_s, tri_r):
    """Closest points for each pair in a batch of triangle pairs.

    ``tri_s`` and ``tri_r`` have shape ``(M, 3, 3)``. Returns ``(p_s, p_r, dist)``
    with shapes ``(M, 3)``, ``(M, 3)``, ``(M,)``. The result is exactly
    symmetric in the argument order.
    """
    ts = np.asarray(tri_s, dtype=float).reshape(-1, 3, 3)
    tr = np.asarray(tri_r, dtype=float).reshape(-1, 3, 3)
    if ts.shape[0] == 0:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    # evaluate every pair in a canonical (lexicographic) order so that swapping
    # the arguments reproduces bitwise-identical work
    fs = ts.reshape(-1, 9)
    fr = tr.reshape(-1, 9)
    differ = fs != fr
    first = np.argmax(differ, axis=1)
    idx = np.arange(fs.shape[0])
    swap = differ.any(axis=1) & (fr[idx, first] < fs[idx, first])
    lo = np.where(swap[:, None, None], tr, ts)
    hi = np.where(swap[:, None, None], ts, tr)
    p_lo, p_hi, dist = _closest_points_ordered(lo, hi)
    p_s = np.where(swap[:, None], p_hi, p_lo)
    p_r = np.where(swap[:, None], p_lo, p_hi)
    return p_s, p_r, dist


def closest_points(tri_s, tri_r):
    """Closest points ``(p_s, p_r, dist)`` between two triangles."""
    ts = np.asarray(tri_s, dtype=float)
    tr = np.asarray(tri_r, dtype=float)
    triangle_normal(ts)
    triangle_normal(tr)
    p_s, p_r, d = closest_points_batch(ts[None], tr[None])
    return p_s[0], p_r[0], float(d[0])
