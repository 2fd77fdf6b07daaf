"""Analytic narrowphase for the simulator's primitive shapes.

Every contact is reported as a point, a unit normal pointing from body ``b``
towards body ``a`` and a signed gap (negative when penetrating). Pairs are
always emitted with ``a < b`` and in ascending ``(a, b)`` order so the impulse
solver visits them in a fixed sequence.

Box against box uses the corners of each box tested against the other box.
Edge-on-edge crossings are not detected; the object sizes and speeds used by
the scene generator keep that case rare and short-lived.
"""

from dataclasses import dataclass

import numpy as np

from ..geometry import quat_to_matrix


@dataclass(frozen=True)
class Contact:
    a: int
    b: int
    point: np.ndarray
    normal: np.ndarray
    gap: float


def _box_signed_distance(point, center, rot, half):
    """Signed distance from ``point`` to a box, with the outward normal there."""
    local = rot.T @ (point - center)
    q = np.abs(local) - half
    if np.any(q > 0):
        clamped = np.clip(local, -half, half)
        diff = local - clamped
        dist = float(np.linalg.norm(diff))
        return dist, rot @ (diff / dist)
    axis = int(np.argmax(q))
    normal = np.zeros(3)
    normal[axis] = 1.0 if local[axis] >= 0 else -1.0
    return float(q[axis]), rot @ normal


_CORNER_SIGNS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)


def _corners(spec, position, rot):
    return (_CORNER_SIGNS * spec.half_extents) @ rot.T + position


def _floor_vs(spec_b, pos_b, rot_b, floor_z, margin):
    """Contacts of a dynamic body against the floor plane (floor is ``a``)."""
    out = []
    if spec_b.shape == "sphere":
        r = spec_b.size[0]
        gap = pos_b[2] - r - floor_z
        if gap < margin:
            point = np.array([pos_b[0], pos_b[1], pos_b[2] - r])
            out.append((point, np.array([0.0, 0.0, -1.0]), gap))
    else:
        for corner in _corners(spec_b, pos_b, rot_b):
            gap = corner[2] - floor_z
            if gap < margin:
                out.append((corner, np.array([0.0, 0.0, -1.0]), gap))
    return out


def _sphere_sphere(ra, pa, rb, pb, margin):
    d = pa - pb
    dist = float(np.linalg.norm(d))
    gap = dist - ra - rb
    if gap >= margin:
        return []
    normal = d / dist if dist > 0 else np.array([0.0, 0.0, 1.0])
    point = pb + normal * (rb + 0.5 * gap)
    return [(point, normal, gap)]


def _sphere_box(r, ps, spec_box, pb, rot_b, margin):
    """Sphere against box; returned normal points from the box to the sphere."""
    dist, normal = _box_signed_distance(ps, pb, rot_b, spec_box.half_extents)
    gap = dist - r
    if gap >= margin:
        return []
    return [(ps - normal * r, normal, gap)]


def _box_box(spec_a, pa, ra, spec_b, pb, rb, margin):
    out = []
    for corner in _corners(spec_a, pa, ra):
        gap, normal = _box_signed_distance(corner, pb, rb, spec_b.half_extents)
        if gap < margin:
            out.append((corner, normal, gap))
    for corner in _corners(spec_b, pb, rb):
        gap, normal = _box_signed_distance(corner, pa, ra, spec_a.half_extents)
        if gap < margin:
            out.append((corner, -normal, gap))
    return out


def pair_contacts(specs, positions, rotations, a, b, margin):
    """Contacts between objects ``a < b`` whose gap is below ``margin``.

    ``rotations`` holds the ``(K, 3, 3)`` world rotation of every object.
    """
    sa, sb = specs[a], specs[b]
    pa, pb = positions[a], positions[b]
    ra, rb = rotations[a], rotations[b]
    if sa.shape == "floor" or sb.shape == "floor":
        if sa.shape == "floor" and sb.shape == "floor":
            return []
        if sa.shape == "floor":
            raw = _floor_vs(sb, pb, rb, pa[2], margin)
            return [Contact(a, b, p, n, g) for p, n, g in raw]
        raw = _floor_vs(sa, pa, ra, pb[2], margin)
        return [Contact(a, b, p, -n, g) for p, n, g in raw]
    if np.linalg.norm(pa - pb) - sa.bounding_radius - sb.bounding_radius >= margin:
        return []
    if sa.shape == "sphere" and sb.shape == "sphere":
        raw = _sphere_sphere(sa.size[0], pa, sb.size[0], pb, margin)
    elif sa.shape == "sphere":
        raw = _sphere_box(sa.size[0], pa, sb, pb, rb, margin)
    elif sb.shape == "sphere":
        raw = [(p, -n, g) for p, n, g in _sphere_box(sb.size[0], pb, sa, pa, ra, margin)]
    else:
        raw = _box_box(sa, pa, ra, sb, pb, rb, margin)
    return [Contact(a, b, p, n, g) for p, n, g in raw]


def find_contacts(specs, positions, quaternions, margins):
    """All contacts in ascending object-index order.

    ``margins`` is a ``(K,)`` per-object speculative distance; a pair is tested
    against the sum of its two entries.
    """
    out = []
    k = len(specs)
    rotations = quat_to_matrix(np.asarray(quaternions, dtype=float))
    for a in range(k):
        for b in range(a + 1, k):
            if specs[a].static and specs[b].static:
                continue
            out.extend(pair_contacts(specs, positions, rotations, a, b, margins[a] + margins[b]))
    return out


def min_separation(specs, positions, quaternions):
    """Smallest signed gap over all object pairs (``inf`` if nothing is close)."""
    contacts = find_contacts(specs, positions, quaternions, np.full(len(specs), 0.05))
    return min((c.gap for c in contacts), default=np.inf)
