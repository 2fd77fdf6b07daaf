"""Axis-aligned bounding boxes and sweep-and-prune pair finding."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def from_points(cls, points):
        p = np.asarray(points, dtype=float)
        return cls(p.min(axis=0), p.max(axis=0))


def _as_bounds(boxes):
    if isinstance(boxes, np.ndarray):
        b = np.asarray(boxes, dtype=float).reshape(-1, 2, 3)
        return b[:, 0], b[:, 1]
    boxes = list(boxes)
    if not boxes:
        return np.zeros((0, 3)), np.zeros((0, 3))
    lo = np.array([np.asarray(b.min, dtype=float) for b in boxes])
    hi = np.array([np.asarray(b.max, dtype=float) for b in boxes])
    return lo, hi


def aabb_pairs(boxes, margin=0.0):
    """Index pairs ``(i, j)``, ``i < j``, whose boxes overlap once inflated by ``margin``.

    Two boxes inflated by ``margin`` each overlap iff their gap along every axis
    is at most ``2 * margin``; any two points closer than ``margin`` therefore
    come from a reported pair. ``boxes`` is a sequence of :class:`Aabb` or an
    array of shape ``(n, 2, 3)``. Output is sorted.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    lo, hi = _as_bounds(boxes)
    n = lo.shape[0]
    if n < 2:
        return []
    lo = lo - margin
    hi = hi + margin
    order = np.argsort(lo[:, 0], kind="stable")
    slo = lo[order]
    shi = hi[order]
    # for each box, candidates are those that start before it ends along x
    stop = np.searchsorted(slo[:, 0], shi[:, 0], side="right")
    pairs = []
    for a in range(n):
        b = np.arange(a + 1, stop[a])
        if b.size == 0:
            continue
        ok = np.all((slo[b] <= shi[a]) & (shi[b] >= slo[a]), axis=1)
        for j in b[ok]:
            i0, j0 = order[a], order[j]
            pairs.append((int(min(i0, j0)), int(max(i0, j0))))
    pairs.sort()
    return pairs


def aabb_pairs_bruteforce(boxes, margin=0.0):
    lo, hi = _as_bounds(boxes)
    lo = lo - margin
    hi = hi + margin
    ov = np.all((lo[:, None] <= hi[None]) & (hi[:, None] >= lo[None]), axis=2)
    i, j = np.nonzero(np.triu(ov, k=1))
    return sorted(zip(i.tolist(), j.tolist()))
