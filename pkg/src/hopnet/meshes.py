"""Procedural triangle meshes for the primitive shapes and the floor.

All generated meshes have outward (counter-clockwise seen from outside)
winding and node coordinates centred so that the unweighted node mean is the
origin.
"""

import numpy as np

FLOOR_HALF_EXTENT = 20.0
FLOOR_TILES = 10


def _recentre(nodes):
    return nodes - nodes.mean(axis=0)


def icosphere(radius=1.0, subdivision=1):
    """Subdivided icosahedron: 12, 42, 162, ... nodes."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivision):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    nodes = _recentre(np.array(verts) * radius)
    return nodes, np.array(faces, dtype=np.int64)


def box(extents=(1.0, 1.0, 1.0), subdivision=1):
    """Axis-aligned box with each side split into a ``(s+1) x (s+1)`` grid of quads.

    ``extents`` are full side lengths. Subdivision 1 gives 26 nodes, 48 faces.
    """
    n = subdivision + 1
    half = np.asarray(extents, dtype=float) / 2.0
    index = {}
    nodes = []
    faces = []

    def node(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(nodes)
            nodes.append(p)
        return index[key]

    grid = np.linspace(-1.0, 1.0, n + 1)
    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        for sign in (-1.0, 1.0):
            ids = np.empty((n + 1, n + 1), dtype=np.int64)
            for i, u in enumerate(grid):
                for j, v in enumerate(grid):
                    p = np.zeros(3)
                    p[axis] = sign
                    p[u_ax] = u
                    p[v_ax] = v
                    ids[i, j] = node(p * half)
            for i in range(n):
                for j in range(n):
                    a, b, c, d = ids[i, j], ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]
                    tri1, tri2 = (a, b, c), (a, c, d)
                    # orient outward: normal must point along sign * axis
                    pa, pb, pc = nodes[a], nodes[b], nodes[c]
                    if np.cross(pb - pa, pc - pa)[axis] * sign < 0:
                        tri1, tri2 = (a, c, b), (a, d, c)
                    faces += [tri1, tri2]
    return _recentre(np.array(nodes)), np.array(faces, dtype=np.int64)


def floor(half_extent=FLOOR_HALF_EXTENT, tiles=FLOOR_TILES):
    """Flat square quad mesh in the ``z = 0`` plane, normals pointing ``+z``."""
    g = np.linspace(-half_extent, half_extent, tiles + 1)
    xs, ys = np.meshgrid(g, g, indexing="ij")
    nodes = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
    faces = []
    for i in range(tiles):
        for j in range(tiles):
            a = i * (tiles + 1) + j
            b = (i + 1) * (tiles + 1) + j
            c = b + 1
            d = a + 1
            faces += [(a, b, c), (a, c, d)]
    # the grid is symmetric, so the node mean is already the origin
    return nodes, np.array(faces, dtype=np.int64)
