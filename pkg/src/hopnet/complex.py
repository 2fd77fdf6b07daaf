"""Combinatorial complex over a multi-object triangle-mesh scene.

Cells per rank:

* 0 - nodes
* 1 - directed mesh edges (each undirected face edge stored in both directions)
* 2 - triangular faces
* 3 - directed collision contacts ``sender face -> receiver face`` between
  faces of different objects
* 4 - objects

Cells live in flat integer arrays so that the message-passing code can index
them directly; :class:`Cell` views are materialised only for neighbourhood
queries.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MalformedMesh, RankOutOfRange
from .geometry import aabb_pairs, closest_points_batch

DEFAULT_CONTACT_RADIUS = 0.25


@dataclass(frozen=True)
class Cell:
    rank: int
    index: int
    nodes: frozenset
    meta: tuple = ()


@dataclass(frozen=True)
class SceneMesh:
    """Static topology of a scene: concatenated object meshes."""

    node_object: np.ndarray  # (N,) object id of every node
    faces: np.ndarray  # (F, 3) global node indices, stored winding
    face_object: np.ndarray  # (F,)
    static: np.ndarray  # (K,) bool

    @classmethod
    def from_objects(cls, object_faces, object_num_nodes, static=None):
        """Concatenate per-object meshes given with object-local face indices."""
        faces = []
        node_object = []
        face_object = []
        offset = 0
        for k, (f, n) in enumerate(zip(object_faces, object_num_nodes)):
            f = np.asarray(f, dtype=np.int64).reshape(-1, 3)
            faces.append(f + offset)
            node_object.append(np.full(n, k, dtype=np.int64))
            face_object.append(np.full(len(f), k, dtype=np.int64))
            offset += n
        k = len(object_num_nodes)
        static = np.zeros(k, dtype=bool) if static is None else np.asarray(static, dtype=bool)
        return cls(
            node_object=np.concatenate(node_object) if node_object else np.zeros(0, np.int64),
            faces=np.concatenate(faces) if faces else np.zeros((0, 3), np.int64),
            face_object=np.concatenate(face_object) if face_object else np.zeros(0, np.int64),
            static=static,
        )

    @property
    def num_nodes(self):
        return len(self.node_object)

    @property
    def num_objects(self):
        return len(self.static)


@dataclass(frozen=True, eq=False)
class CombinatorialComplex:
    mesh: SceneMesh
    edges: np.ndarray  # (E, 2) directed (sender, receiver) node pairs
    face_edges: np.ndarray  # (F, 6) indices of the directed edges inside each face
    object_nodes: tuple  # K arrays of node ids
    object_faces: tuple  # K arrays of face ids
    contacts: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    contact_radius: float = DEFAULT_CONTACT_RADIUS

    @property
    def faces(self):
        return self.mesh.faces

    @property
    def node_object(self):
        return self.mesh.node_object

    @property
    def face_object(self):
        return self.mesh.face_object

    @property
    def num_objects(self):
        return self.mesh.num_objects

    def counts(self):
        return (
            self.mesh.num_nodes,
            len(self.edges),
            len(self.faces),
            len(self.contacts),
            self.num_objects,
        )

    def with_contacts(self, contacts, contact_radius):
        contacts = np.asarray(contacts, dtype=np.int64).reshape(-1, 2)
        return replace(self, contacts=contacts, contact_radius=float(contact_radius))

    # -- cell views -----------------------------------------------------
    def cell(self, rank, index):
        if rank == 0:
            return Cell(0, index, frozenset((int(index),)))
        if rank == 1:
            s, r = self.edges[index]
            return Cell(1, index, frozenset((int(s), int(r))), (int(s), int(r)))
        if rank == 2:
            f = self.faces[index]
            return Cell(2, index, frozenset(int(i) for i in f), (int(self.face_object[index]),) + tuple(int(i) for i in f))
        if rank == 3:
            s, r = self.contacts[index]
            nodes = frozenset(int(i) for i in np.concatenate([self.faces[s], self.faces[r]]))
            return Cell(3, index, nodes, (int(s), int(r)))
        if rank == 4:
            return Cell(4, index, frozenset(int(i) for i in self.object_nodes[index]), (int(index), bool(self.mesh.static[index])))
        raise RankOutOfRange(f"rank {rank} not in 0..4")

    def cells(self, rank):
        return [self.cell(rank, i) for i in range(self.counts()[rank])]

    def node_incidence(self, rank):
        """For every node, the sorted list of rank-``rank`` cells containing it."""
        cache = self.__dict__.setdefault("_incidence", {})
        if rank not in cache:
            table = [[] for _ in range(self.mesh.num_nodes)]
            for c in self.cells(rank):
                for n in c.nodes:
                    table[n].append(c.index)
            cache[rank] = table
        return cache[rank]


def build_complex(mesh, contact_radius=DEFAULT_CONTACT_RADIUS):
    """Build the contact-free complex for a scene topology."""
    n = mesh.num_nodes
    k = mesh.num_objects
    faces = np.asarray(mesh.faces, dtype=np.int64)
    if faces.size and (faces.min() < 0 or faces.max() >= n):
        raise MalformedMesh("face references a node index out of range")
    if np.any(faces[:, 0] == faces[:, 1]) or np.any(faces[:, 1] == faces[:, 2]) or np.any(faces[:, 0] == faces[:, 2]):
        raise MalformedMesh("face with repeated node")
    keys = np.sort(faces, axis=1)
    if len(np.unique(keys, axis=0)) != len(keys):
        raise MalformedMesh("duplicate face")
    owners = mesh.node_object[faces]
    if np.any(owners != owners[:, :1]) or np.any(owners[:, 0] != mesh.face_object):
        raise MalformedMesh("face spans nodes of different objects")

    object_nodes = tuple(np.flatnonzero(mesh.node_object == o) for o in range(k))
    object_faces = tuple(np.flatnonzero(mesh.face_object == o) for o in range(k))
    for o in range(k):
        if len(object_nodes[o]) < 3:
            raise MalformedMesh(f"object {o} has fewer than 3 nodes")
        if len(object_faces[o]) == 0:
            raise MalformedMesh(f"object {o} has no faces")

    # three undirected edges per face, both directions, sorted by (sender, receiver)
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    directed = np.concatenate([pairs, pairs[:, ::-1]])
    edges = np.unique(directed, axis=0)
    # edge lookup for the face -> edge incidence
    codes = edges[:, 0] * n + edges[:, 1]
    face_pairs = np.stack(
        [faces[:, [0, 1]], faces[:, [1, 0]], faces[:, [1, 2]], faces[:, [2, 1]], faces[:, [2, 0]], faces[:, [0, 2]]],
        axis=1,
    )
    face_codes = face_pairs[..., 0] * n + face_pairs[..., 1]
    face_edges = np.searchsorted(codes, face_codes)
    return CombinatorialComplex(
        mesh=mesh,
        edges=edges,
        face_edges=face_edges,
        object_nodes=object_nodes,
        object_faces=object_faces,
        contact_radius=float(contact_radius),
    )


def face_bounds(positions, faces):
    tri = positions[faces]
    return tri.min(axis=1), tri.max(axis=1)


def contact_candidates(cc, positions, contact_radius):
    """Face pairs ``(s, r)``, ``s < r``, from different objects surviving the AABB test."""
    lo, hi = face_bounds(positions, cc.faces)
    obj_boxes = np.stack(
        [np.stack([lo[f].min(axis=0), hi[f].max(axis=0)]) for f in cc.object_faces]
    ) if cc.num_objects else np.zeros((0, 2, 3))
    out = []
    for a, b in aabb_pairs(obj_boxes, contact_radius):
        fa = cc.object_faces[a]
        fb = cc.object_faces[b]
        m = contact_radius
        ok = np.all(
            (lo[fa][:, None] - m <= hi[fb][None] + m) & (hi[fa][:, None] + m >= lo[fb][None] - m),
            axis=2,
        )
        i, j = np.nonzero(ok)
        out.append(np.stack([fa[i], fb[j]], axis=1))
    if not out:
        return np.zeros((0, 2), np.int64)
    cand = np.concatenate(out)
    cand = np.sort(cand, axis=1)
    return cand[np.lexsort((cand[:, 1], cand[:, 0]))]


def contact_pairs(cc, positions, contact_radius):
    """Unordered face pairs within ``contact_radius``, with their closest points."""
    positions = np.asarray(positions, dtype=float)
    cand = contact_candidates(cc, positions, contact_radius)
    if len(cand) == 0:
        return cand, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    p_s, p_r, d = closest_points_batch(positions[cc.faces[cand[:, 0]]], positions[cc.faces[cand[:, 1]]])
    keep = d < contact_radius
    return cand[keep], p_s[keep], p_r[keep], d[keep]


def detect_contacts(cc, positions, contact_radius=None):
    """Return a new complex whose rank-3 cells are the directed contacts at ``positions``."""
    contact_radius = cc.contact_radius if contact_radius is None else float(contact_radius)
    if contact_radius <= 0:
        raise ValueError("contact radius must be positive")
    pairs, *_ = contact_pairs(cc, positions, contact_radius)
    directed = np.concatenate([pairs, pairs[:, ::-1]])
    if len(directed):
        directed = directed[np.lexsort((directed[:, 1], directed[:, 0]))]
    return cc.with_contacts(directed, contact_radius)


def detect_contacts_bruteforce(cc, positions, contact_radius):
    """All-pairs narrowphase, no broadphase. Reference for tests."""
    positions = np.asarray(positions, dtype=float)
    f = len(cc.faces)
    i, j = np.triu_indices(f, k=1)
    keep = cc.face_object[i] != cc.face_object[j]
    i, j = i[keep], j[keep]
    _, _, d = closest_points_batch(positions[cc.faces[i]], positions[cc.faces[j]])
    hit = d < contact_radius
    pairs = np.stack([i[hit], j[hit]], axis=1)
    directed = np.concatenate([pairs, pairs[:, ::-1]])
    if len(directed):
        directed = directed[np.lexsort((directed[:, 1], directed[:, 0]))]
    return directed


def neighborhood(cc, cell, direction, k):
    """k-up or k-down neighbourhood of ``cell`` (a :class:`Cell` or ``(rank, index)``).

    Up: cells ``y`` of rank ``rank(x) + k`` whose node set contains that of
    ``x``. Down: cells of rank ``rank(x) - k`` contained in ``x``. Ranks differ,
    so a cell and its neighbour are always distinct cells even when their
    node sets coincide. Directed cells are both returned.
    """
    if not isinstance(cell, Cell):
        cell = cc.cell(*cell)
    if k < 1:
        raise RankOutOfRange("k must be >= 1")
    if direction == "up":
        target = cell.rank + k
    elif direction == "down":
        target = cell.rank - k
    else:
        raise ValueError("direction must be 'up' or 'down'")
    if not 0 <= target <= 4:
        raise RankOutOfRange(f"rank {target} outside 0..4")
    incidence = cc.node_incidence(target)
    if direction == "up":
        first = min(cell.nodes)
        candidates = incidence[first]
        keep = [j for j in candidates if cell.nodes <= cc.cell(target, j).nodes]
    else:
        candidates = sorted({j for n in cell.nodes for j in incidence[n]})
        keep = [j for j in candidates if cc.cell(target, j).nodes <= cell.nodes]
    return [cc.cell(target, j) for j in keep]


def neighborhood_bruteforce(cc, cell, direction, k):
    """Exhaustive subset scan over all cells. Reference for tests."""
    if not isinstance(cell, Cell):
        cell = cc.cell(*cell)
    target = cell.rank + k if direction == "up" else cell.rank - k
    if not 0 <= target <= 4 or k < 1:
        raise RankOutOfRange(f"rank {target} outside 0..4")
    out = []
    for y in cc.cells(target):
        if direction == "up" and cell.nodes <= y.nodes:
            out.append(y)
        elif direction == "down" and y.nodes <= cell.nodes:
            out.append(y)
    return out
