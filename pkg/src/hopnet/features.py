"""Raw per-cell input features and running normalisation statistics.

Features are built from the reference frame ``t0`` (the first frame of the
trajectory), ``t-1`` and ``t``. The velocity at ``t-1`` additionally needs the
frame ``t-2``; when that frame does not exist (first step of a trajectory or of
a rollout) the constant-velocity assumption ``v(t-1) = v(t)`` is used. Every
feature is a difference of positions, so all of them are invariant to a global
translation of the scene.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MissingHistory, MissingPhysicalParams, ShapeMismatch
from .geometry import closest_points_batch, triangle_normal

NODE_DIM = 16
NODE_DIM_NO_CENTER = 8
EDGE_DIM = 8
FACE_DIM = 4
CONTACT_DIM = 28
OBJECT_DIM = 13
NORMALIZER_EPS = 1e-8

RANKS = ("nodes", "edges", "faces", "contacts", "objects")


@dataclass(frozen=True)
class FrameHistory:
    """Node positions ``(N, 3)`` at ``t0``, ``t-1``, ``t`` and optionally ``t-2``."""

    reference: np.ndarray
    previous: np.ndarray
    current: np.ndarray
    before: Optional[np.ndarray] = None

    @classmethod
    def from_frames(cls, reference, previous, current, before=None):
        if reference is None or previous is None or current is None:
            raise MissingHistory("frames t0, t-1 and t are all required")
        frames = [np.asarray(f, dtype=float) for f in (reference, previous, current)]
        if before is not None:
            frames.append(np.asarray(before, dtype=float))
        shapes = {f.shape for f in frames}
        if len(shapes) != 1 or frames[0].ndim != 2 or frames[0].shape[1] != 3:
            raise MissingHistory(f"inconsistent frame shapes {sorted(shapes)}")
        return cls(*frames)

    def translated(self, offset):
        offset = np.asarray(offset, dtype=float)
        before = None if self.before is None else self.before + offset
        return FrameHistory(self.reference + offset, self.previous + offset, self.current + offset, before)

    @property
    def velocity(self):
        return self.current - self.previous

    @property
    def previous_velocity(self):
        if self.before is None:
            return self.velocity
        return self.previous - self.before


@dataclass(frozen=True)
class FeatureBundle:
    nodes: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    contacts: np.ndarray
    objects: np.ndarray

    def items(self):
        return [(name, getattr(self, name)) for name in RANKS]

    def map(self, fn):
        return FeatureBundle(**{name: fn(name, value) for name, value in self.items()})


def object_centers(positions, node_object, num_objects):
    """Unweighted mean of each object's nodes, ``(K, 3)``."""
    sums = np.zeros((num_objects, 3))
    np.add.at(sums, node_object, positions)
    counts = np.bincount(node_object, minlength=num_objects).astype(float)
    return sums / counts[:, None]


def _with_norm(v):
    return np.concatenate([v, np.linalg.norm(v, axis=-1, keepdims=True)], axis=-1)


def _require(history):
    if not isinstance(history, FrameHistory):
        raise MissingHistory("expected a FrameHistory")


def node_features(history, cc, center_distance=True):
    """``[v_t, |v_t|, v_t-1, |v_t-1|, d_t0, |d_t0|, d_t, |d_t|]`` per node."""
    _require(history)
    blocks = [_with_norm(history.velocity), _with_norm(history.previous_velocity)]
    if center_distance:
        owner = cc.node_object
        k = cc.num_objects
        d_ref = history.reference - object_centers(history.reference, owner, k)[owner]
        d_cur = history.current - object_centers(history.current, owner, k)[owner]
        blocks += [_with_norm(d_ref), _with_norm(d_cur)]
    return np.concatenate(blocks, axis=1)


def edge_features(history, cc):
    """``[x_s - x_r at t0, norm, x_s - x_r at t, norm]`` per directed edge."""
    _require(history)
    s, r = cc.edges[:, 0], cc.edges[:, 1]
    ref = history.reference[s] - history.reference[r]
    cur = history.current[s] - history.current[r]
    return np.concatenate([_with_norm(ref), _with_norm(cur)], axis=1)


def face_features(history, cc):
    """Area-scaled face normal and its norm at time ``t``."""
    _require(history)
    if len(cc.faces) == 0:
        return np.zeros((0, FACE_DIM))
    return _with_norm(triangle_normal(history.current[cc.faces]))


def contact_features(history, cc):
    """Closest-point offset plus vertex-to-closest-point offsets per directed contact."""
    _require(history)
    c = cc.contacts
    if len(c) == 0:
        return np.zeros((0, CONTACT_DIM))
    tri_s = history.current[cc.faces[c[:, 0]]]
    tri_r = history.current[cc.faces[c[:, 1]]]
    p_s, p_r, _ = closest_points_batch(tri_s, tri_r)
    blocks = [_with_norm(p_s - p_r)]
    blocks += [_with_norm(tri_s[:, i] - p_s) for i in range(3)]
    blocks += [_with_norm(tri_r[:, i] - p_r) for i in range(3)]
    return np.concatenate(blocks, axis=1)


def object_features(history, cc, physical_params):
    """``[v_t, |v_t|, v_t-1, |v_t-1|, b_static, b_dynamic, m, c1, c2]`` per object.

    ``physical_params`` is ``(K, 3)``: mass, friction, restitution.
    """
    _require(history)
    k = cc.num_objects
    if physical_params is None:
        raise MissingPhysicalParams("object features need (mass, friction, restitution) per object")
    params = np.asarray(physical_params, dtype=float)
    if params.shape != (k, 3):
        raise MissingPhysicalParams(f"expected physical params of shape ({k}, 3), got {params.shape}")
    owner = cc.node_object
    cur = object_centers(history.current, owner, k)
    prev = object_centers(history.previous, owner, k)
    vel = cur - prev
    if history.before is None:
        vel_prev = vel
    else:
        vel_prev = prev - object_centers(history.before, owner, k)
    static = np.asarray(cc.mesh.static, dtype=bool)
    onehot = np.stack([static, ~static], axis=1).astype(float)
    return np.concatenate([_with_norm(vel), _with_norm(vel_prev), onehot, params], axis=1)


def build_features(history, cc, physical_params, center_distance=True):
    return FeatureBundle(
        nodes=node_features(history, cc, center_distance),
        edges=edge_features(history, cc),
        faces=face_features(history, cc),
        contacts=contact_features(history, cc),
        objects=object_features(history, cc, physical_params),
    )


class Normalizer:
    """Per-channel running mean/variance (parallel Welford merge)."""

    def __init__(self, dim, eps=NORMALIZER_EPS):
        self.dim = int(dim)
        self.eps = float(eps)
        self.count = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    @property
    def var(self):
        if self.count == 0:
            return np.ones(self.dim)
        return self.m2 / self.count

    @property
    def std(self):
        return np.sqrt(self.var + self.eps)

    def update(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        n = x.shape[0]
        if n == 0:
            return
        mean_b = x.mean(axis=0)
        m2_b = ((x - mean_b) ** 2).sum(axis=0)
        total = self.count + n
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + m2_b + delta * delta * (self.count * n / total)
        self.count = total

    def normalize(self, x, update=False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ShapeMismatch(f"normalizer expects {self.dim} channels, got {x.shape[-1]}")
        if update:
            self.update(x)
        return (x - self.mean) / self.std

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.std + self.mean

    def state(self):
        return {"count": np.array([self.count], dtype=np.int64), "mean": self.mean.copy(), "m2": self.m2.copy()}

    @classmethod
    def from_state(cls, state, eps=NORMALIZER_EPS):
        mean = np.asarray(state["mean"], dtype=float)
        norm = cls(mean.shape[0], eps)
        norm.count = int(np.asarray(state["count"]).reshape(-1)[0])
        norm.mean = mean.copy()
        norm.m2 = np.asarray(state["m2"], dtype=float).copy()
        return norm


class NormalizerSet:
    """One normaliser per input rank plus the node and object targets."""

    def __init__(self, node_dim=NODE_DIM):
        self.inputs = {
            "nodes": Normalizer(node_dim),
            "edges": Normalizer(EDGE_DIM),
            "faces": Normalizer(FACE_DIM),
            "contacts": Normalizer(CONTACT_DIM),
            "objects": Normalizer(OBJECT_DIM),
        }
        self.node_target = Normalizer(3)
        self.object_target = Normalizer(3)

    def named(self):
        out = {f"input.{k}": v for k, v in self.inputs.items()}
        out["target.nodes"] = self.node_target
        out["target.objects"] = self.object_target
        return out

    @classmethod
    def from_named(cls, named):
        node_dim = named["input.nodes"].dim
        out = cls(node_dim)
        for key, value in named.items():
            group, name = key.split(".", 1)
            if group == "input":
                out.inputs[name] = value
            elif name == "nodes":
                out.node_target = value
            else:
                out.object_target = value
        return out


def normalize(bundle, normalizers, update=False):
    """Channel-wise standardisation of every rank; statistics updated only if ``update``."""
    inputs = normalizers.inputs if isinstance(normalizers, NormalizerSet) else normalizers
    return bundle.map(lambda name, x: inputs[name].normalize(x, update=update))


def denormalize(bundle, normalizers):
    inputs = normalizers.inputs if isinstance(normalizers, NormalizerSet) else normalizers
    return bundle.map(lambda name, x: inputs[name].denormalize(x))


def bundle_max_difference(bundle_a, bundle_b):
    """Largest absolute entry-wise difference between two bundles."""
    worst = 0.0
    for (_, a), (_, b) in zip(bundle_a.items(), bundle_b.items()):
        if a.shape != b.shape:
            return np.inf
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


__all__ = [
    "FrameHistory",
    "FeatureBundle",
    "Normalizer",
    "NormalizerSet",
    "build_features",
    "bundle_max_difference",
    "contact_features",
    "denormalize",
    "edge_features",
    "face_features",
    "node_features",
    "normalize",
    "object_centers",
    "object_features",
]
