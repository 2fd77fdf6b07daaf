"""Trajectories: object table plus per-frame rigid poses, and their file format.

Trajectory files use the container from :mod:`hopnet.formats` with magic
``HOPNTRJ\\0`` and version 1. The JSON ``meta`` block is::

    {"seed": int, "generator_version": str, "extra": {...},
     "object_ids": [int, ...],
     "objects": [{"shape", "size", "mass", "friction", "restitution",
                  "static", "subdivision"}, ...]}

followed by these arrays, in order:

* ``object/<k>/nodes`` ``(n_k, 3)`` float64 canonical mesh nodes of object k
* ``object/<k>/faces`` ``(f_k, 3)`` int64 object-local face indices
* ``poses`` ``(T, K, 7)`` float64; the record for frame t and object k is
  ``(x, y, z, qw, qx, qy, qz)``

``object_ids`` are stable identifiers that survive object removal, so edits
and reports can name objects the same way before and after a counterfactual.
World node positions are ``R(q) @ node + x`` per object, objects concatenated
in index order.
"""

from dataclasses import dataclass, field

import numpy as np

from . import formats
from .complex import SceneMesh
from .errors import FormatError, LengthMismatch
from .geometry import quat_to_matrix
from .sim.bodies import ObjectSpec

MAGIC = b"HOPNTRJ\0"
VERSION = 1
GENERATOR_VERSION = "hopnet-sim-1"


@dataclass(eq=False)
class Trajectory:
    specs: list
    positions: np.ndarray  # (T, K, 3)
    quaternions: np.ndarray  # (T, K, 4)
    seed: int = -1
    generator_version: str = GENERATOR_VERSION
    extra: dict = field(default_factory=dict)
    object_ids: list = None

    def __post_init__(self):
        self.object_ids = list(range(len(self.specs))) if self.object_ids is None else [int(i) for i in self.object_ids]
        if len(self.object_ids) != len(self.specs):
            raise LengthMismatch(f"{len(self.object_ids)} object ids for {len(self.specs)} objects")
        self.positions = np.asarray(self.positions, dtype=float)
        self.quaternions = np.asarray(self.quaternions, dtype=float)
        t, k = self.positions.shape[:2]
        if self.quaternions.shape != (t, k, 4) or self.positions.shape != (t, k, 3) or k != len(self.specs):
            raise LengthMismatch(
                f"poses {self.positions.shape}/{self.quaternions.shape} do not match {len(self.specs)} objects"
            )

    @property
    def num_frames(self):
        return self.positions.shape[0]

    @property
    def num_objects(self):
        return len(self.specs)

    @property
    def static(self):
        return np.array([s.static for s in self.specs])

    def physical_params(self):
        """``(K, 3)`` rows of ``(mass, friction, restitution)``; the floor reports mass 0."""
        return np.array([s.physical_params for s in self.specs], dtype=float)

    def scene_mesh(self):
        cached = self.__dict__.get("_mesh")
        if cached is None:
            cached = SceneMesh.from_objects(
                [s.faces for s in self.specs], [len(s.nodes) for s in self.specs], self.static
            )
            self.__dict__["_mesh"] = cached
        return cached

    def nodes_at(self, t):
        """World node positions ``(N, 3)`` at frame ``t``."""
        return posed_nodes(self.specs, self.positions[t], self.quaternions[t])

    def all_nodes(self):
        return np.stack([self.nodes_at(t) for t in range(self.num_frames)])

    def truncated(self, frames):
        return Trajectory(
            self.specs,
            self.positions[:frames],
            self.quaternions[:frames],
            self.seed,
            self.generator_version,
            dict(self.extra),
            list(self.object_ids),
        )

    def index_of(self, object_id):
        """Position of a stable object id in the current object list, or None."""
        try:
            return self.object_ids.index(int(object_id))
        except ValueError:
            return None


def posed_nodes(specs, positions, quaternions):
    parts = [s.nodes @ quat_to_matrix(q).T + p for s, p, q in zip(specs, positions, quaternions)]
    return np.concatenate(parts) if parts else np.zeros((0, 3))


def _object_record(spec):
    return {
        "shape": spec.shape,
        "size": list(spec.size),
        "mass": spec.mass,
        "friction": spec.friction,
        "restitution": spec.restitution,
        "static": spec.static,
        "subdivision": spec.subdivision,
    }


def to_bytes(traj):
    arrays = {}
    for k, spec in enumerate(traj.specs):
        arrays[f"object/{k}/nodes"] = spec.nodes
        arrays[f"object/{k}/faces"] = spec.faces
    arrays["poses"] = np.concatenate([traj.positions, traj.quaternions], axis=2)
    meta = {
        "seed": int(traj.seed),
        "generator_version": traj.generator_version,
        "objects": [_object_record(s) for s in traj.specs],
        "object_ids": list(traj.object_ids),
        "extra": traj.extra,
    }
    return formats.encode(MAGIC, VERSION, meta, arrays)


def from_bytes(blob):
    _, meta, arrays = formats.decode(blob, MAGIC, VERSION)
    specs = []
    try:
        for k, rec in enumerate(meta["objects"]):
            specs.append(
                ObjectSpec(
                    rec["shape"],
                    tuple(rec["size"]),
                    rec["mass"],
                    rec["friction"],
                    rec["restitution"],
                    rec["static"],
                    rec["subdivision"],
                    arrays[f"object/{k}/nodes"],
                    arrays[f"object/{k}/faces"],
                )
            )
        poses = arrays["poses"]
    except KeyError as exc:
        raise FormatError(f"trajectory file missing {exc}") from None
    if poses.ndim != 3 or poses.shape[2] != 7:
        raise FormatError(f"pose array has shape {poses.shape}, expected (T, K, 7)")
    return Trajectory(
        specs,
        poses[:, :, :3].copy(),
        poses[:, :, 3:].copy(),
        meta["seed"],
        meta["generator_version"],
        meta.get("extra", {}),
        meta.get("object_ids"),
    )


def save(path, traj):
    return formats.write_file(path, to_bytes(traj))


def load(path):
    return from_bytes(formats.read_file(path))
