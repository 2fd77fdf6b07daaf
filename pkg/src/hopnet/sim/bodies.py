"""Rigid-body descriptions and simulator state."""

from dataclasses import dataclass, field, replace

import numpy as np

from .. import meshes
from ..geometry import IDENTITY, quat_rotate, quat_to_matrix

SHAPES = ("floor", "sphere", "box")


@dataclass(frozen=True, eq=False)
class ObjectSpec:
    """One object: primitive shape, physical parameters and canonical mesh.

    ``size`` is ``(radius,)`` for spheres, full side lengths ``(x, y, z)`` for
    boxes and ``(half_extent,)`` for the floor. The canonical mesh is centred on
    the object's origin, which is also its centre of mass.
    """

    shape: str
    size: tuple
    mass: float
    friction: float
    restitution: float
    static: bool
    subdivision: int
    nodes: np.ndarray = field(repr=False)
    faces: np.ndarray = field(repr=False)

    @classmethod
    def sphere(cls, radius, mass, friction, restitution, subdivision=1):
        nodes, faces = meshes.icosphere(radius, subdivision)
        return cls("sphere", (float(radius),), float(mass), float(friction), float(restitution), False, int(subdivision), nodes, faces)

    @classmethod
    def box(cls, extents, mass, friction, restitution, subdivision=1):
        extents = tuple(float(e) for e in extents)
        nodes, faces = meshes.box(extents, subdivision)
        return cls("box", extents, float(mass), float(friction), float(restitution), False, int(subdivision), nodes, faces)

    @classmethod
    def floor(cls, friction=1.0, restitution=1.0, half_extent=meshes.FLOOR_HALF_EXTENT, tiles=meshes.FLOOR_TILES):
        nodes, faces = meshes.floor(half_extent, tiles)
        return cls("floor", (float(half_extent),), 0.0, float(friction), float(restitution), True, int(tiles), nodes, faces)

    @property
    def inverse_mass(self):
        return 0.0 if self.static else 1.0 / self.mass

    @property
    def inertia_diagonal(self):
        """Principal moments of inertia in the body frame."""
        if self.static:
            return np.full(3, np.inf)
        if self.shape == "sphere":
            return np.full(3, 0.4 * self.mass * self.size[0] ** 2)
        x, y, z = self.size
        return self.mass / 12.0 * np.array([y * y + z * z, x * x + z * z, x * x + y * y])

    @property
    def half_extents(self):
        return 0.5 * np.asarray(self.size, dtype=float)

    @property
    def bounding_radius(self):
        if self.shape == "sphere":
            return self.size[0]
        if self.shape == "box":
            return float(np.linalg.norm(self.half_extents))
        return np.inf

    @property
    def physical_params(self):
        return (self.mass, self.friction, self.restitution)

    def corners(self, position, quat):
        """World-space box corners ``(8, 3)``."""
        h = self.half_extents
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return quat_rotate(quat, signs * h) + position

    def posed_nodes(self, position, quat):
        return self.nodes @ quat_to_matrix(quat).T + position


@dataclass(frozen=True, eq=False)
class SimState:
    """Per-object pose and velocity (``m/step``, ``rad/step``)."""

    positions: np.ndarray  # (K, 3)
    quaternions: np.ndarray  # (K, 4) wxyz
    linear_velocity: np.ndarray  # (K, 3)
    angular_velocity: np.ndarray  # (K, 3) world frame
    step: int = 0

    @classmethod
    def at_rest(cls, positions, quaternions=None):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        k = len(positions)
        quats = np.tile(IDENTITY, (k, 1)) if quaternions is None else np.asarray(quaternions, dtype=float)
        return cls(positions.copy(), quats.copy(), np.zeros((k, 3)), np.zeros((k, 3)))

    def with_velocity(self, linear=None, angular=None):
        return replace(
            self,
            linear_velocity=self.linear_velocity if linear is None else np.asarray(linear, dtype=float).copy(),
            angular_velocity=self.angular_velocity if angular is None else np.asarray(angular, dtype=float).copy(),
        )

    def copy(self):
        return SimState(
            self.positions.copy(),
            self.quaternions.copy(),
            self.linear_velocity.copy(),
            self.angular_velocity.copy(),
            self.step,
        )


def world_inverse_inertia(spec, quat):
    if spec.static:
        return np.zeros((3, 3))
    r = quat_to_matrix(quat)
    return (r / spec.inertia_diagonal) @ r.T


def body_energies(specs, state, gravity):
    """Per-object kinetic plus gravitational potential energy (0 if static).

    Under the semi-implicit Euler update free fall loses exactly
    ``m |g|^2 / 2`` of this energy per step, so it never rises without contact.
    """
    gravity = np.asarray(gravity, dtype=float)
    out = np.zeros(len(specs))
    for k, spec in enumerate(specs):
        if spec.static:
            continue
        v = state.linear_velocity[k]
        w_body = quat_to_matrix(state.quaternions[k]).T @ state.angular_velocity[k]
        out[k] = (
            0.5 * spec.mass * float(v @ v)
            + 0.5 * float(w_body @ (spec.inertia_diagonal * w_body))
            - spec.mass * float(gravity @ state.positions[k])
        )
    return out


def mechanical_energy(specs, state, gravity):
    """Total of :func:`body_energies`."""
    return float(body_energies(specs, state, gravity).sum())
