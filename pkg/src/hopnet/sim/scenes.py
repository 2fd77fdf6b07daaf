"""Procedural scenes and ground-truth trajectories."""

import numpy as np

from ..errors import PlacementFailure
from ..geometry import IDENTITY, quat_normalize
from .bodies import ObjectSpec, SimState
from .physics import PhysicsConfig, step

PLACEMENT_MARGIN = 1e-3


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def _random_object(rng, cfg):
    shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
    mass = _uniform(rng, cfg.mass)
    friction = _uniform(rng, cfg.friction)
    restitution = _uniform(rng, cfg.restitution)
    if shape == "sphere":
        return ObjectSpec.sphere(_uniform(rng, cfg.sphere_radius), mass, friction, restitution, cfg.sphere_subdivision)
    if shape == "box":
        extents = [_uniform(rng, cfg.box_extent) for _ in range(3)]
        return ObjectSpec.box(extents, mass, friction, restitution, cfg.box_subdivision)
    raise ValueError(f"unknown shape {shape!r}")


def _random_quaternion(rng):
    return quat_normalize(rng.normal(size=4))


def place_objects(rng, specs, cfg):
    """Rejection-sample non-overlapping spawn positions using bounding spheres."""
    positions = []
    for spec in specs:
        r = spec.bounding_radius
        for _ in range(cfg.placement_attempts):
            xy = rng.uniform(-cfg.spawn_half_width, cfg.spawn_half_width, size=2)
            z = r + _uniform(rng, cfg.spawn_height)
            p = np.array([xy[0], xy[1], z])
            if all(np.linalg.norm(p - q) >= r + rq + PLACEMENT_MARGIN for q, rq in positions):
                positions.append((p, r))
                break
        else:
            raise PlacementFailure(f"could not place object {len(positions) + 1} in {cfg.placement_attempts} attempts")
    return np.array([p for p, _ in positions]).reshape(-1, 3)


def generate_scene(seed, cfg):
    """Random floor scene: ``(specs, state)`` with the floor as object 0."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    dynamic = [_random_object(rng, cfg) for _ in range(count)]
    positions = place_objects(rng, dynamic, cfg)
    quats = np.array([IDENTITY if s.shape == "sphere" else _random_quaternion(rng) for s in dynamic]).reshape(-1, 4)

    linear = np.zeros((count, 3))
    angular = np.zeros((count, 3))
    for k in range(count):
        to_center = -positions[k, :2]
        norm = np.linalg.norm(to_center)
        heading = to_center / norm if norm > 0 else np.array([1.0, 0.0])
        linear[k, :2] = heading * _uniform(rng, cfg.speed)
        linear[k, 2] = _uniform(rng, cfg.vertical_speed)
        axis = rng.normal(size=3)
        angular[k] = axis / np.linalg.norm(axis) * rng.uniform(0.0, cfg.angular_speed)

    specs = [ObjectSpec.floor(cfg.floor_friction, cfg.floor_restitution)] + dynamic
    state = SimState(
        np.vstack([np.zeros((1, 3)), positions]),
        np.vstack([IDENTITY[None], quats]),
        np.vstack([np.zeros((1, 3)), linear]),
        np.vstack([np.zeros((1, 3)), angular]),
    )
    return specs, state


def run(specs, state, steps, physics=PhysicsConfig()):
    """Return ``steps + 1`` states: the initial one and every stepped one."""
    states = [state]
    for _ in range(steps):
        states.append(step(states[-1], specs, physics))
    return states


def simulate_trajectory(seed, cfg, steps=None):
    """Ground-truth trajectory with ``steps + 2`` frames (two history frames)."""
    steps = cfg.steps if steps is None else steps
    specs, state = generate_scene(seed, cfg)
    states = run(specs, state, steps + 1, PhysicsConfig.from_dataset(cfg))
    return trajectory_from_states(specs, states, seed)


def trajectory_from_states(specs, states, seed=-1):
    from ..trajectory import Trajectory

    return Trajectory(
        specs,
        np.stack([s.positions for s in states]),
        np.stack([s.quaternions for s in states]),
        seed,
    )
