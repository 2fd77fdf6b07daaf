"""Hand-built simulator scenes shared by several test modules."""

import numpy as np

from hopnet.sim import ObjectSpec, PhysicsConfig, SimState

NO_GRAVITY = PhysicsConfig(gravity=(0.0, 0.0, 0.0))
EARTH = PhysicsConfig()


def sphere_over_floor(height, velocity=(0.0, 0.0, 0.0), restitution=1.0, friction=0.0, radius=0.2):
    specs = [
        ObjectSpec.floor(friction=1.0, restitution=1.0),
        ObjectSpec.sphere(radius, 1.0, friction, restitution),
    ]
    state = SimState.at_rest([[0.0, 0.0, 0.0], [0.0, 0.0, radius + height]])
    return specs, state.with_velocity(linear=[[0.0, 0.0, 0.0], velocity])


def head_on_spheres(speed=0.03, restitution=1.0, friction=0.0, offset=0.0):
    specs = [ObjectSpec.sphere(0.2, 1.0, friction, restitution) for _ in range(2)]
    state = SimState.at_rest([[-0.5, 0.0, 0.0], [0.5, offset, 0.0]])
    return specs, state.with_velocity(linear=[[speed, 0.0, 0.0], [-speed, 0.0, 0.0]])


def linear_momentum(specs, state):
    masses = np.array([0.0 if s.static else s.mass for s in specs])
    return (masses[:, None] * state.linear_velocity).sum(axis=0)
