import dataclasses

import numpy as np
import pytest
from _scenes import EARTH, NO_GRAVITY, head_on_spheres, linear_momentum, sphere_over_floor

from hopnet import trajectory as trajectory_io
from hopnet.config import DatasetConfig
from hopnet.errors import FormatError, NumericalBlowup, PlacementFailure
from hopnet.geometry import hamilton_product, quat_from_rotvec, quat_normalize
from hopnet.sim import (
    ObjectSpec,
    PhysicsConfig,
    SimState,
    generate_scene,
    mechanical_energy,
    min_separation,
    run,
    simulate_trajectory,
    step,
)


def _bounce(specs, state, cfg, max_steps=200):
    """Return (impact-step velocity before contact, velocity after) along z."""
    gravity = np.asarray(cfg.gravity)
    for _ in range(max_steps):
        incoming = state.linear_velocity[1] + gravity
        state = step(state, specs, cfg)
        if state.linear_velocity[1, 2] > 0:
            return incoming, state.linear_velocity[1]
    raise AssertionError("no bounce")


@pytest.mark.parametrize("e", [0.25, 0.5, 0.9, 1.0])
def test_frictionless_bounce_scales_speed_by_restitution(e):
    specs, state = sphere_over_floor(0.3, velocity=(0.0, 0.0, -0.03), restitution=e)
    before, after = _bounce(specs, state, NO_GRAVITY)
    assert abs(np.linalg.norm(after) - e * np.linalg.norm(before)) < 1e-6


def test_dropped_sphere_bounce_under_gravity():
    specs, state = sphere_over_floor(1.0, restitution=0.5)
    before, after = _bounce(specs, state, EARTH)
    assert np.linalg.norm(before) > 0.1
    assert abs(np.linalg.norm(after) - 0.5 * np.linalg.norm(before)) < 1e-6


def test_elastic_head_on_collision_exchanges_velocities():
    specs, state = head_on_spheres(speed=0.03)
    v0 = state.linear_velocity.copy()
    for _ in range(40):
        state = step(state, specs, NO_GRAVITY)
    np.testing.assert_allclose(state.linear_velocity, v0[::-1], atol=1e-6)


def test_momentum_conserved_without_gravity_or_floor():
    specs, state = head_on_spheres(speed=0.04, restitution=0.7, friction=0.5, offset=0.15)
    p0 = linear_momentum(specs, state)
    for _ in range(40):
        state = step(state, specs, NO_GRAVITY)
        assert np.abs(linear_momentum(specs, state) - p0).max() < 1e-9


def test_horizontal_momentum_conserved_while_airborne():
    specs, state = head_on_spheres(speed=0.04, offset=0.1)
    state = SimState(state.positions + [0, 0, 5.0], state.quaternions, state.linear_velocity, state.angular_velocity)
    p0 = linear_momentum(specs, state)
    for _ in range(30):
        state = step(state, specs, EARTH)
        assert np.abs(linear_momentum(specs, state)[:2] - p0[:2]).max() < 1e-9


def test_sphere_at_rest_stays_at_rest():
    specs, state = sphere_over_floor(0.0)
    z0 = state.positions[1, 2]
    for _ in range(100):
        prev = state.positions[1].copy()
        state = step(state, specs, EARTH)
        assert np.abs(state.positions[1] - prev).max() < 1e-6
    assert z0 - state.positions[1, 2] < 1e-3


def test_settled_spheres_never_sink():
    cfg = dataclasses.replace(DatasetConfig(), shapes=("sphere",), min_objects=3, max_objects=3)
    specs, state = generate_scene(4, cfg)
    for _ in range(100):
        state = step(state, specs, PhysicsConfig.from_dataset(cfg))
    for k, spec in enumerate(specs[1:], start=1):
        assert state.positions[k, 2] - spec.size[0] > -1e-3


def test_free_motion_is_uniform():
    spec = ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5)
    state = SimState.at_rest([[0.0, 0.0, 1.0]]).with_velocity([[0.01, -0.02, 0.005]], [[0.03, 0.01, -0.02]])
    pos, quat = state.positions[0].copy(), state.quaternions[0].copy()
    for _ in range(50):
        state = step(state, [spec], NO_GRAVITY)
        pos = pos + np.array([0.01, -0.02, 0.005])
        quat = quat_normalize(hamilton_product(quat_from_rotvec(np.array([0.03, 0.01, -0.02])), quat))
        np.testing.assert_array_equal(state.positions[0], pos)
        np.testing.assert_array_equal(state.quaternions[0], quat)
    np.testing.assert_array_equal(state.angular_velocity[0], [0.03, 0.01, -0.02])


def test_energy_never_increases_on_random_scenes():
    cfg = DatasetConfig()
    physics = PhysicsConfig.from_dataset(cfg)
    for seed in range(6):
        specs, state = generate_scene(seed, cfg)
        for _ in range(40):
            e0 = mechanical_energy(specs, state, cfg.gravity)
            state = step(state, specs, physics)
            assert mechanical_energy(specs, state, cfg.gravity) - e0 <= 1e-6


def test_tumbling_box_in_flight_keeps_energy():
    spec = ObjectSpec.box((0.2, 0.4, 0.6), 1.5, 0.5, 0.5)
    state = SimState.at_rest([[0.0, 0.0, 0.0]]).with_velocity([[0.0, 0.0, 0.0]], [[0.04, 0.02, 0.01]])
    e0 = mechanical_energy([spec], state, (0, 0, 0))
    for _ in range(100):
        state = step(state, [spec], NO_GRAVITY)
    assert abs(mechanical_energy([spec], state, (0, 0, 0)) - e0) < 1e-12


def test_static_floor_never_moves():
    traj = simulate_trajectory(3, DatasetConfig(), steps=40)
    assert np.all(traj.positions[:, 0] == 0.0)
    assert np.all(traj.quaternions[:, 0] == traj.quaternions[0, 0])


def test_blowup_raises():
    specs, state = sphere_over_floor(0.3, velocity=(0.0, 0.0, -0.03))
    with pytest.raises(NumericalBlowup):
        step(state, specs, PhysicsConfig(max_speed=0.01))


def test_generate_scene_is_deterministic():
    cfg = DatasetConfig()
    specs_a, state_a = generate_scene(11, cfg)
    specs_b, state_b = generate_scene(11, cfg)
    assert [s.shape for s in specs_a] == [s.shape for s in specs_b]
    for field in ("positions", "quaternions", "linear_velocity", "angular_velocity"):
        assert getattr(state_a, field).tobytes() == getattr(state_b, field).tobytes()


def test_object_count_range_and_floor_first():
    cfg = dataclasses.replace(DatasetConfig(), min_objects=2, max_objects=2)
    for seed in range(5):
        specs, state = generate_scene(seed, cfg)
        assert len(specs) == 3
        assert specs[0].shape == "floor" and specs[0].static
        assert not any(s.static for s in specs[1:])


def test_spawned_scenes_do_not_interpenetrate():
    cfg = DatasetConfig()
    for seed in range(200):
        specs, state = generate_scene(seed, cfg)
        assert min_separation(specs, state.positions, state.quaternions) >= 0.0


def test_placement_failure():
    cfg = dataclasses.replace(
        DatasetConfig(), min_objects=6, max_objects=6, spawn_half_width=0.01, spawn_height=(0.0, 0.0), placement_attempts=20
    )
    with pytest.raises(PlacementFailure):
        generate_scene(0, cfg)


def test_trajectory_lengths():
    cfg = DatasetConfig()
    assert simulate_trajectory(1, cfg, steps=0).num_frames == 2
    assert simulate_trajectory(1, cfg, steps=5).num_frames == 7


def test_trajectory_is_bitwise_deterministic():
    cfg = DatasetConfig()
    a = trajectory_io.to_bytes(simulate_trajectory(7, cfg, steps=20))
    b = trajectory_io.to_bytes(simulate_trajectory(7, cfg, steps=20))
    assert a == b


def test_run_returns_every_state():
    specs, state = sphere_over_floor(0.3)
    states = run(specs, state, 4, EARTH)
    assert [s.step for s in states] == [0, 1, 2, 3, 4]


def test_trajectory_file_round_trip(tmp_path):
    traj = simulate_trajectory(2, DatasetConfig(), steps=8)
    path = tmp_path / "t.traj"
    digest = trajectory_io.save(path, traj)
    back = trajectory_io.load(path)
    assert trajectory_io.to_bytes(back) == path.read_bytes()
    assert len(digest) == 64
    assert back.positions.tobytes() == traj.positions.tobytes()
    assert back.quaternions.tobytes() == traj.quaternions.tobytes()
    for a, b in zip(traj.specs, back.specs):
        assert a.nodes.tobytes() == b.nodes.tobytes()
        assert a.physical_params == b.physical_params
    np.testing.assert_array_equal(back.nodes_at(5), traj.nodes_at(5))


def test_trajectory_file_rejects_bad_magic_and_future_version():
    blob = bytearray(trajectory_io.to_bytes(simulate_trajectory(2, DatasetConfig(), steps=1)))
    future = blob.copy()
    future[8] = trajectory_io.VERSION + 1
    with pytest.raises(FormatError):
        trajectory_io.from_bytes(bytes(future))
    blob[0:8] = b"NOTATRAJ"
    with pytest.raises(FormatError):
        trajectory_io.from_bytes(bytes(blob))
