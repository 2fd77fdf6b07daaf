import warnings

import numpy as np
import pytest
from _scenes import EARTH

from hopnet import engine, evaluate
from hopnet.errors import EditOnStatic, EmptyDynamicSet, HorizonClamped, LengthMismatch, UnknownObject
from hopnet.geometry import hamilton_product, quat_from_rotvec
from hopnet.model import ModelParams, ModelSpec
from hopnet.sim import ObjectSpec, SimState, run, trajectory_from_states
from hopnet.trajectory import Trajectory

RADIUS = 0.25


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


# -- metrics ---------------------------------------------------------------


def test_rmse_pos_examples():
    assert evaluate.rmse_pos(np.zeros((3, 3)), np.zeros((3, 3))) == 0.0
    pred = np.array([[1.0, 0, 0], [0, 0, 0]])
    assert evaluate.rmse_pos(pred, np.zeros((2, 3))) == pytest.approx(0.70710678, abs=1e-8)


def test_rmse_pos_matches_one_line_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    oracle = np.sqrt(sum(((a[i] - b[i]) ** 2).sum() for i in range(7)) / 7)
    assert abs(evaluate.rmse_pos(a, b) - oracle) < 1e-12


def test_rmse_pos_skips_static_rows():
    pred = np.array([[5.0, 0, 0], [1.0, 0, 0]])
    assert evaluate.rmse_pos(pred, np.zeros((2, 3)), [False, True]) == pytest.approx(1.0)


def test_rmse_pos_translation_invariance():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    shift = rng.normal(size=3)
    assert evaluate.rmse_pos(a + shift, b + shift) == pytest.approx(evaluate.rmse_pos(a, b), abs=1e-12)


def test_rmse_ori_quarter_turn_golden_value():
    q = np.array([[1.0, 0, 0, 0]])
    turned = np.array([[np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]])
    assert evaluate.rmse_ori(turned, q) == pytest.approx(9.48683298, abs=1e-8)
    assert evaluate.rmse_ori(turned, q, mode="squared") == pytest.approx(90.0, abs=1e-9)


def test_rmse_ori_identity_and_double_cover():
    rng = np.random.default_rng(2)
    q = random_quats(rng, 5)
    assert evaluate.rmse_ori(q, q) == 0.0
    assert evaluate.rmse_ori(-q, q) == pytest.approx(0.0, abs=1e-6)
    assert np.all(evaluate.orientation_error_degrees(-q, q) < 1e-6)


def test_rmse_ori_right_multiplication_invariance():
    rng = np.random.default_rng(3)
    a, b = random_quats(rng, 6), random_quats(rng, 6)
    common = random_quats(rng, 1)[0]
    base = evaluate.rmse_ori(a, b)
    moved = evaluate.rmse_ori(hamilton_product(a, common), hamilton_product(b, common))
    assert moved == pytest.approx(base, abs=1e-9)


def test_metric_length_mismatch():
    with pytest.raises(LengthMismatch):
        evaluate.rmse_pos(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(LengthMismatch):
        evaluate.rmse_ori(np.zeros((2, 4)), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        evaluate.rmse_ori(np.ones((1, 4)), np.ones((1, 4)), mode="cubed")


def _pair_of_trajectories(frames=8):
    specs = [ObjectSpec.floor(), ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5), ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5)]
    pos = np.zeros((frames, 3, 3))
    pos[:, 1] = [0.0, 0.0, 0.2]
    pos[:, 2] = [2.0, 0.0, 0.2]
    quat = np.tile([1.0, 0, 0, 0], (frames, 3, 1))
    truth = Trajectory(specs, pos, quat)
    off = pos.copy()
    off[:, 1, 0] += 0.3
    return Trajectory(specs, off, quat), truth


def test_metric_report_schema_and_clamping():
    pred, truth = _pair_of_trajectories(frames=8)
    with pytest.warns(HorizonClamped):
        report = evaluate.metric_report(pred, truth, horizons=(3, 25, 50), dataset_id="d", checkpoint_id="c")
    assert report["schema"] == evaluate.REPORT_SCHEMA
    assert report["available_horizon"] == 6
    assert [row["horizon"] for row in report["horizons"]] == [3, 6]
    row = report["horizons"][0]
    assert row["rmse_pos"] == pytest.approx(0.3 / np.sqrt(2))
    assert [o["object_id"] for o in row["per_object"]] == [1, 2]
    assert report["metric_mode"] == "paper"


def test_metric_report_without_clamping_is_silent():
    pred, truth = _pair_of_trajectories(frames=30)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        report = evaluate.metric_report(pred, truth, horizons=(25,))
    assert report["horizons"][0]["rmse_ori"] == 0.0


# -- collision speeds ------------------------------------------------------


def test_resting_scene_puts_everything_in_lowest_bin():
    specs = [ObjectSpec.floor(), ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5)]
    pos = np.tile([[0.0, 0, 0], [0.0, 0, 0.2]], (5, 1, 1))
    traj = Trajectory(specs, pos, np.tile([1.0, 0, 0, 0], (5, 2, 1)))
    hist = evaluate.collision_speed_histogram([traj], RADIUS)
    assert hist.total > 0
    assert hist.counts[0] == hist.total


def _approaching_spheres(speed=0.2, frames=9, start_gap=1.5):
    specs = [ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5), ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5)]
    pos = np.zeros((frames, 2, 3))
    for t in range(frames):
        gap = start_gap - speed * t
        pos[t, 0] = [-0.2 - gap / 2, 0, 5.0]
        pos[t, 1] = [0.2 + gap / 2, 0, 5.0]
    return Trajectory(specs, pos, np.tile([1.0, 0, 0, 0], (frames, 2, 1)))


def test_closing_speed_lands_in_its_bin_at_first_contact():
    traj = _approaching_spheres(0.2)
    first = next(t for t in range(1, traj.num_frames) if len(evaluate.contact_closing_speeds(traj, t, RADIUS)))
    speeds = evaluate.contact_closing_speeds(traj, first, RADIUS)
    hist = evaluate.Histogram(evaluate.SPEED_BIN_WIDTH, np.zeros(1))
    assert {hist.bin_of(s) for s in speeds} == {20}


def test_histogram_conserves_contact_count():
    traj = _approaching_spheres(0.05, frames=20, start_gap=0.6)
    expected = sum(len(evaluate.contact_closing_speeds(traj, t, RADIUS)) for t in range(1, traj.num_frames))
    hist = evaluate.collision_speed_histogram([traj], RADIUS)
    assert expected > 0 and hist.total == expected
    np.testing.assert_allclose(hist.edges[:3], [0.0, 0.01, 0.02])


def test_no_contacts_gives_empty_histogram():
    traj = _approaching_spheres(0.0, frames=3)
    assert evaluate.collision_speed_histogram([traj], RADIUS).total == 0


# -- counterfactuals -------------------------------------------------------


def _separate_spheres(n=3, steps=12):
    """Spheres dropped far apart so that none ever touches another."""
    specs = [ObjectSpec.floor()] + [ObjectSpec.sphere(0.2, 1.0 + k, 0.5, 0.6) for k in range(n)]
    pos = [[0.0, 0.0, 0.0]] + [[3.0 * k - 3.0, 0.0, 0.2 + 0.1 * k] for k in range(n)]
    state = SimState.at_rest(pos).with_velocity(
        linear=[[0, 0, 0]] + [[0.01 * (k + 1), 0.0, -0.01] for k in range(n)],
        angular=[[0, 0, 0]] + [[0.0, 0.02, 0.01 * k] for k in range(n)],
    )
    return specs, state, trajectory_from_states(specs, run(specs, state, steps, EARTH))


def test_set_velocity_is_exact_in_finite_difference():
    _, _, traj = _separate_spheres()
    edited = evaluate.apply_counterfactual(traj, evaluate.SetVelocity(2, (0.1, -0.2, 0.3)))
    assert edited.num_frames == 2
    assert np.all(edited.positions[1, 2] - edited.positions[0, 2] == edited.positions[1, 2] - (edited.positions[1, 2] - [0.1, -0.2, 0.3]))
    np.testing.assert_allclose(edited.positions[1, 2] - edited.positions[0, 2], [0.1, -0.2, 0.3], atol=1e-15)
    np.testing.assert_array_equal(edited.positions[:, 1], traj.positions[:2, 1])


def test_set_mass_and_pose():
    _, _, traj = _separate_spheres()
    edited = evaluate.apply_counterfactual(traj, evaluate.SetMass(1, 7.5))
    assert edited.specs[1].mass == 7.5 and traj.specs[1].mass == 1.0
    q = quat_from_rotvec(np.array([0.0, 0.0, 0.5]))
    posed = evaluate.apply_counterfactual(traj, evaluate.SetPose(3, (1.0, 2.0, 3.0), tuple(q)))
    np.testing.assert_array_equal(posed.positions[1, 3], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(posed.positions[1, 3] - posed.positions[0, 3], traj.positions[1, 3] - traj.positions[0, 3])
    np.testing.assert_allclose(posed.quaternions[1, 3], q, atol=1e-12)


def test_edit_errors():
    _, _, traj = _separate_spheres()
    with pytest.raises(UnknownObject):
        evaluate.apply_counterfactual(traj, evaluate.RemoveObject(42))
    with pytest.raises(EditOnStatic):
        evaluate.apply_counterfactual(traj, evaluate.RemoveObject(0))
    removed = evaluate.apply_counterfactual(traj, evaluate.RemoveObject(2))
    with pytest.raises(UnknownObject):
        evaluate.apply_counterfactual(removed, evaluate.SetMass(2, 1.0))


def test_disjoint_edits_commute():
    _, _, traj = _separate_spheres()
    e1 = evaluate.RemoveObject(1)
    e2 = evaluate.SetVelocity(3, (0.0, 0.05, 0.0))
    e3 = evaluate.SetMass(2, 3.0)
    a = evaluate.apply_counterfactuals(traj, [e1, e2, e3])
    b = evaluate.apply_counterfactuals(traj, [e3, e2, e1])
    assert a.object_ids == b.object_ids == [0, 2, 3]
    assert a.positions.tobytes() == b.positions.tobytes()
    assert a.quaternions.tobytes() == b.quaternions.tobytes()
    assert [s.mass for s in a.specs] == [s.mass for s in b.specs]


def test_removing_the_only_dynamic_object_fails_cleanly_in_rollout():
    specs = [ObjectSpec.floor(), ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5)]
    traj = trajectory_from_states(specs, run(specs, SimState.at_rest([[0, 0, 0], [0, 0, 0.5]]), 2, EARTH))
    emptied = evaluate.apply_counterfactual(traj, evaluate.RemoveObject(1))
    with pytest.raises(EmptyDynamicSet):
        engine.rollout(emptied, ModelParams.initialize(ModelSpec(hidden=8), 0), horizon=3)


def test_removing_a_non_interacting_object_is_local():
    specs, state, traj = _separate_spheres(steps=12)
    keep = [0, 1, 3]
    reduced = [specs[i] for i in keep]
    sub_state = SimState(
        state.positions[keep], state.quaternions[keep], state.linear_velocity[keep], state.angular_velocity[keep]
    )
    oracle = trajectory_from_states(reduced, run(reduced, sub_state, 12, EARTH))
    assert oracle.positions.tobytes() == traj.positions[:, keep].tobytes()
    assert oracle.quaternions.tobytes() == traj.quaternions[:, keep].tobytes()

    params = ModelParams.initialize(ModelSpec(hidden=8), 4)
    full = engine.rollout(traj, params, horizon=6)
    edited = evaluate.apply_counterfactual(traj, evaluate.RemoveObject(2))
    partial = engine.rollout(edited, params, horizon=6)
    np.testing.assert_allclose(partial.positions, full.positions[:, keep], atol=1e-6)
    np.testing.assert_allclose(partial.quaternions, full.quaternions[:, keep], atol=1e-6)
